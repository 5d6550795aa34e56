#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "core/common.hpp"

namespace bvo {

// Standard Adam on a flat parameter vector; state grows lazily on first step.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  std::vector<double> m, v;
  long t = 0;

  void step(std::vector<double>& params, std::span<const double> grad) {
    if (grad.size() != params.size())
      fail(Err::Dimension, "adam: gradient size " + std::to_string(grad.size()) +
                               " vs parameter size " + std::to_string(params.size()));
    if (m.empty()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
};

}  // namespace bvo
