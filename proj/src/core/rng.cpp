#include "core/rng.hpp"

#include <algorithm>
#include <cmath>

#include "core/common.hpp"

namespace bvo {

namespace {

// splitmix64 finalizer; good avalanche, cheap, stable across platforms.
uint64_t splitmix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

uint64_t mix_seed(uint64_t base, uint64_t salt) {
  return splitmix64(base ^ splitmix64(salt));
}

uint64_t mix_seed(uint64_t base, std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the tag bytes
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix_seed(base, h);
}

double draw_normal(Rng& rng, double mean, double stddev) {
  std::normal_distribution<double> d(mean, stddev);
  return d(rng);
}

double draw_uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

void fill_normal(Rng& rng, std::vector<double>& out, double mean, double stddev) {
  std::normal_distribution<double> d(mean, stddev);
  for (auto& v : out) v = d(rng);
}

double draw_gamma(Rng& rng, double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0))
    fail(Err::Domain, "gamma draw requires shape > 0 and rate > 0, got shape=" +
                          std::to_string(shape) + " rate=" + std::to_string(rate));
  // Marsaglia-Tsang (2000). For shape < 1 sample at shape+1 and scale by
  // U^{1/shape}.
  double boost = 1.0;
  double a = shape;
  if (a < 1.0) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    double u = u01(rng);
    while (u <= 0.0) u = u01(rng);
    boost = std::pow(u, 1.0 / a);
    a += 1.0;
  }
  const double d = a - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (;;) {
    double x = n01(rng);
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = u01(rng);
    double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return boost * d * v / rate;
    if (u > 0.0 && std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v)))
      return boost * d * v / rate;
  }
}

std::vector<size_t> seeded_permutation(size_t n, uint64_t seed) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  // Fisher-Yates; std::shuffle's draw pattern is unspecified, this one is ours.
  for (size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<size_t> d(0, i - 1);
    std::swap(idx[i - 1], idx[d(rng)]);
  }
  return idx;
}

}  // namespace bvo
