#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/rng.hpp"

namespace bvo {

// Gamma(alpha, beta) prior over a weight-precision lambda.
struct GammaPrior {
  double alpha = 1.0;
  double beta = 1.0;  // rate
};

struct SghmcConfig {
  double step_size = 1e-3;       // epsilon
  double momentum_decay = 0.05;  // alpha: friction per step and noise scale
  double ema_rho = 0.99;         // squared-gradient EMA during adaptation
  double v_floor = 1e-8;         // added to sqrt(v_hat) before inverting
  double divergence_norm = 1e8;  // position norm that counts as diverged
  long burn_in = 1;              // epochs discarded before retention (B >= 0)
  long thinning = 1;             // epochs between retained snapshots (D >= 1)
  void validate() const;
};

// Per-chain sampler state. The squared-gradient preconditioner adapts while
// `adapting` is set (burn-in) and is frozen afterwards.
struct SghmcState {
  std::vector<double> position;
  std::vector<double> momentum;  // zeros at init
  std::vector<double> v_hat;     // ones at init (identity preconditioner)
  long steps = 0;
  bool adapting = true;

  void init(std::vector<double> position0);
};

// One scale-adapted update:
//   v_hat <- ema(v_hat, grad^2)                     (while adapting)
//   m <- (1-alpha) m - eps*precond*grad + N(0, 2*alpha*eps*precond)
//   position <- position + m
// with precond = 1/(sqrt(v_hat)+v_floor) elementwise. `noise` supplies one
// standard-normal draw per coordinate, so tests can zero it.
void sghmc_step(SghmcState& st, std::span<const double> grad, const SghmcConfig& cfg,
                std::span<const double> noise);
void sghmc_step(SghmcState& st, std::span<const double> grad, const SghmcConfig& cfg, Rng& rng);

// Stochastic gradient of the potential U = -log posterior, built from the
// gradient of the summed minibatch log-likelihood:
//   grad U = -(N/|B|) * grad_sum_loglik + lambda * position.
// Averaged over a disjoint partition weighted by batch size it reproduces the
// full-data gradient exactly.
std::vector<double> potential_grad(std::span<const double> grad_sum_loglik, size_t dataset_size,
                                   size_t batch_size, std::span<const double> position,
                                   double lambda);

// Epochs are 1-based; epoch 0 means the untrained initial position and is
// retained only when burn_in == 0 (which keeps the count identity exact).
bool retain_at_epoch(long epoch, long burn_in, long thinning);
// Number of snapshots retained after total_epochs: (T - B)/D + 1.
long retained_count(long total_epochs, long burn_in, long thinning);

// Gibbs update of a precision under its conjugate Gamma prior:
// lambda ~ Gamma(alpha + n/2, beta + ||coeffs||^2 / 2).
double resample_precision(const GammaPrior& prior, std::span<const double> coeffs, Rng& rng);

// Err::Divergence naming `what`, the step count and the norm when the chain
// has left the stable region.
void check_divergence(const SghmcState& st, const SghmcConfig& cfg, const std::string& what);

}  // namespace bvo
