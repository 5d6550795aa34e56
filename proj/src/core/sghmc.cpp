#include "core/sghmc.hpp"

#include <cmath>

#include "core/common.hpp"

namespace bvo {

void SghmcConfig::validate() const {
  if (!(step_size > 0.0)) fail(Err::Config, "step_size must be positive");
  if (!(momentum_decay > 0.0 && momentum_decay < 1.0))
    fail(Err::Config, "momentum_decay must lie in (0,1), got " + std::to_string(momentum_decay));
  if (!(ema_rho > 0.0 && ema_rho < 1.0))
    fail(Err::Config, "ema_rho must lie in (0,1), got " + std::to_string(ema_rho));
  if (burn_in < 0) fail(Err::Config, "burn_in must be >= 0, got " + std::to_string(burn_in));
  if (thinning < 1) fail(Err::Config, "thinning must be >= 1, got " + std::to_string(thinning));
}

void SghmcState::init(std::vector<double> position0) {
  position = std::move(position0);
  momentum.assign(position.size(), 0.0);
  v_hat.assign(position.size(), 1.0);
  steps = 0;
  adapting = true;
}

void sghmc_step(SghmcState& st, std::span<const double> grad, const SghmcConfig& cfg,
                std::span<const double> noise) {
  const size_t n = st.position.size();
  if (grad.size() != n || noise.size() != n)
    fail(Err::Dimension, "sghmc_step: position/grad/noise sizes disagree: " + std::to_string(n) +
                             "/" + std::to_string(grad.size()) + "/" +
                             std::to_string(noise.size()));
  const double eps = cfg.step_size, alpha = cfg.momentum_decay;
  if (st.adapting) {
    // first observation seeds the EMA so early preconditioning is sane
    if (st.steps == 0) {
      for (size_t i = 0; i < n; ++i) st.v_hat[i] = grad[i] * grad[i];
    } else {
      for (size_t i = 0; i < n; ++i)
        st.v_hat[i] = cfg.ema_rho * st.v_hat[i] + (1.0 - cfg.ema_rho) * grad[i] * grad[i];
    }
  }
  for (size_t i = 0; i < n; ++i) {
    double precond = 1.0 / (std::sqrt(st.v_hat[i]) + cfg.v_floor);
    double noise_std = std::sqrt(2.0 * alpha * eps * precond);
    st.momentum[i] =
        (1.0 - alpha) * st.momentum[i] - eps * precond * grad[i] + noise_std * noise[i];
    st.position[i] += st.momentum[i];
  }
  ++st.steps;
}

void sghmc_step(SghmcState& st, std::span<const double> grad, const SghmcConfig& cfg, Rng& rng) {
  std::vector<double> noise(st.position.size());
  fill_normal(rng, noise);
  sghmc_step(st, grad, cfg, noise);
}

std::vector<double> potential_grad(std::span<const double> grad_sum_loglik, size_t dataset_size,
                                   size_t batch_size, std::span<const double> position,
                                   double lambda) {
  if (grad_sum_loglik.size() != position.size())
    fail(Err::Dimension, "potential_grad: gradient size " +
                             std::to_string(grad_sum_loglik.size()) + " vs position size " +
                             std::to_string(position.size()));
  if (batch_size == 0 || dataset_size == 0)
    fail(Err::InvalidArgument, "potential_grad: empty batch or dataset");
  if (!(lambda >= 0.0)) fail(Err::Domain, "negative precision " + std::to_string(lambda));
  const double scale = static_cast<double>(dataset_size) / static_cast<double>(batch_size);
  std::vector<double> g(position.size());
  for (size_t i = 0; i < g.size(); ++i)
    g[i] = -scale * grad_sum_loglik[i] + lambda * position[i];
  return g;
}

bool retain_at_epoch(long epoch, long burn_in, long thinning) {
  if (epoch < 0 || burn_in < 0 || thinning < 1)
    fail(Err::InvalidArgument, "retain_at_epoch(" + std::to_string(epoch) + ", " +
                                   std::to_string(burn_in) + ", " + std::to_string(thinning) +
                                   ")");
  return epoch >= burn_in && (epoch - burn_in) % thinning == 0;
}

long retained_count(long total_epochs, long burn_in, long thinning) {
  if (total_epochs < burn_in)
    fail(Err::InvalidArgument, "total epochs " + std::to_string(total_epochs) +
                                   " below burn-in " + std::to_string(burn_in));
  if (burn_in < 0 || thinning < 1)
    fail(Err::InvalidArgument, "invalid burn_in/thinning");
  return (total_epochs - burn_in) / thinning + 1;
}

double resample_precision(const GammaPrior& prior, std::span<const double> coeffs, Rng& rng) {
  if (!(prior.alpha > 0.0) || !(prior.beta > 0.0))
    fail(Err::Domain, "gamma prior requires alpha, beta > 0");
  double ss = 0.0;
  for (double c : coeffs) ss += c * c;
  double shape = prior.alpha + 0.5 * static_cast<double>(coeffs.size());
  double rate = prior.beta + 0.5 * ss;
  return draw_gamma(rng, shape, rate);
}

void check_divergence(const SghmcState& st, const SghmcConfig& cfg, const std::string& what) {
  double ss = 0.0;
  for (double p : st.position) ss += p * p;
  double norm = std::sqrt(ss);
  if (!(norm <= cfg.divergence_norm) || !std::isfinite(norm))
    fail(Err::Divergence,
         what + " diverged at step " + std::to_string(st.steps) + ": position norm " +
             std::to_string(norm) + " exceeds " + std::to_string(cfg.divergence_norm) +
             "; lower step_size or raise momentum_decay");
}

}  // namespace bvo
