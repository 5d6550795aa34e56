#include "core/bvae.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <json.hpp>
#include <sstream>

#include "core/common.hpp"
#include "core/fetch.hpp"
#include "core/optim.hpp"
#include "core/sha256.hpp"

namespace bvo {

using nlohmann::json;

void BvaeTrainConfig::validate() const {
  arch.validate();
  sghmc.validate();
  if (variant != 1 && variant != 2)
    fail(Err::Config, "variant must be 1 or 2, got " + std::to_string(variant));
  if (epochs < 1) fail(Err::Config, "epochs must be >= 1");
  if (batch_size < 1) fail(Err::Config, "batch_size must be >= 1");
  if (n_mc < 1) fail(Err::Config, "n_mc must be >= 1");
  if (!(encoder_lr > 0.0)) fail(Err::Config, "encoder_lr must be positive");
  if (epochs < sghmc.burn_in)
    fail(Err::Config, "epochs " + std::to_string(epochs) + " below burn_in " +
                          std::to_string(sghmc.burn_in));
  long m = retained_count(epochs, sghmc.burn_in, sghmc.thinning);
  if (m < 2)
    fail(Err::Config, "schedule retains " + std::to_string(m) +
                          " snapshots; an ensemble needs at least 2");
}

const std::vector<double>& PosteriorEnsemble::phi_for(size_t member) const {
  if (member >= thetas.size())
    fail(Err::InvalidArgument, "member " + std::to_string(member) + " of " +
                                   std::to_string(thetas.size()));
  return phis.size() == 1 ? phis[0] : phis[member];
}

VaeParams PosteriorEnsemble::member_params(size_t member) const {
  VaeParams p;
  p.arch = arch;
  p.phi = phi_for(member);
  p.theta = thetas[member];
  return p;
}

void PosteriorEnsemble::validate() const {
  arch.validate();
  if (variant != 0 && variant != 1 && variant != 2)
    fail(Err::Format, "ensemble variant " + std::to_string(variant));
  if (variant == 0) {
    if (thetas.size() != 1 || phis.size() != 1)
      fail(Err::Format, "variant-0 container must hold exactly one model");
  } else {
    if (thetas.size() < 2)
      fail(Err::Format,
           "ensemble has " + std::to_string(thetas.size()) + " members; need at least 2");
    if (phis.size() != 1 && phis.size() != thetas.size())
      fail(Err::Format, "ensemble holds " + std::to_string(phis.size()) + " encoders for " +
                            std::to_string(thetas.size()) + " decoders");
    if (variant == 2 && phis.size() != thetas.size())
      fail(Err::Format, "variant 2 requires one encoder per decoder snapshot");
  }
  for (const auto& t : thetas)
    if (t.size() != arch.decoder_params())
      fail(Err::Format, "decoder snapshot with " + std::to_string(t.size()) +
                            " values, arch expects " + std::to_string(arch.decoder_params()));
  for (const auto& f : phis)
    if (f.size() != arch.encoder_params())
      fail(Err::Format, "encoder snapshot with " + std::to_string(f.size()) +
                            " values, arch expects " + std::to_string(arch.encoder_params()));
}

// ---- training ------------------------------------------------------------------

namespace {

struct BatchGrads {
  double elbo = 0.0;
  std::vector<double> g_phi, g_theta;  // gradients of the summed batch bound
};

BatchGrads batch_elbo_grads(const Arch& arch, const std::vector<double>& phi,
                            const std::vector<double>& theta, const std::vector<double>& xb,
                            int rows, int n_mc, Rng& eps_rng) {
  Tape tape;
  FlatParams fphi(tape, phi, true), ftheta(tape, theta, true);
  Tensor x = tape.constant(xb, {rows, arch.d_x});
  Tensor bound = elbo_batch_sum(tape, arch, fphi, ftheta, x, n_mc, eps_rng);
  fphi.finish();
  ftheta.finish();
  tape.backward(bound);
  BatchGrads out;
  out.elbo = bound.value();
  out.g_phi = fphi.collect_grad();
  out.g_theta = ftheta.collect_grad();
  return out;
}

double l2_norm(std::span<const double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss);
}

double squared_norm(std::span<const double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return ss;
}

}  // namespace

PosteriorEnsemble train_bvae(const ImageDataset& train, const BvaeTrainConfig& cfg,
                             std::vector<EpochDiagnostics>* diagnostics) {
  cfg.validate();
  train.validate();
  if (train.count() == 0) fail(Err::InvalidArgument, "training dataset is empty");
  if (train.dim() != cfg.arch.d_x)
    fail(Err::Dimension, "dataset rows have " + std::to_string(train.dim()) +
                             " values, arch expects " + std::to_string(cfg.arch.d_x));

  const size_t N = train.count();
  const long B = cfg.sghmc.burn_in, D = cfg.sghmc.thinning;

  VaeParams init = init_vae_params(cfg.arch, mix_seed(cfg.seed, "init"));
  SghmcState theta_chain;
  theta_chain.init(init.theta);
  SghmcState phi_chain;  // variant 2 only
  std::vector<double> phi = init.phi;
  if (cfg.variant == 2) phi_chain.init(init.phi);
  if (B == 0) {  // no adaptation window: keep the identity preconditioner
    theta_chain.adapting = false;
    phi_chain.adapting = false;
  }
  Adam adam;
  adam.lr = cfg.encoder_lr;

  double lambda_theta = cfg.theta_prior.alpha / cfg.theta_prior.beta;
  double lambda_phi = cfg.phi_prior.alpha / cfg.phi_prior.beta;

  Rng eps_rng(mix_seed(cfg.seed, "eps"));
  Rng theta_noise(mix_seed(cfg.seed, "sghmc/theta"));
  Rng phi_noise(mix_seed(cfg.seed, "sghmc/phi"));
  Rng gibbs_rng(mix_seed(cfg.seed, "gibbs"));

  PosteriorEnsemble ens;
  ens.arch = cfg.arch;
  ens.variant = cfg.variant;
  ens.seed = cfg.seed;
  ens.dataset_digest = train.digest();

  auto snapshot = [&] {
    ens.thetas.push_back(theta_chain.position);
    if (cfg.variant == 2) ens.phis.push_back(phi_chain.position);
  };
  if (retain_at_epoch(0, B, D)) snapshot();  // B == 0 retains the initial draw

  for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto batches = minibatch_indices(N, static_cast<size_t>(cfg.batch_size),
                                     mix_seed(mix_seed(cfg.seed, "batches"),
                                              static_cast<uint64_t>(epoch)));
    double potential_sum = 0.0, grad_norm_sum = 0.0;
    for (const auto& idx : batches) {
      const std::vector<double>& theta =
          theta_chain.position;  // current decoder sample
      const std::vector<double>& phi_cur = cfg.variant == 2 ? phi_chain.position : phi;
      auto xb = train.rows(idx);
      auto grads = batch_elbo_grads(cfg.arch, phi_cur, theta, xb,
                                    static_cast<int>(idx.size()), cfg.n_mc, eps_rng);

      auto grad_u_theta =
          potential_grad(grads.g_theta, N, idx.size(), theta_chain.position, lambda_theta);
      double scale = static_cast<double>(N) / static_cast<double>(idx.size());
      double u_est = -scale * grads.elbo + 0.5 * lambda_theta * squared_norm(theta);
      grad_norm_sum += l2_norm(grad_u_theta);
      sghmc_step(theta_chain, grad_u_theta, cfg.sghmc, theta_noise);
      check_divergence(theta_chain, cfg.sghmc, "decoder chain");

      if (cfg.variant == 2) {
        auto grad_u_phi =
            potential_grad(grads.g_phi, N, idx.size(), phi_chain.position, lambda_phi);
        u_est += 0.5 * lambda_phi * squared_norm(phi_chain.position);
        sghmc_step(phi_chain, grad_u_phi, cfg.sghmc, phi_noise);
        check_divergence(phi_chain, cfg.sghmc, "encoder chain");
      } else {
        // MAP objective per example: -(1/b) sum grad ELBO + (lambda/N) phi
        std::vector<double> g(phi.size());
        const double inv_b = 1.0 / static_cast<double>(idx.size());
        for (size_t i = 0; i < g.size(); ++i)
          g[i] = -inv_b * grads.g_phi[i] + lambda_phi / static_cast<double>(N) * phi[i];
        adam.step(phi, g);
      }
      potential_sum += u_est;
    }

    if (epoch == B) {  // adaptation window closes with the burn-in
      theta_chain.adapting = false;
      phi_chain.adapting = false;
    }

    lambda_theta = resample_precision(cfg.theta_prior, theta_chain.position, gibbs_rng);
    lambda_phi = resample_precision(cfg.phi_prior,
                                    cfg.variant == 2 ? phi_chain.position : phi, gibbs_rng);

    bool retained = retain_at_epoch(epoch, B, D);
    if (retained) snapshot();
    if (diagnostics)
      diagnostics->push_back({epoch, potential_sum / static_cast<double>(batches.size()),
                              grad_norm_sum / static_cast<double>(batches.size()), lambda_theta,
                              retained});
  }

  if (cfg.variant == 1) ens.phis.push_back(phi);
  if (static_cast<long>(ens.thetas.size()) != retained_count(cfg.epochs, B, D))
    fail(Err::Internal, "retained " + std::to_string(ens.thetas.size()) +
                            " snapshots, schedule promised " +
                            std::to_string(retained_count(cfg.epochs, B, D)));
  ens.validate();
  return ens;
}

// ---- ensemble scoring -------------------------------------------------------------

std::vector<double> ensemble_log_liks(const PosteriorEnsemble& ens, std::span<const double> x,
                                      int K, uint64_t seed) {
  ens.validate();
  if (K < 1) fail(Err::InvalidArgument, "K must be >= 1, got " + std::to_string(K));
  if (static_cast<int>(x.size()) != ens.arch.d_x)
    fail(Err::Dimension, "input has " + std::to_string(x.size()) + " values, arch expects " +
                             std::to_string(ens.arch.d_x));
  const int d_z = ens.arch.d_z, d_x = ens.arch.d_x;
  const int M = static_cast<int>(ens.members());

  // one latent noise matrix per input, shared across members
  std::vector<double> eps(static_cast<size_t>(K) * d_z);
  {
    Rng eps_rng(mix_seed(seed, "iw_eps"));
    fill_normal(eps_rng, eps);
  }
  std::vector<double> x_rep(static_cast<size_t>(K) * d_x);
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < d_x; ++j) x_rep[static_cast<size_t>(k) * d_x + j] = x[static_cast<size_t>(j)];

  std::vector<double> out(static_cast<size_t>(M));
  const bool shared_encoder = ens.phis.size() == 1;

  Tape shared_tape;
  Tensor sz, s_logq, s_logp;  // shared-encoder intermediates
  if (shared_encoder) {
    FlatParams phi(shared_tape, ens.phis[0], false);
    Tensor xt = shared_tape.constant(x, {1, d_x});
    auto [mean, lv] = encode(shared_tape, ens.arch, phi, xt);
    phi.finish();
    std::vector<double> mu_rep(static_cast<size_t>(K) * d_z), lv_rep(mu_rep.size());
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < d_z; ++j) {
        mu_rep[static_cast<size_t>(k) * d_z + j] = mean.data()[j];
        lv_rep[static_cast<size_t>(k) * d_z + j] = lv.data()[j];
      }
    Tensor mu = shared_tape.constant(std::move(mu_rep), {K, d_z});
    Tensor lvr = shared_tape.constant(std::move(lv_rep), {K, d_z});
    Tensor epst = shared_tape.constant(eps, {K, d_z});
    sz = shared_tape.gaussian_reparam(mu, lvr, epst);
    s_logq = shared_tape.gaussian_diag_ll(sz, mu, lvr);
    Tensor zeros =
        shared_tape.constant(std::vector<double>(static_cast<size_t>(K) * d_z, 0.0), {K, d_z});
    s_logp = shared_tape.gaussian_diag_ll(sz, zeros, zeros);
  }

  for (int m = 0; m < M; ++m) {
    Tape tape;
    Tensor z, log_q, log_p;
    if (shared_encoder) {
      z = tape.constant(sz.data(), {K, d_z});
      log_q = tape.constant(s_logq.data(), {K});
      log_p = tape.constant(s_logp.data(), {K});
    } else {
      FlatParams phi(tape, ens.phis[static_cast<size_t>(m)], false);
      Tensor xt = tape.constant(x, {1, d_x});
      auto [mean, lv] = encode(tape, ens.arch, phi, xt);
      phi.finish();
      std::vector<double> mu_rep(static_cast<size_t>(K) * d_z), lv_rep(mu_rep.size());
      for (int k = 0; k < K; ++k)
        for (int j = 0; j < d_z; ++j) {
          mu_rep[static_cast<size_t>(k) * d_z + j] = mean.data()[j];
          lv_rep[static_cast<size_t>(k) * d_z + j] = lv.data()[j];
        }
      Tensor mu = tape.constant(std::move(mu_rep), {K, d_z});
      Tensor lvr = tape.constant(std::move(lv_rep), {K, d_z});
      Tensor epst = tape.constant(eps, {K, d_z});
      z = tape.gaussian_reparam(mu, lvr, epst);
      log_q = tape.gaussian_diag_ll(z, mu, lvr);
      Tensor zeros =
          tape.constant(std::vector<double>(static_cast<size_t>(K) * d_z, 0.0), {K, d_z});
      log_p = tape.gaussian_diag_ll(z, zeros, zeros);
    }
    FlatParams theta(tape, ens.thetas[static_cast<size_t>(m)], false);
    Tensor dec = decode(tape, ens.arch, theta, z);
    theta.finish();
    Tensor xr = tape.constant(x_rep, {K, d_x});
    Tensor ll = decoder_log_lik(tape, ens.arch, dec, xr);
    Tensor summand = tape.add(ll, tape.sub(log_p, log_q));
    double v = tape.logsumexp(summand).value() - std::log(static_cast<double>(K));
    if (!std::isfinite(v))
      fail(Err::Numeric, "member " + std::to_string(m) + " produced a non-finite log-likelihood");
    out[static_cast<size_t>(m)] = v;
  }
  return out;
}

// ---- serialization ------------------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'B', 'V', 'O', 'E'};
constexpr uint32_t kVersion = 1;

void push_raw(std::vector<unsigned char>& out, const void* p, size_t n) {
  const auto* b = static_cast<const unsigned char*>(p);
  out.insert(out.end(), b, b + n);
}
}  // namespace

std::vector<unsigned char> PosteriorEnsemble::serialize() const {
  validate();
  json header;
  header["arch"] = {{"d_x", arch.d_x},
                    {"hidden", arch.hidden},
                    {"d_z", arch.d_z},
                    {"likelihood",
                     arch.likelihood == Likelihood::BernoulliLogits ? "bernoulli" : "gaussian"}};
  header["variant"] = variant;
  header["decoders"] = thetas.size();
  header["encoders"] = phis.size();
  header["seed"] = seed;
  header["dataset_digest"] = dataset_digest;
  std::string hs = header.dump();

  std::vector<unsigned char> out;
  push_raw(out, kMagic, 4);
  push_raw(out, &kVersion, 4);
  uint64_t hlen = hs.size();
  push_raw(out, &hlen, 8);
  push_raw(out, hs.data(), hs.size());
  for (const auto& t : thetas) push_raw(out, t.data(), t.size() * sizeof(double));
  for (const auto& f : phis) push_raw(out, f.data(), f.size() * sizeof(double));
  return out;
}

std::string PosteriorEnsemble::digest() const { return sha256_hex(serialize()); }

std::vector<double> sample_mixture_decode(const PosteriorEnsemble& ens,
                                          std::span<const double> z_star, Rng& rng) {
  ens.validate();
  std::uniform_int_distribution<size_t> pick(0, ens.members() - 1);
  auto out = decode_values(ens.member_params(pick(rng)), z_star);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& v : out) {
    if (ens.arch.likelihood == Likelihood::BernoulliLogits)
      v = unit(rng) < stable_sigmoid(v) ? 1.0 : 0.0;
    else
      v += gauss(rng);
  }
  return out;
}

void save_ensemble(const PosteriorEnsemble& ens, const std::string& path) {
  write_file_bytes(path, ens.serialize());
}

PosteriorEnsemble load_ensemble(const std::string& path) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() < 16) fail(Err::Length, "ensemble file " + path + " is truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(Err::Format, "ensemble file " + path + " lacks the BVOE magic");
  uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kVersion)
    fail(Err::Format, "ensemble file " + path + " has version " + std::to_string(version) +
                          "; this build reads version " + std::to_string(kVersion));
  uint64_t hlen;
  std::memcpy(&hlen, bytes.data() + 8, 8);
  if (16 + hlen > bytes.size()) fail(Err::Length, "ensemble header overruns file " + path);
  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(hlen));
  } catch (const json::exception& e) {
    fail(Err::Format, "ensemble header is not valid JSON: " + std::string(e.what()));
  }

  PosteriorEnsemble ens;
  try {
    ens.arch.d_x = header.at("arch").at("d_x").get<int>();
    ens.arch.hidden = header.at("arch").at("hidden").get<std::vector<int>>();
    ens.arch.d_z = header.at("arch").at("d_z").get<int>();
    std::string lk = header.at("arch").at("likelihood").get<std::string>();
    if (lk == "bernoulli")
      ens.arch.likelihood = Likelihood::BernoulliLogits;
    else if (lk == "gaussian")
      ens.arch.likelihood = Likelihood::GaussianUnitVar;
    else
      fail(Err::Format, "unknown likelihood '" + lk + "' in " + path);
    ens.variant = header.at("variant").get<int>();
    ens.seed = header.at("seed").get<uint64_t>();
    ens.dataset_digest = header.value("dataset_digest", "");
    size_t n_dec = header.at("decoders").get<size_t>();
    size_t n_enc = header.at("encoders").get<size_t>();
    size_t dp = ens.arch.decoder_params(), ep = ens.arch.encoder_params();
    size_t need = 16 + hlen + (n_dec * dp + n_enc * ep) * sizeof(double);
    if (bytes.size() != need)
      fail(Err::Length, "ensemble file " + path + ": expected " + std::to_string(need) +
                            " bytes, got " + std::to_string(bytes.size()));
    const unsigned char* p = bytes.data() + 16 + hlen;
    ens.thetas.assign(n_dec, std::vector<double>(dp));
    for (auto& t : ens.thetas) {
      std::memcpy(t.data(), p, dp * sizeof(double));
      p += dp * sizeof(double);
    }
    ens.phis.assign(n_enc, std::vector<double>(ep));
    for (auto& f : ens.phis) {
      std::memcpy(f.data(), p, ep * sizeof(double));
      p += ep * sizeof(double);
    }
  } catch (const json::exception& e) {
    fail(Err::Format, "ensemble header missing fields: " + std::string(e.what()));
  }
  ens.validate();
  return ens;
}

void write_diagnostics_csv(const std::string& path, const std::vector<EpochDiagnostics>& rows,
                           const std::string& manifest_id) {
  std::ostringstream out;
  if (!manifest_id.empty()) out << "# manifest_id=" << manifest_id << "\n";
  out << "epoch,potential,grad_norm,lambda,retained\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%d\n", r.epoch, r.potential,
                  r.grad_norm, r.lambda, r.retained ? 1 : 0);
    out << buf;
  }
  write_text_file(path, out.str());
}

// ---- plain point-estimate model ---------------------------------------------------------

VaeParams train_plain_vae(const ImageDataset& train, const PlainVaeTrainConfig& cfg) {
  cfg.arch.validate();
  train.validate();
  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.n_mc < 1 || !(cfg.lr > 0.0))
    fail(Err::Config, "plain trainer requires positive epochs, batch_size, n_mc and lr");
  if (train.dim() != cfg.arch.d_x)
    fail(Err::Dimension, "dataset rows have " + std::to_string(train.dim()) +
                             " values, arch expects " + std::to_string(cfg.arch.d_x));
  const size_t N = train.count();
  VaeParams p = init_vae_params(cfg.arch, mix_seed(cfg.seed, "init"));
  Adam opt_phi, opt_theta;
  opt_phi.lr = opt_theta.lr = cfg.lr;
  Rng eps_rng(mix_seed(cfg.seed, "eps"));
  for (long epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto batches = minibatch_indices(N, static_cast<size_t>(cfg.batch_size),
                                     mix_seed(mix_seed(cfg.seed, "batches"),
                                              static_cast<uint64_t>(epoch)));
    for (const auto& idx : batches) {
      auto xb = train.rows(idx);
      auto grads = batch_elbo_grads(cfg.arch, p.phi, p.theta, xb,
                                    static_cast<int>(idx.size()), cfg.n_mc, eps_rng);
      const double inv_b = 1.0 / static_cast<double>(idx.size());
      std::vector<double> g(p.phi.size());
      for (size_t i = 0; i < g.size(); ++i)
        g[i] = -inv_b * grads.g_phi[i] + cfg.weight_decay / static_cast<double>(N) * p.phi[i];
      opt_phi.step(p.phi, g);
      g.resize(p.theta.size());
      for (size_t i = 0; i < g.size(); ++i)
        g[i] = -inv_b * grads.g_theta[i] + cfg.weight_decay / static_cast<double>(N) * p.theta[i];
      opt_theta.step(p.theta, g);
    }
  }
  return p;
}

PosteriorEnsemble wrap_plain_vae(const VaeParams& p) {
  p.validate();
  PosteriorEnsemble ens;
  ens.arch = p.arch;
  ens.variant = 0;
  ens.thetas = {p.theta};
  ens.phis = {p.phi};
  return ens;
}

VaeParams unwrap_plain_vae(const PosteriorEnsemble& ens) {
  if (ens.variant != 0 || ens.thetas.size() != 1 || ens.phis.size() != 1)
    fail(Err::Format, "not a plain single-model container");
  VaeParams p;
  p.arch = ens.arch;
  p.phi = ens.phis[0];
  p.theta = ens.thetas[0];
  p.validate();
  return p;
}

}  // namespace bvo
