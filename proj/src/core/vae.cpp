#include "core/vae.hpp"

#include <cmath>
#include <string>

#include "core/common.hpp"

namespace bvo {

namespace {

size_t mlp_param_count(int d_in, const std::vector<int>& hidden, int d_out) {
  size_t n = 0;
  int prev = d_in;
  for (int h : hidden) {
    n += static_cast<size_t>(prev) * h + h;
    prev = h;
  }
  n += static_cast<size_t>(prev) * d_out + d_out;
  return n;
}

}  // namespace

void Arch::validate() const {
  if (d_x <= 0 || d_z <= 0)
    fail(Err::InvalidArgument,
         "arch requires positive dims, got d_x=" + std::to_string(d_x) +
             " d_z=" + std::to_string(d_z));
  for (int h : hidden)
    if (h <= 0) fail(Err::InvalidArgument, "non-positive hidden width " + std::to_string(h));
}

size_t Arch::encoder_params() const {
  // shared trunk plus two heads from the last trunk width
  size_t n = 0;
  int prev = d_x;
  for (int h : hidden) {
    n += static_cast<size_t>(prev) * h + h;
    prev = h;
  }
  n += 2 * (static_cast<size_t>(prev) * d_z + d_z);
  return n;
}

size_t Arch::decoder_params() const {
  std::vector<int> rev(hidden.rbegin(), hidden.rend());
  return mlp_param_count(d_z, rev, d_x);
}

void VaeParams::validate() const {
  arch.validate();
  if (phi.size() != arch.encoder_params())
    fail(Err::Dimension, "encoder expects " + std::to_string(arch.encoder_params()) +
                             " parameters, got " + std::to_string(phi.size()));
  if (theta.size() != arch.decoder_params())
    fail(Err::Dimension, "decoder expects " + std::to_string(arch.decoder_params()) +
                             " parameters, got " + std::to_string(theta.size()));
}

std::vector<double> init_mlp_params(int d_in, const std::vector<int>& hidden, int d_out,
                                    uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out;
  out.reserve(mlp_param_count(d_in, hidden, d_out));
  int prev = d_in;
  auto layer = [&](int in, int width) {
    double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (int i = 0; i < in * width; ++i) out.push_back(draw_normal(rng, 0.0, scale));
    for (int i = 0; i < width; ++i) out.push_back(0.0);
  };
  for (int h : hidden) {
    layer(prev, h);
    prev = h;
  }
  layer(prev, d_out);
  return out;
}

VaeParams init_vae_params(const Arch& arch, uint64_t seed) {
  arch.validate();
  VaeParams p;
  p.arch = arch;
  // encoder: trunk + two heads, drawn as one mlp with doubled output width,
  // which matches the encode() layout of mean head followed by log_var head
  {
    Rng rng(mix_seed(seed, "init/enc"));
    int prev = arch.d_x;
    auto layer = [&](int in, int width) {
      double scale = 1.0 / std::sqrt(static_cast<double>(in));
      for (int i = 0; i < in * width; ++i) p.phi.push_back(draw_normal(rng, 0.0, scale));
      for (int i = 0; i < width; ++i) p.phi.push_back(0.0);
    };
    for (int h : arch.hidden) {
      layer(prev, h);
      prev = h;
    }
    layer(prev, arch.d_z);  // mean head
    layer(prev, arch.d_z);  // log_var head
  }
  p.theta = init_mlp_params(arch.d_z,
                            std::vector<int>(arch.hidden.rbegin(), arch.hidden.rend()),
                            arch.d_x, mix_seed(seed, "init/dec"));
  p.validate();
  return p;
}

// ---- FlatParams -----------------------------------------------------------

FlatParams::FlatParams(Tape& tape, std::span<const double> flat, bool trainable)
    : tape_(&tape), flat_(flat), trainable_(trainable) {}

Tensor FlatParams::next(std::vector<int> shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  if (cursor_ < parts_.size()) {  // replay pass: reuse the first-pass tensor
    Tensor t = parts_[cursor_];
    if (t.shape() != shape)
      fail(Err::Dimension, "parameter walk diverged from the first pass");
    ++cursor_;
    off_ += n;
    return t;
  }
  if (off_ + n > flat_.size())
    fail(Err::Dimension, "flat parameter vector too short: need " + std::to_string(off_ + n) +
                             ", have " + std::to_string(flat_.size()));
  std::vector<double> chunk(flat_.begin() + static_cast<long>(off_),
                            flat_.begin() + static_cast<long>(off_ + n));
  off_ += n;
  Tensor t = trainable_ ? tape_->variable(std::move(chunk), std::move(shape))
                        : tape_->constant(std::move(chunk), std::move(shape));
  parts_.push_back(t);
  ++cursor_;
  return t;
}

void FlatParams::rewind() {
  off_ = 0;
  cursor_ = 0;
}

Tensor FlatParams::next_matrix(int rows, int cols) { return next({rows, cols}); }
Tensor FlatParams::next_vector(int n) { return next({n}); }

void FlatParams::finish() const {
  if (off_ != flat_.size())
    fail(Err::Dimension, "flat parameter vector has " + std::to_string(flat_.size()) +
                             " values but the network consumed " + std::to_string(off_));
}

std::vector<double> FlatParams::collect_grad() const {
  if (!trainable_)
    fail(Err::InvalidArgument, "collect_grad on non-trainable parameters");
  std::vector<double> g;
  g.reserve(off_);
  for (const Tensor& t : parts_) {
    auto gs = t.grad();
    g.insert(g.end(), gs.begin(), gs.end());
  }
  return g;
}

// ---- forward passes ---------------------------------------------------------

Tensor mlp_forward(Tape& tape, FlatParams& params, Tensor x, const std::vector<int>& hidden,
                   int d_out, const char* what) {
  int prev = x.cols();
  Tensor h = x;
  int layer_no = 0;
  for (int width : hidden) {
    Tensor w = params.next_matrix(prev, width);
    Tensor b = params.next_vector(width);
    h = tape.tanh(tape.affine(h, w, b));
    tape.check_finite(h, std::string(what) + " layer " + std::to_string(layer_no));
    prev = width;
    ++layer_no;
  }
  Tensor w = params.next_matrix(prev, d_out);
  Tensor b = params.next_vector(d_out);
  Tensor out = tape.affine(h, w, b);
  tape.check_finite(out, std::string(what) + " output layer");
  return out;
}

std::pair<Tensor, Tensor> encode(Tape& tape, const Arch& arch, FlatParams& phi, Tensor x) {
  if (x.cols() != arch.d_x)
    fail(Err::Dimension, "encoder input has " + std::to_string(x.cols()) +
                             " columns, arch expects " + std::to_string(arch.d_x));
  Tensor h = x;
  int prev = arch.d_x;
  int layer_no = 0;
  for (int width : arch.hidden) {
    Tensor w = phi.next_matrix(prev, width);
    Tensor b = phi.next_vector(width);
    h = tape.tanh(tape.affine(h, w, b));
    tape.check_finite(h, "encoder layer " + std::to_string(layer_no));
    prev = width;
    ++layer_no;
  }
  Tensor wm = phi.next_matrix(prev, arch.d_z);
  Tensor bm = phi.next_vector(arch.d_z);
  Tensor mean = tape.affine(h, wm, bm);
  tape.check_finite(mean, "encoder mean head");
  Tensor wv = phi.next_matrix(prev, arch.d_z);
  Tensor bv = phi.next_vector(arch.d_z);
  Tensor log_var = tape.affine(h, wv, bv);
  tape.check_finite(log_var, "encoder log_var head");
  return {mean, log_var};
}

Tensor decode(Tape& tape, const Arch& arch, FlatParams& theta, Tensor z) {
  if (z.cols() != arch.d_z)
    fail(Err::Dimension, "decoder input has " + std::to_string(z.cols()) +
                             " columns, arch expects " + std::to_string(arch.d_z));
  std::vector<int> rev(arch.hidden.rbegin(), arch.hidden.rend());
  return mlp_forward(tape, theta, z, rev, arch.d_x, "decoder");
}

Tensor decoder_log_lik(Tape& tape, const Arch& arch, Tensor decoded, Tensor x) {
  switch (arch.likelihood) {
    case Likelihood::BernoulliLogits:
      return tape.bernoulli_logit_ll(decoded, x);
    case Likelihood::GaussianUnitVar: {
      Tensor zeros = tape.constant(std::vector<double>(x.size(), 0.0), {x.rows(), x.cols()});
      return tape.gaussian_diag_ll(x, decoded, zeros);
    }
  }
  fail(Err::Internal, "unhandled likelihood");
}

// ---- objectives ---------------------------------------------------------------

Tensor elbo_batch_sum(Tape& tape, const Arch& arch, FlatParams& phi, FlatParams& theta,
                      Tensor x, int n_mc, Rng& eps_rng) {
  if (n_mc < 1) fail(Err::InvalidArgument, "n_mc must be >= 1, got " + std::to_string(n_mc));
  const int n = x.rows();
  auto [mean, log_var] = encode(tape, arch, phi, x);
  Tensor recon;  // (1/n_mc) sum_mc per-row log-likelihood
  for (int s = 0; s < n_mc; ++s) {
    std::vector<double> ev(static_cast<size_t>(n) * arch.d_z);
    fill_normal(eps_rng, ev);
    Tensor eps = tape.constant(std::move(ev), {n, arch.d_z});
    Tensor z = tape.gaussian_reparam(mean, log_var, eps);
    if (s > 0) theta.rewind();
    Tensor dec = decode(tape, arch, theta, z);
    Tensor ll = decoder_log_lik(tape, arch, dec, x);
    recon = s == 0 ? ll : tape.add(recon, ll);
  }
  if (n_mc > 1) recon = tape.scale(recon, 1.0 / n_mc);
  Tensor kl = tape.kl_std_normal(mean, log_var);
  return tape.sum(tape.sub(recon, kl));
}

double elbo_value(const VaeParams& p, std::span<const double> x, int n_mc, uint64_t seed) {
  p.validate();
  if (static_cast<int>(x.size()) != p.arch.d_x)
    fail(Err::Dimension, "input has " + std::to_string(x.size()) + " values, arch expects " +
                             std::to_string(p.arch.d_x));
  Tape tape;
  FlatParams phi(tape, p.phi, false), theta(tape, p.theta, false);
  Tensor xt = tape.constant(x, {1, p.arch.d_x});
  Rng eps_rng(mix_seed(seed, "elbo_eps"));
  Tensor e = elbo_batch_sum(tape, p.arch, phi, theta, xt, n_mc, eps_rng);
  phi.finish();
  theta.finish();
  return e.value();
}

double iw_log_lik(const VaeParams& p, std::span<const double> x, int K, uint64_t seed) {
  p.validate();
  if (K < 1) fail(Err::InvalidArgument, "K must be >= 1, got " + std::to_string(K));
  if (static_cast<int>(x.size()) != p.arch.d_x)
    fail(Err::Dimension, "input has " + std::to_string(x.size()) + " values, arch expects " +
                             std::to_string(p.arch.d_x));
  const int d_z = p.arch.d_z;
  Tape tape;
  FlatParams phi(tape, p.phi, false), theta(tape, p.theta, false);
  Tensor xt = tape.constant(x, {1, p.arch.d_x});
  auto [mean, log_var] = encode(tape, p.arch, phi, xt);

  // replicate the proposal K times, one latent draw per row
  std::vector<double> mean_rep(static_cast<size_t>(K) * d_z),
      lv_rep(static_cast<size_t>(K) * d_z);
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < d_z; ++j) {
      mean_rep[static_cast<size_t>(k) * d_z + j] = mean.data()[j];
      lv_rep[static_cast<size_t>(k) * d_z + j] = log_var.data()[j];
    }
  Tensor mu = tape.constant(std::move(mean_rep), {K, d_z});
  Tensor lv = tape.constant(std::move(lv_rep), {K, d_z});
  std::vector<double> ev(static_cast<size_t>(K) * d_z);
  Rng eps_rng(mix_seed(seed, "iw_eps"));
  fill_normal(eps_rng, ev);
  Tensor eps = tape.constant(std::move(ev), {K, d_z});
  Tensor z = tape.gaussian_reparam(mu, lv, eps);

  Tensor log_q = tape.gaussian_diag_ll(z, mu, lv);
  Tensor zeros = tape.constant(std::vector<double>(static_cast<size_t>(K) * d_z, 0.0), {K, d_z});
  Tensor log_prior = tape.gaussian_diag_ll(z, zeros, zeros);

  std::vector<double> x_rep(static_cast<size_t>(K) * p.arch.d_x);
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < p.arch.d_x; ++j)
      x_rep[static_cast<size_t>(k) * p.arch.d_x + j] = x[static_cast<size_t>(j)];
  Tensor xr = tape.constant(std::move(x_rep), {K, p.arch.d_x});
  Tensor dec = decode(tape, p.arch, theta, z);
  Tensor ll = decoder_log_lik(tape, p.arch, dec, xr);

  Tensor summand = tape.add(ll, tape.sub(log_prior, log_q));
  double out = tape.logsumexp(summand).value() - std::log(static_cast<double>(K));
  phi.finish();
  theta.finish();
  if (!std::isfinite(out))
    fail(Err::Numeric, "importance-sampled log-likelihood is non-finite");
  return out;
}

std::vector<double> decode_values(const VaeParams& p, std::span<const double> z) {
  p.validate();
  if (static_cast<int>(z.size()) != p.arch.d_z)
    fail(Err::Dimension, "latent has " + std::to_string(z.size()) + " values, arch expects " +
                             std::to_string(p.arch.d_z));
  Tape tape;
  FlatParams theta(tape, p.theta, false);
  Tensor zt = tape.constant(z, {1, p.arch.d_z});
  Tensor dec = decode(tape, p.arch, theta, zt);
  theta.finish();
  return {dec.data().begin(), dec.data().end()};
}

}  // namespace bvo
