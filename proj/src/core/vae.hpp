#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace bvo {

enum class Likelihood {
  BernoulliLogits,  // decoder emits logits; pixels treated as Bernoulli means
  GaussianUnitVar,  // decoder emits means of N(mean, I); used by exact-oracle tests
};

// Encoder: d_x -> hidden... -> two d_z heads (mean, log_var), tanh between.
// Decoder: d_z -> reversed(hidden) -> d_x, tanh between, linear output.
// hidden may be empty, collapsing both nets to pure affine maps.
struct Arch {
  int d_x = 784;
  std::vector<int> hidden = {256};
  int d_z = 32;
  Likelihood likelihood = Likelihood::BernoulliLogits;

  size_t encoder_params() const;
  size_t decoder_params() const;
  void validate() const;
  bool operator==(const Arch&) const = default;
};

struct VaeParams {
  Arch arch;
  std::vector<double> phi;    // encoder weights, layout fixed by encode()
  std::vector<double> theta;  // decoder weights, layout fixed by decode()
  void validate() const;
};

VaeParams init_vae_params(const Arch& arch, uint64_t seed);
std::vector<double> init_mlp_params(int d_in, const std::vector<int>& hidden, int d_out,
                                    uint64_t seed);

// Walks a flat parameter vector, exposing consecutive slices as tape tensors.
// Trainable slices become tape variables whose gradients can be gathered back
// into one flat vector; otherwise slices are constants and record nothing.
class FlatParams {
 public:
  FlatParams(Tape& tape, std::span<const double> flat, bool trainable);

  Tensor next_matrix(int rows, int cols);
  Tensor next_vector(int n);
  void finish() const;  // Err::Dimension unless the whole vector was consumed

  // Restarts the walk. Later passes hand back the tensors built on the first
  // pass, so gradients from repeated forward traversals accumulate in place.
  void rewind();

  // Concatenated gradients of all slices, in first-pass order.
  std::vector<double> collect_grad() const;

 private:
  Tensor next(std::vector<int> shape);
  Tape* tape_;
  std::span<const double> flat_;
  size_t off_ = 0;
  size_t cursor_ = 0;  // index into parts_ for replay passes
  bool trainable_;
  std::vector<Tensor> parts_;
};

// Forward passes. x: [n, d_x]; z: [n, d_z]. Activations are finiteness-checked
// per layer and failures name the layer.
std::pair<Tensor, Tensor> encode(Tape& tape, const Arch& arch, FlatParams& phi, Tensor x);
Tensor decode(Tape& tape, const Arch& arch, FlatParams& theta, Tensor z);

// Generic MLP used both by the decoder/encoder trunks and by the latent-space
// classifiers. Layout per layer: W [in,out] then b [out].
Tensor mlp_forward(Tape& tape, FlatParams& params, Tensor x, const std::vector<int>& hidden,
                   int d_out, const char* what);

// Per-row decoder log-likelihood under the arch's likelihood model.
Tensor decoder_log_lik(Tape& tape, const Arch& arch, Tensor decoded, Tensor x);

// Sum over batch rows of the single-sample variational bound, with the
// reconstruction term averaged over n_mc latent draws. Gradients flow into
// whatever FlatParams were built as trainable.
Tensor elbo_batch_sum(Tape& tape, const Arch& arch, FlatParams& phi, FlatParams& theta,
                      Tensor x, int n_mc, Rng& eps_rng);

// Convenience scalar: the bound for a single input.
double elbo_value(const VaeParams& p, std::span<const double> x, int n_mc, uint64_t seed);

// K-sample importance estimate of log p(x), entirely in log space:
// logsumexp_k[ log p(x|z_k) + log p(z_k) - log q(z_k|x) ] - log K.
double iw_log_lik(const VaeParams& p, std::span<const double> x, int K, uint64_t seed);

// Raw decoder outputs (logits or means, per the arch's likelihood) for one
// latent; records nothing.
std::vector<double> decode_values(const VaeParams& p, std::span<const double> z);

}  // namespace bvo
