#pragma once

#include <optional>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/sghmc.hpp"
#include "core/vae.hpp"

namespace bvo {

// variant 1: encoder optimized to a point estimate, decoder sampled.
// variant 2: encoder and decoder sampled by coupled independent chains.
// variant 0 is reserved for a plain point-estimate model (both nets
// optimized); it appears only in serialized form via train_plain_vae.
struct BvaeTrainConfig {
  Arch arch;
  int variant = 2;
  int epochs = 30;  // T
  int batch_size = 128;
  int n_mc = 1;
  double encoder_lr = 1e-3;  // Adam on phi, variant 1 only
  SghmcConfig sghmc;
  GammaPrior theta_prior;  // Gamma(1,1): precision of the decoder weights
  GammaPrior phi_prior;
  uint64_t seed = 0;

  void validate() const;
};

struct EpochDiagnostics {
  long epoch = 0;
  double potential = 0.0;  // mean stochastic potential over the epoch's batches
  double grad_norm = 0.0;  // mean decoder-chain gradient norm
  double lambda = 0.0;     // decoder precision after the epoch's Gibbs move
  bool retained = false;
};

struct PosteriorEnsemble {
  Arch arch;
  int variant = 2;
  std::vector<std::vector<double>> thetas;  // M decoder snapshots
  std::vector<std::vector<double>> phis;    // 1 shared encoder, or M coupled
  uint64_t seed = 0;
  std::string dataset_digest;

  size_t members() const { return thetas.size(); }
  const std::vector<double>& phi_for(size_t member) const;
  VaeParams member_params(size_t member) const;
  void validate() const;

  std::vector<unsigned char> serialize() const;
  std::string digest() const;  // sha256 of serialize()
};

PosteriorEnsemble train_bvae(const ImageDataset& train, const BvaeTrainConfig& cfg,
                             std::vector<EpochDiagnostics>* diagnostics = nullptr);

// Per-member K-sample log p(x) estimates. The latent proposal noise is drawn
// once per call from `seed`, so members that share an encoder are scored
// under identical latent draws; each value equals iw_log_lik of that member.
std::vector<double> ensemble_log_liks(const PosteriorEnsemble& ens, std::span<const double> x,
                                      int K, uint64_t seed);

// One draw from the mixture decoding distribution: a uniformly chosen member
// decodes z_star, then pixels are sampled from the member's output law
// (Bernoulli on the sigmoid of the logits, or unit-variance Gaussian).
std::vector<double> sample_mixture_decode(const PosteriorEnsemble& ens,
                                          std::span<const double> z_star, Rng& rng);

void save_ensemble(const PosteriorEnsemble& ens, const std::string& path);
PosteriorEnsemble load_ensemble(const std::string& path);

void write_diagnostics_csv(const std::string& path, const std::vector<EpochDiagnostics>& rows,
                           const std::string& manifest_id = "");

// Point-estimate model (Adam on both nets); used as the likelihood-ratio
// background. Serialized as a single-member variant-0 ensemble.
struct PlainVaeTrainConfig {
  Arch arch;
  int epochs = 20;
  int batch_size = 128;
  int n_mc = 1;
  double lr = 1e-3;
  double weight_decay = 0.0;  // applied per-example, i.e. scaled by 1/N
  uint64_t seed = 0;
};

VaeParams train_plain_vae(const ImageDataset& train, const PlainVaeTrainConfig& cfg);

PosteriorEnsemble wrap_plain_vae(const VaeParams& p);  // variant-0 container
VaeParams unwrap_plain_vae(const PosteriorEnsemble& ens);

}  // namespace bvo
