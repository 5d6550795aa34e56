#pragma once

#include <span>
#include <string>
#include <vector>

#include "core/metrics.hpp"

namespace bvo {

// Latent-space detection protocol: latents drawn far outside the prior are
// labeled by a classifier ensemble's expected prediction disagreement, then
// each scoring rule competes on those proxy labels.

struct LatentProtocol {
  int n_latents = 1000;  // even: labels come from a median split
  double scale = 10000.0;
  int d = 32;
  uint64_t seed = 0;

  void validate() const;
};

// Row-major n_latents x d draws from N(0, scale * I).
std::vector<double> sample_latents(const LatentProtocol& proto);

struct ClassifierTrainConfig {
  std::vector<int> hidden = {128};
  int epochs = 30;
  int batch_size = 128;
  double lr = 1e-3;
  double min_train_accuracy = 0.85;
  uint64_t seed = 0;
};

struct ClassifierEnsemble {
  int d_in = 0;
  std::vector<int> hidden;
  int n_classes = 0;
  std::vector<std::vector<double>> members;  // flat MLP parameters per member

  size_t size() const { return members.size(); }
  void validate() const;
  // Class probabilities from one member for a single input.
  std::vector<double> predict_proba(size_t member, std::span<const double> x) const;
};

// J members trained on the labeled dataset with independent initializations
// and shuffles; every member must clear the configured train-accuracy floor.
ClassifierEnsemble train_classifier_ensemble(const ImageDataset& ds, int J,
                                             const ClassifierTrainConfig& cfg);

double member_train_accuracy(const ClassifierEnsemble& ens, size_t member,
                             const ImageDataset& ds);

// Mutual information between prediction and member choice, in nats:
// entropy of the mixture minus mean member entropy. In [0, ln C].
double bald_score(const ClassifierEnsemble& ens, std::span<const double> x);

// Mean BALD over L mixture decodes of z_star.
double expected_novelty(const PosteriorEnsemble& bvae, const ClassifierEnsemble& clf,
                        std::span<const double> z_star, int L, uint64_t seed);

// Median split: the N/2 lowest novelties (ties to the lower index) are
// in-distribution (0), the rest out (1).
std::vector<int> proxy_labels(std::span<const double> novelties);

// Distance of ||z|| from sqrt(d-1), where a standard Gaussian concentrates.
double annulus_score(std::span<const double> z_star);

// Per-training-point encoder posteriors, the components of q(z).
struct LatentIndex {
  int d = 0;
  std::vector<double> means;     // count x d
  std::vector<double> log_vars;  // count x d
  size_t count() const { return d == 0 ? 0 : means.size() / static_cast<size_t>(d); }
};

LatentIndex build_latent_index(const VaeParams& p, const ImageDataset& ds);

// log q(z*) restricted to the k components with nearest means:
// log[(1/N) sum_j N(z*; mean_j, diag var_j)] over the neighbor set.
double aggregated_posterior_score(const LatentIndex& index, std::span<const double> z_star,
                                  int k = 100);

struct LatentEvalConfig {
  LatentProtocol proto;
  int J = 5;   // classifier ensemble size, >= 2
  int L = 32;  // decodes per novelty estimate
  int n_disagreement_inputs = 32;
  int K = 8;  // importance samples per member in the disagreement score
  int qz_neighbors = 100;
  ClassifierTrainConfig clf;
};

struct LatentRow {
  std::string latent_id;
  double novelty = 0.0;
  int proxy_label = 0;
  std::string score_name;
  double ood_normalized = 0.0;
};

struct LatentEvalResult {
  std::vector<LatentRow> rows;        // one row per (latent, score)
  std::vector<EvalReport> reports;    // one per score name
};

// Full protocol run: sample latents, train classifiers, label by expected
// novelty, then score every latent with the ensemble disagreement and the
// annulus and aggregated-posterior baselines.
LatentEvalResult run_latent_protocol(const PosteriorEnsemble& bvae, const ImageDataset& train,
                                     const LatentEvalConfig& cfg);

void write_latent_csv(const std::string& path, std::span<const LatentRow> rows,
                      const std::string& manifest_id = "");

}  // namespace bvo
