#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "core/bvae.hpp"

namespace bvo {

// Importance weights across ensemble members: softmax of per-member
// log-likelihoods, computed in log space so any constant shift cancels.
std::vector<double> normalize_weights(std::span<const double> log_liks);

// Effective sample size 1/sum(w^2), in [1, M]. M means the members agree
// perfectly on this input; 1 means a single member claims all the mass.
double ess_score(std::span<const double> w);

// Both sides of ||w - u||_2 = sqrt(1/D - 1/M), for property checks.
std::pair<double, double> ess_euclid_identity(std::span<const double> w);

// Sample divergence of the uniform vector from w: -(1/M) sum log(M w_m),
// with w floored at 1e-300. Zero iff uniform; grows with disagreement.
double kl_change_score(std::span<const double> w);

struct ScoreRecord {
  std::string input_id;
  std::string score_name;
  double raw = 0.0;
  double ood_normalized = 0.0;  // larger always means more out-of-distribution
  std::string meta;             // optional provenance, e.g. background corruption rate
};

// Point-estimate model trained on corrupted data; the likelihood-ratio
// denominator. mu is the corruption rate its training data was built with.
struct BackgroundModel {
  VaeParams params;
  double mu = 0.2;
  void validate() const;  // mu in [0.1, 0.2]
};

ScoreRecord disagreement_input(const PosteriorEnsemble& ens, std::span<const double> x, int K,
                               uint64_t seed, std::string input_id = "");

// Expected disagreement at a latent point: mean single-input disagreement
// over n_inputs draws from the mixture decoding distribution.
ScoreRecord disagreement_latent(const PosteriorEnsemble& ens, std::span<const double> z_star,
                                int n_inputs, int K, uint64_t seed, std::string input_id = "");

ScoreRecord kl_change_input(const PosteriorEnsemble& ens, std::span<const double> x, int K,
                            uint64_t seed, std::string input_id = "");

// Ensemble-averaged likelihood, log[(1/M) sum p(x|theta_m)].
ScoreRecord ll_score(const PosteriorEnsemble& ens, std::span<const double> x, int K,
                     uint64_t seed, std::string input_id = "");

// Mean minus unbiased variance of the member log-likelihoods.
ScoreRecord waic_score(const PosteriorEnsemble& ens, std::span<const double> x, int K,
                       uint64_t seed, std::string input_id = "");

ScoreRecord llr_score(const PosteriorEnsemble& ens, const BackgroundModel& background,
                      std::span<const double> x, int K, uint64_t seed, std::string input_id = "");

// Absolute deviation of the averaged log-likelihood from the training mean.
ScoreRecord typicality_score(const PosteriorEnsemble& ens, double train_ll_mean,
                             std::span<const double> x, int K, uint64_t seed,
                             std::string input_id = "");

// Training reference point for the typicality score: mean ll_score raw value
// over a seeded subsample of at most `subsample` rows.
double mean_log_lik(const PosteriorEnsemble& ens, const ImageDataset& ds, size_t subsample,
                    int K, uint64_t seed);

enum class ScoreMethod { Ess, KlChange, LogLik, Waic, Llr, Typicality };

ScoreMethod parse_score_method(std::string_view name);  // ess|kl|ll|waic|llr|tt
std::string_view score_method_name(ScoreMethod m);

struct ScoreBatchConfig {
  ScoreMethod method = ScoreMethod::Ess;
  int K = 64;
  uint64_t seed = 0;
  const BackgroundModel* background = nullptr;  // required for Llr
  std::optional<double> train_ll_mean;          // required for Typicality
};

// Scores every row; input ids are "<id_prefix><row>" and each row's proposal
// noise is seeded from its id, so results are independent of batch order.
std::vector<ScoreRecord> score_dataset(const PosteriorEnsemble& ens, const ImageDataset& ds,
                                       const ScoreBatchConfig& cfg, std::string_view id_prefix);

void write_scores_csv(const std::string& path, std::span<const ScoreRecord> records,
                      std::span<const int> labels, const std::string& manifest_id = "");

struct LabeledScore {
  ScoreRecord rec;
  int label = 0;  // 1 = out-of-distribution
};
std::vector<LabeledScore> read_scores_csv(const std::string& path);

}  // namespace bvo
