#include "core/scores.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "core/common.hpp"

namespace bvo {

namespace {

void check_weight_vector(std::span<const double> w) {
  if (w.size() < 2) fail(Err::InvalidArgument, "weight vector needs at least 2 entries");
  double sum = 0.0;
  for (double v : w) {
    if (!(v >= -1e-12 && v <= 1.0 + 1e-12))
      fail(Err::Domain, "weight " + std::to_string(v) + " outside [0,1]");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    fail(Err::Domain, "weights sum to " + std::to_string(sum) + ", expected 1");
}

double log_sum_exp(std::span<const double> v) {
  double hi = *std::max_element(v.begin(), v.end());
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// human-facing formatting for meta fields, no round-trip requirement
std::string fmt_brief(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

std::vector<double> normalize_weights(std::span<const double> log_liks) {
  if (log_liks.size() < 2)
    fail(Err::InvalidArgument,
         "need at least 2 log-likelihoods, got " + std::to_string(log_liks.size()));
  for (double l : log_liks)
    if (!std::isfinite(l)) fail(Err::Numeric, "non-finite log-likelihood in weight computation");
  double lse = log_sum_exp(log_liks);
  std::vector<double> w(log_liks.size());
  for (size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_liks[i] - lse);
  return w;
}

double ess_score(std::span<const double> w) {
  check_weight_vector(w);
  double s2 = 0.0;
  for (double v : w) s2 += v * v;
  return 1.0 / s2;
}

std::pair<double, double> ess_euclid_identity(std::span<const double> w) {
  double d = ess_score(w);
  double m = static_cast<double>(w.size());
  double lhs = 0.0;
  for (double v : w) lhs += (v - 1.0 / m) * (v - 1.0 / m);
  lhs = std::sqrt(lhs);
  double rhs = std::sqrt(std::max(0.0, 1.0 / d - 1.0 / m));
  return {lhs, rhs};
}

double kl_change_score(std::span<const double> w) {
  check_weight_vector(w);
  double m = static_cast<double>(w.size());
  double acc = 0.0;
  for (double v : w) acc += std::log(m * std::max(v, 1e-300));
  return -acc / m;
}

void BackgroundModel::validate() const {
  params.validate();
  if (!(mu >= 0.1 && mu <= 0.2))
    fail(Err::Config, "background corruption rate " + std::to_string(mu) + " outside [0.1, 0.2]");
}

ScoreRecord disagreement_input(const PosteriorEnsemble& ens, std::span<const double> x, int K,
                               uint64_t seed, std::string input_id) {
  auto lls = ensemble_log_liks(ens, x, K, seed);
  double d = ess_score(normalize_weights(lls));
  return {std::move(input_id), "ess", d, -d, ""};
}

ScoreRecord disagreement_latent(const PosteriorEnsemble& ens, std::span<const double> z_star,
                                int n_inputs, int K, uint64_t seed, std::string input_id) {
  if (n_inputs < 1) fail(Err::InvalidArgument, "need at least one decoded input");
  Rng decode_rng(mix_seed(seed, "mixture_decode"));
  double acc = 0.0;
  for (int n = 0; n < n_inputs; ++n) {
    auto x = sample_mixture_decode(ens, z_star, decode_rng);
    uint64_t sn = mix_seed(seed, "decode_score/" + std::to_string(n));
    acc += ess_score(normalize_weights(ensemble_log_liks(ens, x, K, sn)));
  }
  double d = acc / n_inputs;
  return {std::move(input_id), "ess", d, -d, ""};
}

ScoreRecord kl_change_input(const PosteriorEnsemble& ens, std::span<const double> x, int K,
                            uint64_t seed, std::string input_id) {
  auto lls = ensemble_log_liks(ens, x, K, seed);
  double kl = kl_change_score(normalize_weights(lls));
  return {std::move(input_id), "kl", kl, kl, ""};
}

ScoreRecord ll_score(const PosteriorEnsemble& ens, std::span<const double> x, int K,
                     uint64_t seed, std::string input_id) {
  auto lls = ensemble_log_liks(ens, x, K, seed);
  double ll = log_sum_exp(lls) - std::log(static_cast<double>(lls.size()));
  return {std::move(input_id), "ll", ll, -ll, ""};
}

ScoreRecord waic_score(const PosteriorEnsemble& ens, std::span<const double> x, int K,
                       uint64_t seed, std::string input_id) {
  auto lls = ensemble_log_liks(ens, x, K, seed);
  if (lls.size() < 2) fail(Err::InvalidArgument, "variance needs at least 2 members");
  double mean = 0.0;
  for (double l : lls) mean += l;
  mean /= static_cast<double>(lls.size());
  double var = 0.0;
  for (double l : lls) var += (l - mean) * (l - mean);
  var /= static_cast<double>(lls.size() - 1);
  double waic = mean - var;
  return {std::move(input_id), "waic", waic, -waic, ""};
}

ScoreRecord llr_score(const PosteriorEnsemble& ens, const BackgroundModel& background,
                      std::span<const double> x, int K, uint64_t seed, std::string input_id) {
  background.validate();
  double fg = ll_score(ens, x, K, seed).raw;
  double bg = iw_log_lik(background.params, x, K, seed);
  double llr = fg - bg;
  return {std::move(input_id), "llr", llr, -llr, "mu=" + fmt_brief(background.mu)};
}

ScoreRecord typicality_score(const PosteriorEnsemble& ens, double train_ll_mean,
                             std::span<const double> x, int K, uint64_t seed,
                             std::string input_id) {
  if (!std::isfinite(train_ll_mean)) fail(Err::Numeric, "training mean log-likelihood not finite");
  double dev = std::abs(ll_score(ens, x, K, seed).raw - train_ll_mean);
  return {std::move(input_id), "tt", dev, dev, "train_ll_mean=" + fmt_brief(train_ll_mean)};
}

double mean_log_lik(const PosteriorEnsemble& ens, const ImageDataset& ds, size_t subsample,
                    int K, uint64_t seed) {
  if (ds.count() == 0) fail(Err::InvalidArgument, "cannot average over an empty dataset");
  auto perm = seeded_permutation(ds.count(), mix_seed(seed, "ll_subsample"));
  size_t n = std::min(subsample, ds.count());
  std::vector<double> x;
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ds.row(perm[i], x);
    acc += ll_score(ens, x, K, mix_seed(seed, "row/" + std::to_string(perm[i]))).raw;
  }
  return acc / static_cast<double>(n);
}

ScoreMethod parse_score_method(std::string_view name) {
  if (name == "ess") return ScoreMethod::Ess;
  if (name == "kl") return ScoreMethod::KlChange;
  if (name == "ll") return ScoreMethod::LogLik;
  if (name == "waic") return ScoreMethod::Waic;
  if (name == "llr") return ScoreMethod::Llr;
  if (name == "tt") return ScoreMethod::Typicality;
  fail(Err::InvalidArgument, "unknown score method '" + std::string(name) +
                                 "' (expected ess|kl|ll|waic|llr|tt)");
}

std::string_view score_method_name(ScoreMethod m) {
  switch (m) {
    case ScoreMethod::Ess: return "ess";
    case ScoreMethod::KlChange: return "kl";
    case ScoreMethod::LogLik: return "ll";
    case ScoreMethod::Waic: return "waic";
    case ScoreMethod::Llr: return "llr";
    case ScoreMethod::Typicality: return "tt";
  }
  fail(Err::Internal, "unhandled score method");
}

std::vector<ScoreRecord> score_dataset(const PosteriorEnsemble& ens, const ImageDataset& ds,
                                       const ScoreBatchConfig& cfg, std::string_view id_prefix) {
  if (cfg.method == ScoreMethod::Llr && cfg.background == nullptr)
    fail(Err::Config, "llr scoring needs a background model");
  if (cfg.method == ScoreMethod::Typicality && !cfg.train_ll_mean)
    fail(Err::Config, "tt scoring needs the training mean log-likelihood");
  std::vector<ScoreRecord> out;
  out.reserve(ds.count());
  std::vector<double> x;
  for (size_t i = 0; i < ds.count(); ++i) {
    ds.row(i, x);
    std::string id = std::string(id_prefix) + std::to_string(i);
    uint64_t s = mix_seed(cfg.seed, id);
    switch (cfg.method) {
      case ScoreMethod::Ess: out.push_back(disagreement_input(ens, x, cfg.K, s, id)); break;
      case ScoreMethod::KlChange: out.push_back(kl_change_input(ens, x, cfg.K, s, id)); break;
      case ScoreMethod::LogLik: out.push_back(ll_score(ens, x, cfg.K, s, id)); break;
      case ScoreMethod::Waic: out.push_back(waic_score(ens, x, cfg.K, s, id)); break;
      case ScoreMethod::Llr:
        out.push_back(llr_score(ens, *cfg.background, x, cfg.K, s, id));
        break;
      case ScoreMethod::Typicality:
        out.push_back(typicality_score(ens, *cfg.train_ll_mean, x, cfg.K, s, id));
        break;
    }
  }
  return out;
}

void write_scores_csv(const std::string& path, std::span<const ScoreRecord> records,
                      std::span<const int> labels, const std::string& manifest_id) {
  if (records.size() != labels.size())
    fail(Err::Dimension, "have " + std::to_string(records.size()) + " records but " +
                             std::to_string(labels.size()) + " labels");
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(Err::Io, "cannot open " + path + " for writing");
  if (!manifest_id.empty()) f << "# manifest_id=" << manifest_id << "\n";
  f << "input_id,score_name,raw,ood_normalized,label\n";
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    f << r.input_id << ',' << r.score_name << ',' << fmt_g(r.raw) << ','
      << fmt_g(r.ood_normalized) << ',' << labels[i] << "\n";
  }
  if (!f.good()) fail(Err::Io, "short write to " + path);
}

std::vector<LabeledScore> read_scores_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(Err::Io, "cannot open " + path);
  std::vector<LabeledScore> out;
  std::string line;
  size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      if (line != "input_id,score_name,raw,ood_normalized,label")
        fail(Err::Format, path + ":" + std::to_string(line_no) + ": unexpected header '" + line + "'");
      saw_header = true;
      continue;
    }
    std::istringstream ss(line);
    std::string id, name, raw_s, ood_s, label_s;
    if (!std::getline(ss, id, ',') || !std::getline(ss, name, ',') ||
        !std::getline(ss, raw_s, ',') || !std::getline(ss, ood_s, ',') ||
        !std::getline(ss, label_s))
      fail(Err::Format, path + ":" + std::to_string(line_no) + ": expected 5 comma-separated fields");
    LabeledScore s;
    s.rec.input_id = id;
    s.rec.score_name = name;
    try {
      s.rec.raw = std::stod(raw_s);
      s.rec.ood_normalized = std::stod(ood_s);
      s.label = std::stoi(label_s);
    } catch (const std::exception&) {
      fail(Err::Format, path + ":" + std::to_string(line_no) + ": bad numeric field");
    }
    out.push_back(std::move(s));
  }
  if (!saw_header) fail(Err::Format, path + ": missing score header");
  return out;
}

}  // namespace bvo
