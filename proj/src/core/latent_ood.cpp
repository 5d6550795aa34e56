#include "core/latent_ood.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "core/common.hpp"
#include "core/optim.hpp"

namespace bvo {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double entropy_nats(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

std::vector<int> batch_labels(const ImageDataset& ds, std::span<const size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (size_t i : idx) out.push_back(ds.labels[i]);
  return out;
}

}  // namespace

void LatentProtocol::validate() const {
  if (n_latents < 2 || n_latents % 2 != 0)
    fail(Err::Config, "n_latents must be even and >= 2, got " + std::to_string(n_latents));
  if (!(scale > 0.0)) fail(Err::Config, "latent scale must be positive");
  if (d < 2) fail(Err::Config, "latent dimension must be >= 2, got " + std::to_string(d));
}

std::vector<double> sample_latents(const LatentProtocol& proto) {
  if (proto.n_latents < 0 || proto.d < 1 || proto.scale < 0.0)
    fail(Err::InvalidArgument, "degenerate latent sampling request");
  Rng rng(mix_seed(proto.seed, "latents"));
  std::vector<double> z(static_cast<size_t>(proto.n_latents) * proto.d);
  fill_normal(rng, z);
  double sd = std::sqrt(proto.scale);
  for (auto& v : z) v *= sd;
  return z;
}

void ClassifierEnsemble::validate() const {
  if (members.empty()) fail(Err::InvalidArgument, "classifier ensemble is empty");
  if (d_in < 1 || n_classes < 2)
    fail(Err::InvalidArgument, "classifier ensemble needs d_in >= 1 and >= 2 classes");
  size_t want = 0;
  {
    int prev = d_in;
    for (int h : hidden) {
      want += static_cast<size_t>(prev) * h + h;
      prev = h;
    }
    want += static_cast<size_t>(prev) * n_classes + n_classes;
  }
  for (const auto& m : members)
    if (m.size() != want)
      fail(Err::Dimension, "classifier member holds " + std::to_string(m.size()) +
                               " parameters, layout needs " + std::to_string(want));
}

std::vector<double> ClassifierEnsemble::predict_proba(size_t member,
                                                      std::span<const double> x) const {
  validate();
  if (member >= members.size())
    fail(Err::InvalidArgument, "member " + std::to_string(member) + " of " +
                                   std::to_string(members.size()));
  if (static_cast<int>(x.size()) != d_in)
    fail(Err::Dimension, "input has " + std::to_string(x.size()) + " values, classifier expects " +
                             std::to_string(d_in));
  Tape tape;
  FlatParams w(tape, members[member], false);
  Tensor xt = tape.constant(x, {1, d_in});
  Tensor logits = mlp_forward(tape, w, xt, hidden, n_classes, "classifier");
  w.finish();
  auto lv = logits.data();
  double hi = *std::max_element(lv.begin(), lv.end());
  std::vector<double> p(lv.begin(), lv.end());
  double sum = 0.0;
  for (auto& v : p) {
    v = std::exp(v - hi);
    sum += v;
  }
  for (auto& v : p) v /= sum;
  return p;
}

ClassifierEnsemble train_classifier_ensemble(const ImageDataset& ds, int J,
                                             const ClassifierTrainConfig& cfg) {
  ds.validate();
  if (!ds.labeled()) fail(Err::InvalidArgument, "classifier training needs labels");
  if (J < 1) fail(Err::InvalidArgument, "ensemble size must be >= 1");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.lr > 0.0))
    fail(Err::Config, "bad classifier training configuration");
  int n_classes = 0;
  for (uint8_t l : ds.labels) n_classes = std::max(n_classes, static_cast<int>(l) + 1);
  if (n_classes < 2) fail(Err::InvalidArgument, "classifier training needs >= 2 classes");

  ClassifierEnsemble ens;
  ens.d_in = ds.dim();
  ens.hidden = cfg.hidden;
  ens.n_classes = n_classes;

  for (int j = 0; j < J; ++j) {
    auto params =
        init_mlp_params(ens.d_in, ens.hidden, n_classes, mix_seed(cfg.seed, "clf_init/" + std::to_string(j)));
    Adam opt;
    opt.lr = cfg.lr;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      auto batches = minibatch_indices(
          ds.count(), cfg.batch_size,
          mix_seed(cfg.seed, "clf_shuffle/" + std::to_string(j) + "/" + std::to_string(epoch)));
      for (const auto& idx : batches) {
        Tape tape;
        FlatParams w(tape, params, true);
        Tensor x = tape.constant(ds.rows(idx), {static_cast<int>(idx.size()), ens.d_in});
        Tensor logits = mlp_forward(tape, w, x, ens.hidden, n_classes, "classifier");
        Tensor loss = tape.mean(tape.cross_entropy_logits(logits, batch_labels(ds, idx)));
        w.finish();
        tape.backward(loss);
        opt.step(params, w.collect_grad());
      }
    }
    ens.members.push_back(std::move(params));
    double acc = member_train_accuracy(ens, ens.members.size() - 1, ds);
    if (acc < cfg.min_train_accuracy)
      fail(Err::Divergence, "classifier member " + std::to_string(j) + " reached only " +
                                std::to_string(acc) + " train accuracy (floor " +
                                std::to_string(cfg.min_train_accuracy) + ")");
  }
  return ens;
}

double member_train_accuracy(const ClassifierEnsemble& ens, size_t member,
                             const ImageDataset& ds) {
  ens.validate();
  if (ds.count() == 0) fail(Err::InvalidArgument, "accuracy over an empty dataset");
  size_t hits = 0;
  const size_t chunk = 256;
  std::vector<size_t> idx;
  for (size_t start = 0; start < ds.count(); start += chunk) {
    size_t stop = std::min(ds.count(), start + chunk);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    Tape tape;
    FlatParams w(tape, ens.members[member], false);
    Tensor x = tape.constant(ds.rows(idx), {static_cast<int>(idx.size()), ens.d_in});
    Tensor logits = mlp_forward(tape, w, x, ens.hidden, ens.n_classes, "classifier");
    w.finish();
    auto lv = logits.data();
    for (size_t r = 0; r < idx.size(); ++r) {
      int best = 0;
      for (int c = 1; c < ens.n_classes; ++c)
        if (lv[r * ens.n_classes + c] > lv[r * ens.n_classes + best]) best = c;
      hits += best == ds.labels[idx[r]];
    }
  }
  return static_cast<double>(hits) / static_cast<double>(ds.count());
}

double bald_score(const ClassifierEnsemble& ens, std::span<const double> x) {
  ens.validate();
  std::vector<double> mix(ens.n_classes, 0.0);
  double mean_h = 0.0;
  for (size_t j = 0; j < ens.size(); ++j) {
    auto p = ens.predict_proba(j, x);
    for (int c = 0; c < ens.n_classes; ++c) mix[c] += p[c];
    mean_h += entropy_nats(p);
  }
  for (auto& v : mix) v /= static_cast<double>(ens.size());
  mean_h /= static_cast<double>(ens.size());
  // nonnegative by concavity; rounding can leave a tiny negative residue
  return std::max(0.0, entropy_nats(mix) - mean_h);
}

double expected_novelty(const PosteriorEnsemble& bvae, const ClassifierEnsemble& clf,
                        std::span<const double> z_star, int L, uint64_t seed) {
  if (L < 1) fail(Err::InvalidArgument, "need at least one decoded input");
  if (clf.d_in != bvae.arch.d_x)
    fail(Err::Dimension, "classifier expects " + std::to_string(clf.d_in) +
                             " inputs, decoder emits " + std::to_string(bvae.arch.d_x));
  Rng rng(mix_seed(seed, "novelty_decode"));
  double acc = 0.0;
  for (int l = 0; l < L; ++l) acc += bald_score(clf, sample_mixture_decode(bvae, z_star, rng));
  return acc / L;
}

std::vector<int> proxy_labels(std::span<const double> novelties) {
  if (novelties.size() < 2 || novelties.size() % 2 != 0)
    fail(Err::InvalidArgument, "median split needs an even count, got " +
                                   std::to_string(novelties.size()));
  std::vector<size_t> order(novelties.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (novelties[a] != novelties[b]) return novelties[a] < novelties[b];
    return a < b;  // ties: the earlier latent counts as in-distribution
  });
  std::vector<int> labels(novelties.size());
  for (size_t i = 0; i < order.size(); ++i) labels[order[i]] = i < order.size() / 2 ? 0 : 1;
  return labels;
}

double annulus_score(std::span<const double> z_star) {
  if (z_star.size() < 2)
    fail(Err::Domain, "annulus needs dimension >= 2, got " + std::to_string(z_star.size()));
  double ss = 0.0;
  for (double v : z_star) ss += v * v;
  return std::abs(std::sqrt(ss) - std::sqrt(static_cast<double>(z_star.size()) - 1.0));
}

LatentIndex build_latent_index(const VaeParams& p, const ImageDataset& ds) {
  p.validate();
  ds.validate();
  if (ds.dim() != p.arch.d_x)
    fail(Err::Dimension, "dataset rows have " + std::to_string(ds.dim()) +
                             " values, encoder expects " + std::to_string(p.arch.d_x));
  LatentIndex index;
  index.d = p.arch.d_z;
  index.means.reserve(ds.count() * static_cast<size_t>(index.d));
  index.log_vars.reserve(ds.count() * static_cast<size_t>(index.d));
  const size_t chunk = 256;
  std::vector<size_t> idx;
  for (size_t start = 0; start < ds.count(); start += chunk) {
    size_t stop = std::min(ds.count(), start + chunk);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    Tape tape;
    FlatParams phi(tape, p.phi, false);
    Tensor x = tape.constant(ds.rows(idx), {static_cast<int>(idx.size()), p.arch.d_x});
    auto [mean, log_var] = encode(tape, p.arch, phi, x);
    phi.finish();
    index.means.insert(index.means.end(), mean.data().begin(), mean.data().end());
    index.log_vars.insert(index.log_vars.end(), log_var.data().begin(), log_var.data().end());
  }
  return index;
}

double aggregated_posterior_score(const LatentIndex& index, std::span<const double> z_star,
                                  int k) {
  if (index.count() == 0) fail(Err::Domain, "aggregated posterior over an empty index");
  if (static_cast<int>(z_star.size()) != index.d)
    fail(Err::Dimension, "latent has " + std::to_string(z_star.size()) + " values, index holds " +
                             std::to_string(index.d));
  if (k < 1) fail(Err::InvalidArgument, "neighbor count must be >= 1");
  const size_t n = index.count();
  const size_t d = static_cast<size_t>(index.d);
  std::vector<std::pair<double, size_t>> by_dist(n);
  for (size_t j = 0; j < n; ++j) {
    double ss = 0.0;
    for (size_t i = 0; i < d; ++i) {
      double diff = z_star[i] - index.means[j * d + i];
      ss += diff * diff;
    }
    by_dist[j] = {ss, j};
  }
  size_t kk = std::min<size_t>(static_cast<size_t>(k), n);
  std::partial_sort(by_dist.begin(), by_dist.begin() + kk, by_dist.end());
  // component log-densities, then one log-sum-exp against the full count
  std::vector<double> comp(kk);
  for (size_t c = 0; c < kk; ++c) {
    size_t j = by_dist[c].second;
    double acc = 0.0;
    for (size_t i = 0; i < d; ++i) {
      double lv = index.log_vars[j * d + i];
      double diff = z_star[i] - index.means[j * d + i];
      acc += -0.5 * (std::log(kTwoPi) + lv + diff * diff * std::exp(-lv));
    }
    comp[c] = acc;
  }
  double hi = *std::max_element(comp.begin(), comp.end());
  double s = 0.0;
  for (double v : comp) s += std::exp(v - hi);
  return hi + std::log(s) - std::log(static_cast<double>(n));
}

LatentEvalResult run_latent_protocol(const PosteriorEnsemble& bvae, const ImageDataset& train,
                                     const LatentEvalConfig& cfg) {
  bvae.validate();
  cfg.proto.validate();
  if (cfg.J < 2) fail(Err::Config, "protocol runs need a classifier ensemble of >= 2");
  if (cfg.L < 1 || cfg.K < 1 || cfg.n_disagreement_inputs < 1 || cfg.qz_neighbors < 1)
    fail(Err::Config, "bad latent protocol configuration");
  if (cfg.proto.d != bvae.arch.d_z)
    fail(Err::Dimension, "protocol latents have dimension " + std::to_string(cfg.proto.d) +
                             ", decoder expects " + std::to_string(bvae.arch.d_z));
  if (train.dim() != bvae.arch.d_x)
    fail(Err::Dimension, "training rows have " + std::to_string(train.dim()) +
                             " values, model expects " + std::to_string(bvae.arch.d_x));

  auto latents = sample_latents(cfg.proto);
  auto clf = train_classifier_ensemble(train, cfg.J, cfg.clf);
  // most recent coupled snapshot carries the encoder used for q(z)
  auto index = build_latent_index(bvae.member_params(bvae.members() - 1), train);

  const size_t n = static_cast<size_t>(cfg.proto.n_latents);
  const size_t d = static_cast<size_t>(cfg.proto.d);
  std::vector<double> novelties(n);
  for (size_t i = 0; i < n; ++i) {
    std::span<const double> z(latents.data() + i * d, d);
    novelties[i] =
        expected_novelty(bvae, clf, z, cfg.L, mix_seed(cfg.proto.seed, "novelty/" + std::to_string(i)));
  }
  auto labels = proxy_labels(novelties);

  LatentEvalResult out;
  std::vector<double> ess(n), ann(n), qz(n);
  for (size_t i = 0; i < n; ++i) {
    std::span<const double> z(latents.data() + i * d, d);
    std::string id = "z" + std::to_string(i);
    ess[i] = disagreement_latent(bvae, z, cfg.n_disagreement_inputs, cfg.K,
                                 mix_seed(cfg.proto.seed, "ess/" + std::to_string(i)), id)
                 .ood_normalized;
    ann[i] = annulus_score(z);
    qz[i] = -aggregated_posterior_score(index, z, cfg.qz_neighbors);
    out.rows.push_back({id, novelties[i], labels[i], "ess", ess[i]});
    out.rows.push_back({id, novelties[i], labels[i], "annulus", ann[i]});
    out.rows.push_back({id, novelties[i], labels[i], "qz", qz[i]});
  }
  out.reports.push_back(evaluate_scores(ess, labels, "ess"));
  out.reports.push_back(evaluate_scores(ann, labels, "annulus"));
  out.reports.push_back(evaluate_scores(qz, labels, "qz"));
  return out;
}

void write_latent_csv(const std::string& path, std::span<const LatentRow> rows,
                      const std::string& manifest_id) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) fail(Err::Io, "cannot open " + path + " for writing");
  if (!manifest_id.empty()) f << "# manifest_id=" << manifest_id << "\n";
  f << "latent_id,novelty,proxy_label,score_name,ood_normalized\n";
  for (const auto& r : rows)
    f << r.latent_id << ',' << fmt_g(r.novelty) << ',' << r.proxy_label << ',' << r.score_name
      << ',' << fmt_g(r.ood_normalized) << "\n";
  if (!f.good()) fail(Err::Io, "short write to " + path);
}

}  // namespace bvo
