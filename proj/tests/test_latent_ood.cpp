#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "core/common.hpp"
#include "core/fetch.hpp"
#include "core/latent_ood.hpp"

namespace fs = std::filesystem;
using namespace bvo;

namespace {

ImageDataset cloud_data(uint64_t seed) {
  std::vector<std::vector<double>> centers = {
      {2, 0, 0, 0, 2, 0, 0, 0}, {0, 2, 0, 2, 0, 0, 2, 0}, {0, 0, 2, 0, 0, 2, 0, 2}};
  return synthetic_mixture(centers, 0.3, 384, seed);
}

BvaeTrainConfig tiny_bvae_cfg(uint64_t seed) {
  BvaeTrainConfig cfg;
  cfg.arch.d_x = 8;
  cfg.arch.hidden = {16};
  cfg.arch.d_z = 2;
  cfg.arch.likelihood = Likelihood::GaussianUnitVar;
  cfg.variant = 2;
  cfg.epochs = 10;
  cfg.batch_size = 64;
  cfg.sghmc.step_size = 5e-4;
  cfg.sghmc.burn_in = 2;
  cfg.sghmc.thinning = 2;
  cfg.seed = seed;
  return cfg;
}

ClassifierTrainConfig cloud_clf_cfg(uint64_t seed) {
  ClassifierTrainConfig cfg;
  cfg.hidden = {8};
  cfg.epochs = 40;
  cfg.batch_size = 64;
  cfg.lr = 5e-3;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("latent draws match the requested covariance scale") {
  LatentProtocol proto;
  proto.n_latents = 10000;
  proto.scale = 9.0;
  proto.d = 4;
  proto.seed = 3;
  auto z = sample_latents(proto);
  REQUIRE(z.size() == 40000);
  for (int i = 0; i < proto.d; ++i) {
    double mean = 0.0, var = 0.0;
    for (int n = 0; n < proto.n_latents; ++n) mean += z[n * 4 + i];
    mean /= proto.n_latents;
    for (int n = 0; n < proto.n_latents; ++n) {
      double c = z[n * 4 + i] - mean;
      var += c * c;
    }
    var /= proto.n_latents - 1;
    CHECK(var > proto.scale * 0.95);
    CHECK(var < proto.scale * 1.05);
  }
  CHECK(sample_latents(proto) == z);

  proto.scale = 0.0;
  for (double v : sample_latents(proto)) CHECK(v == 0.0);

  LatentProtocol bad = proto;
  bad.n_latents = 7;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = proto;
  bad.scale = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = proto;
  bad.d = 1;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("classifier ensemble trains past the accuracy floor") {
  auto data = cloud_data(41);
  auto ens = train_classifier_ensemble(data, 2, cloud_clf_cfg(7));
  REQUIRE(ens.size() == 2);
  CHECK(ens.n_classes == 3);
  CHECK(member_train_accuracy(ens, 0, data) >= 0.85);
  CHECK(member_train_accuracy(ens, 1, data) >= 0.85);

  // independent inits keep members apart
  double dist = 0.0;
  for (size_t i = 0; i < ens.members[0].size(); ++i) {
    double d = ens.members[0][i] - ens.members[1][i];
    dist += d * d;
  }
  CHECK(dist > 0.0);

  std::vector<double> x;
  data.row(0, x);
  CHECK(ens.predict_proba(0, x) == ens.predict_proba(0, x));
  double sum = 0.0;
  for (double p : ens.predict_proba(1, x)) {
    CHECK(p >= 0.0);
    sum += p;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  auto unlabeled = data;
  unlabeled.labels.clear();
  CHECK_THROWS_AS(train_classifier_ensemble(unlabeled, 2, cloud_clf_cfg(7)), Error);

  auto strict = cloud_clf_cfg(7);
  strict.epochs = 1;
  strict.min_train_accuracy = 1.01;  // unreachable on purpose
  try {
    train_classifier_ensemble(data, 1, strict);
    FAIL("expected training-failure error");
  } catch (const Error& e) {
    CHECK(e.kind() == Err::Divergence);
  }
}

TEST_CASE("prediction disagreement behaves like a mutual information") {
  // two affine members pinned to opposite one-hot outputs
  ClassifierEnsemble ens;
  ens.d_in = 2;
  ens.hidden = {};
  ens.n_classes = 2;
  ens.members = {{0, 0, 0, 0, 50, -50}, {0, 0, 0, 0, -50, 50}};
  std::vector<double> x = {0.3, -0.7};
  CHECK(bald_score(ens, x) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  ClassifierEnsemble same = ens;
  same.members = {ens.members[0], ens.members[0]};
  CHECK(bald_score(same, x) == 0.0);  // two identical members average exactly

  ClassifierEnsemble five = ens;
  five.members.assign(5, ens.members[1]);
  CHECK(bald_score(five, x) >= 0.0);
  CHECK(bald_score(five, x) <= 1e-12);

  auto data = cloud_data(42);
  auto trained = train_classifier_ensemble(data, 2, cloud_clf_cfg(8));
  std::vector<double> probe;
  for (size_t i = 0; i < 10; ++i) {
    data.row(i, probe);
    double b = bald_score(trained, probe);
    CHECK(b >= 0.0);
    CHECK(b <= std::log(3.0) + 1e-12);
  }
}

TEST_CASE("expected novelty averages decoded disagreement") {
  auto data = cloud_data(43);
  auto bvae = train_bvae(data, tiny_bvae_cfg(101));
  auto clf = train_classifier_ensemble(data, 2, cloud_clf_cfg(9));
  std::vector<double> z = {0.4, -1.1};
  double v = expected_novelty(bvae, clf, z, 4, 55);
  CHECK(v >= 0.0);
  CHECK(v <= std::log(3.0) + 1e-12);
  CHECK(expected_novelty(bvae, clf, z, 4, 55) == v);
  CHECK(expected_novelty(bvae, clf, z, 4, 56) != v);

  Rng rng(mix_seed(55, "novelty_decode"));
  double single = bald_score(clf, sample_mixture_decode(bvae, z, rng));
  CHECK(expected_novelty(bvae, clf, z, 1, 55) == single);

  CHECK_THROWS_AS(expected_novelty(bvae, clf, z, 0, 55), Error);
}

TEST_CASE("median split labels are balanced and tie-stable") {
  std::vector<double> nov = {1, 2, 3, 4};
  CHECK(proxy_labels(nov) == std::vector<int>{0, 0, 1, 1});
  std::vector<double> shuffled = {4, 1, 3, 2};
  CHECK(proxy_labels(shuffled) == std::vector<int>{1, 0, 1, 0});
  std::vector<double> flat(6, 0.5);
  CHECK(proxy_labels(flat) == std::vector<int>{0, 0, 0, 1, 1, 1});
  std::vector<double> odd = {1, 2, 3};
  CHECK_THROWS_AS(proxy_labels(odd), Error);

  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  std::vector<double> big(100);
  for (auto& v : big) v = g(rng);
  auto labels = proxy_labels(big);
  CHECK(std::count(labels.begin(), labels.end(), 1) == 50);
}

TEST_CASE("annulus distance tracks the concentration radius") {
  std::vector<double> on = {1.0, 0.0};
  CHECK(annulus_score(on) == 0.0);
  std::vector<double> origin = {0.0, 0.0};
  CHECK(annulus_score(origin) == 1.0);

  // orthogonal rotation leaves the score unchanged
  std::vector<double> z = {0.6, -1.2, 0.33, 2.0};
  double s = annulus_score(z);
  double c = std::cos(0.71), sn = std::sin(0.71);
  std::vector<double> rot = {c * z[0] - sn * z[1], sn * z[0] + c * z[1], z[2], z[3]};
  CHECK(annulus_score(rot) == doctest::Approx(s).epsilon(1e-12));

  std::vector<double> d1 = {1.0};
  try {
    annulus_score(d1);
    FAIL("expected domain error");
  } catch (const Error& e) {
    CHECK(e.kind() == Err::Domain);
  }
}

TEST_CASE("aggregated posterior restricted to neighbors matches the mixture") {
  LatentIndex unit;
  unit.d = 2;
  unit.means = {0.0, 0.0};
  unit.log_vars = {0.0, 0.0};
  std::vector<double> origin = {0.0, 0.0};
  CHECK(aggregated_posterior_score(unit, origin, 1) ==
        doctest::Approx(-std::log(2 * 3.14159265358979323846)).epsilon(1e-12));

  auto data = cloud_data(44);
  auto small = take(data, 40, 3);
  auto p = init_vae_params(tiny_bvae_cfg(0).arch, 21);
  auto index = build_latent_index(p, small);
  REQUIRE(index.count() == 40);

  std::vector<double> z = {0.3, 0.9};
  // saturated neighbor count equals a brute-force evaluation of the mixture
  double full = aggregated_posterior_score(index, z, 40);
  std::vector<double> comp(40);
  for (size_t j = 0; j < 40; ++j) {
    double acc = 0.0;
    for (size_t i = 0; i < 2; ++i) {
      double lv = index.log_vars[j * 2 + i];
      double diff = z[i] - index.means[j * 2 + i];
      acc += -0.5 * (std::log(2 * 3.14159265358979323846) + lv + diff * diff / std::exp(lv));
    }
    comp[j] = acc;
  }
  double hi = *std::max_element(comp.begin(), comp.end());
  double s = 0.0;
  for (double v : comp) s += std::exp(v - hi);
  double brute = hi + std::log(s) - std::log(40.0);
  CHECK(std::abs(full - brute) <= 1e-10);
  CHECK(aggregated_posterior_score(index, z, 4000) == full);  // k saturates at N

  // density never shrinks as neighbors are added
  double k1 = aggregated_posterior_score(index, z, 1);
  double k5 = aggregated_posterior_score(index, z, 5);
  CHECK(k1 <= k5 + 1e-12);
  CHECK(k5 <= full + 1e-12);

  std::vector<double> far = {500.0, -500.0};
  double tail = aggregated_posterior_score(index, far, 40);
  CHECK(std::isfinite(tail));
  CHECK(tail < -1000.0);

  LatentIndex empty;
  empty.d = 2;
  CHECK_THROWS_AS(aggregated_posterior_score(empty, z, 5), Error);
  std::vector<double> wrong = {1.0, 2.0, 3.0};
  CHECK_THROWS_AS(aggregated_posterior_score(index, wrong, 5), Error);
  CHECK_THROWS_AS(aggregated_posterior_score(index, z, 0), Error);
}

TEST_CASE("full latent protocol emits balanced rows and one report per score") {
  auto data = cloud_data(45);
  auto bvae = train_bvae(data, tiny_bvae_cfg(102));

  LatentEvalConfig cfg;
  cfg.proto.n_latents = 8;
  cfg.proto.scale = 4.0;
  cfg.proto.d = 2;
  cfg.proto.seed = 77;
  cfg.J = 2;
  cfg.L = 2;
  cfg.n_disagreement_inputs = 2;
  cfg.K = 4;
  cfg.qz_neighbors = 10;
  cfg.clf = cloud_clf_cfg(10);

  auto result = run_latent_protocol(bvae, data, cfg);
  REQUIRE(result.rows.size() == 24);  // three scores per latent
  REQUIRE(result.reports.size() == 3);
  CHECK(result.reports[0].score_name == "ess");
  CHECK(result.reports[1].score_name == "annulus");
  CHECK(result.reports[2].score_name == "qz");
  for (const auto& r : result.reports) {
    CHECK(r.n_in == 4);
    CHECK(r.n_ood == 4);
  }
  for (size_t i = 0; i < 8; ++i) {
    CHECK(result.rows[3 * i].latent_id == "z" + std::to_string(i));
    CHECK(result.rows[3 * i].proxy_label == result.rows[3 * i + 2].proxy_label);
    CHECK(result.rows[3 * i].novelty == result.rows[3 * i + 1].novelty);
  }

  auto dir = fs::temp_directory_path() / "bvo-latent";
  fs::create_directories(dir);
  auto path = (dir / "latent.csv").string();
  write_latent_csv(path, result.rows, "lm-1");
  auto text = read_text_file(path);
  CHECK(text.find("# manifest_id=lm-1\n") == 0);
  CHECK(text.find("latent_id,novelty,proxy_label,score_name,ood_normalized\n") !=
        std::string::npos);
  size_t lines = 0;
  for (char c : text) lines += c == '\n';
  CHECK(lines == 26);  // comment + header + 24 rows
  fs::remove_all(dir);

  auto bad = cfg;
  bad.J = 1;
  CHECK_THROWS_AS(run_latent_protocol(bvae, data, bad), Error);
  bad = cfg;
  bad.proto.d = 3;
  CHECK_THROWS_AS(run_latent_protocol(bvae, data, bad), Error);
}
