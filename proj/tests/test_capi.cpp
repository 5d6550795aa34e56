// Exercises the shared-library surface the way an external consumer would:
// only bvae_ood.h plus the exported symbols, no core headers.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bvae_ood.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("bvo_capi_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct DatasetHandle {
  bvo_dataset* p = nullptr;
  ~DatasetHandle() { bvo_dataset_free(p); }
};

struct EnsembleHandle {
  bvo_ensemble* p = nullptr;
  ~EnsembleHandle() { bvo_ensemble_free(p); }
};

// 2-class shape dataset and a small trained ensemble, shared across cases
struct Fixture {
  fs::path dir = fresh_dir("fixture");
  DatasetHandle data;
  EnsembleHandle ens;

  Fixture() {
    int classes[2] = {0, 1};
    REQUIRE(bvo_dataset_synthetic_shapes(12, classes, 2, 7, &data.p) == BVO_OK);
    const char* cfg = R"({
      "variant": 2,
      "arch": {"hidden": [12], "d_z": 2, "likelihood": "bernoulli"},
      "epochs": 6, "batch_size": 24, "seed": 3,
      "sghmc": {"step_size": 2e-4, "burn_in": 2, "thinning": 2}
    })";
    REQUIRE(bvo_train(data.p, cfg, &ens.p) == BVO_OK);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

bool is_hex64(const char* s) {
  if (std::strlen(s) != 64) return false;
  for (const char* c = s; *c; ++c)
    if (!std::isxdigit(static_cast<unsigned char>(*c))) return false;
  return true;
}

}  // namespace

TEST_CASE("version and error channel") {
  CHECK(bvo_version() != nullptr);
  CHECK(std::string(bvo_version()).find("0.1.0") != std::string::npos);

  bvo_dataset* ds = nullptr;
  CHECK(bvo_dataset_open_idx("/nonexistent/file.idx", nullptr, &ds) == BVO_E_IO);
  CHECK(std::string(bvo_last_error()).find("/nonexistent/file.idx") != std::string::npos);
  CHECK(ds == nullptr);

  // a successful call clears the diagnostic
  int classes[1] = {3};
  bvo_dataset* ok = nullptr;
  REQUIRE(bvo_dataset_synthetic_shapes(2, classes, 1, 1, &ok) == BVO_OK);
  CHECK(std::string(bvo_last_error()).empty());
  bvo_dataset_free(ok);

  CHECK(bvo_dataset_open_idx(nullptr, nullptr, &ds) == BVO_E_INVALID_ARGUMENT);
  CHECK(bvo_dataset_digest(nullptr, nullptr) == BVO_E_INVALID_ARGUMENT);
}

TEST_CASE("dataset handles move through the c surface") {
  auto& f = fixture();
  CHECK(bvo_dataset_count(f.data.p) == 24);
  CHECK(bvo_dataset_dim(f.data.p) == 784);
  CHECK(bvo_dataset_count(nullptr) == 0);

  char digest[65];
  REQUIRE(bvo_dataset_digest(f.data.p, digest) == BVO_OK);
  CHECK(is_hex64(digest));

  SUBCASE("save and reopen keeps the digest") {
    auto img = (f.dir / "img.idx").string();
    auto lab = (f.dir / "lab.idx").string();
    REQUIRE(bvo_dataset_save_idx(f.data.p, img.c_str(), lab.c_str()) == BVO_OK);
    DatasetHandle back;
    REQUIRE(bvo_dataset_open_idx(img.c_str(), lab.c_str(), &back.p) == BVO_OK);
    char digest2[65];
    REQUIRE(bvo_dataset_digest(back.p, digest2) == BVO_OK);
    CHECK(std::string(digest2) == digest);
  }
  SUBCASE("split, corrupt and take") {
    int held[1] = {1};
    DatasetHandle kept, heldout;
    REQUIRE(bvo_dataset_split_classes(f.data.p, held, 1, &kept.p, &heldout.p) == BVO_OK);
    CHECK(bvo_dataset_count(kept.p) == 12);
    CHECK(bvo_dataset_count(heldout.p) == 12);

    DatasetHandle noisy;
    REQUIRE(bvo_dataset_corrupt(f.data.p, 0.3, 5, &noisy.p) == BVO_OK);
    char noisy_digest[65];
    REQUIRE(bvo_dataset_digest(noisy.p, noisy_digest) == BVO_OK);
    CHECK(std::string(noisy_digest) != digest);

    DatasetHandle sub;
    REQUIRE(bvo_dataset_take(f.data.p, 5, 5, &sub.p) == BVO_OK);
    CHECK(bvo_dataset_count(sub.p) == 5);

    CHECK(bvo_dataset_corrupt(f.data.p, 1.5, 5, &noisy.p) == BVO_E_DOMAIN);
  }
}

TEST_CASE("training and ensemble round trips") {
  auto& f = fixture();
  CHECK(bvo_ensemble_members(f.ens.p) == 3);  // (6 - 2) / 2 + 1
  CHECK(bvo_ensemble_variant(f.ens.p) == 2);
  CHECK(bvo_ensemble_latent_dim(f.ens.p) == 2);

  char digest[65];
  REQUIRE(bvo_ensemble_digest(f.ens.p, digest) == BVO_OK);
  CHECK(is_hex64(digest));

  auto path = (f.dir / "ens.bvoe").string();
  REQUIRE(bvo_ensemble_save(f.ens.p, path.c_str()) == BVO_OK);
  EnsembleHandle back;
  REQUIRE(bvo_ensemble_load(path.c_str(), &back.p) == BVO_OK);
  char digest2[65];
  REQUIRE(bvo_ensemble_digest(back.p, digest2) == BVO_OK);
  CHECK(std::string(digest2) == digest);

  // file digest equals the content digest: the file is the serialization
  char file_digest[65];
  REQUIRE(bvo_sha256_file(path.c_str(), file_digest) == BVO_OK);
  CHECK(std::string(file_digest) == digest);

  SUBCASE("config errors surface as BVO_E_CONFIG") {
    bvo_ensemble* e = nullptr;
    CHECK(bvo_train(f.data.p, R"({"variant": 2, "seed": 1, "turbo": true})", &e) ==
          BVO_E_CONFIG);
    CHECK(std::string(bvo_last_error()).find("turbo") != std::string::npos);
    CHECK(bvo_train(f.data.p, "{not json", &e) == BVO_E_FORMAT);
  }
}

TEST_CASE("scoring through the c api") {
  auto& f = fixture();
  size_t m = bvo_ensemble_members(f.ens.p);
  std::vector<double> x(784, 0.5);
  std::vector<double> lls(m), lls2(m);
  REQUIRE(bvo_ensemble_log_liks(f.ens.p, x.data(), x.size(), 4, 9, lls.data()) == BVO_OK);
  REQUIRE(bvo_ensemble_log_liks(f.ens.p, x.data(), x.size(), 4, 9, lls2.data()) == BVO_OK);
  for (size_t i = 0; i < m; ++i) {
    CHECK(std::isfinite(lls[i]));
    CHECK(lls[i] == lls2[i]);
  }

  double out[2];
  REQUIRE(bvo_score_input(f.ens.p, "ess", x.data(), x.size(), 4, 9, out) == BVO_OK);
  CHECK(out[0] >= 1.0);
  CHECK(out[0] <= static_cast<double>(m));
  CHECK(out[1] == -out[0]);

  REQUIRE(bvo_score_input(f.ens.p, "kl", x.data(), x.size(), 4, 9, out) == BVO_OK);
  CHECK(out[0] >= 0.0);
  CHECK(out[1] == out[0]);

  CHECK(bvo_score_input(f.ens.p, "llr", x.data(), x.size(), 4, 9, out) == BVO_E_CONFIG);
  CHECK(bvo_score_input(f.ens.p, "sharpness", x.data(), x.size(), 4, 9, out) ==
        BVO_E_INVALID_ARGUMENT);
  CHECK(bvo_score_input(f.ens.p, "ll", x.data(), 3, 4, 9, out) == BVO_E_DIMENSION);
}

TEST_CASE("metrics through the c api") {
  double scores[4] = {0.9, 0.8, 0.1, 0.2};
  int labels[4] = {1, 1, 0, 0};
  double v = -1;
  REQUIRE(bvo_auroc(scores, labels, 4, &v) == BVO_OK);
  CHECK(v == 1.0);
  REQUIRE(bvo_auprc(scores, labels, 4, 1, &v) == BVO_OK);
  CHECK(v == 1.0);
  REQUIRE(bvo_fpr_at_tpr(scores, labels, 4, 0.8, &v) == BVO_OK);
  CHECK(v == 0.0);

  int ones[4] = {1, 1, 1, 1};
  CHECK(bvo_auroc(scores, ones, 4, &v) == BVO_E_DOMAIN);
  CHECK(bvo_fpr_at_tpr(scores, labels, 4, 1.5, &v) == BVO_E_INVALID_ARGUMENT);
}

TEST_CASE("command runs and reruns through json requests") {
  auto dir = fresh_dir("runs");
  auto img = (dir / "in.idx").string();
  auto ood = (dir / "ood.idx").string();

  json synth = {{"command", "synth-data"},
                {"config", {{"kind", "shapes"}, {"classes", {0, 1}}, {"per_class", 10}, {"seed", 2}}},
                {"outputs", {{"images", img}}}};
  REQUIRE(bvo_run(synth.dump().c_str(), nullptr, nullptr) == BVO_OK);
  synth["config"]["classes"] = {6, 7};
  synth["outputs"]["images"] = ood;
  REQUIRE(bvo_run(synth.dump().c_str(), nullptr, nullptr) == BVO_OK);

  auto& f = fixture();
  auto ens_path = (dir / "ens.bvoe").string();
  REQUIRE(bvo_ensemble_save(f.ens.p, ens_path.c_str()) == BVO_OK);

  json score = {{"command", "score"},
                {"config", {{"method", "ess"}, {"k", 3}, {"seed", 4}}},
                {"inputs", {{"ensemble", ens_path}, {"in", img}, {"ood", ood}}},
                {"outputs", {{"scores", (dir / "scores.csv").string()}}}};
  auto manifest_path = (dir / "score.manifest.json").string();
  char* manifest_text = nullptr;
  REQUIRE(bvo_run(score.dump().c_str(), manifest_path.c_str(), &manifest_text) == BVO_OK);
  REQUIRE(manifest_text != nullptr);
  auto manifest = json::parse(manifest_text);
  bvo_string_free(manifest_text);
  CHECK(manifest.at("command") == "score");
  CHECK(manifest.at("outputs").at("scores").contains("sha256"));
  CHECK(fs::exists(manifest_path));

  char* rerun_text = nullptr;
  REQUIRE(bvo_rerun(manifest_path.c_str(), (dir / "redo").string().c_str(), nullptr,
                    &rerun_text) == BVO_OK);
  auto redo = json::parse(rerun_text);
  bvo_string_free(rerun_text);
  CHECK(redo.at("id") == manifest.at("id"));
  CHECK(redo.at("outputs").at("scores").at("sha256") ==
        manifest.at("outputs").at("scores").at("sha256"));

  SUBCASE("request validation") {
    CHECK(bvo_run("{\"command\":\"warp\"}", nullptr, nullptr) == BVO_E_CONFIG);
    CHECK(bvo_run("{]", nullptr, nullptr) == BVO_E_FORMAT);
    CHECK(bvo_run("{\"command\":\"score\",\"frobnicate\":1}", nullptr, nullptr) == BVO_E_CONFIG);
    CHECK(bvo_rerun("/nonexistent.manifest.json", "/tmp/x", nullptr, nullptr) == BVO_E_IO);
  }
}
