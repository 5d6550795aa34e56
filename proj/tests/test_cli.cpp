// End-to-end checks against the actual binary: every assertion here goes
// through fork/exec, files and exit codes, never the C++ API.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const std::string& args) {
  auto err_file = fs::temp_directory_path() / "bvo_cli_stderr.txt";
  std::string cmd = std::string(BVO_CLI_PATH) + " " + args + " 2>" + err_file.string();
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (size_t n = fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
  int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream ef(err_file);
  std::stringstream ss;
  ss << ef.rdbuf();
  r.err = ss.str();
  return r;
}

fs::path fresh_dir(const std::string& tag) {
  auto dir = fs::temp_directory_path() / ("bvo_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  REQUIRE(f.good());
  f << text;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// one shared tiny pipeline: synth -> train -> score -> eval
struct Pipeline {
  fs::path dir = fresh_dir("pipeline");
  fs::path images = dir / "train-images.idx";
  fs::path labels = dir / "train-labels.idx";
  fs::path ood_images = dir / "ood-images.idx";
  fs::path ensemble = dir / "ens.bvoe";
  fs::path scores = dir / "scores.csv";

  Pipeline() {
    write_file(dir / "synth.json",
               R"({"kind":"shapes","classes":[0,1],"per_class":12,"seed":5})");
    auto r = run_cli("synth-data --config " + (dir / "synth.json").string() + " --out-images " +
                     images.string() + " --out-labels " + labels.string());
    REQUIRE(r.exit_code == 0);

    write_file(dir / "synth_ood.json",
               R"({"kind":"shapes","classes":[6,7],"per_class":12,"seed":6})");
    r = run_cli("synth-data --config " + (dir / "synth_ood.json").string() + " --out-images " +
                ood_images.string());
    REQUIRE(r.exit_code == 0);

    write_file(dir / "train.json", R"({
      "data": {"images": ")" + images.string() + R"("},
      "arch": {"hidden": [12], "d_z": 2, "likelihood": "bernoulli"},
      "epochs": 6, "batch_size": 24, "seed": 3,
      "sghmc": {"step_size": 2e-4, "burn_in": 2, "thinning": 2}
    })");
    r = run_cli("train --variant 2 --config " + (dir / "train.json").string() + " --out " +
                ensemble.string() + " --diagnostics " + (dir / "diag.csv").string());
    REQUIRE(r.exit_code == 0);

    r = run_cli("score --ensemble " + ensemble.string() + " --method ess --in " +
                images.string() + " --ood " + ood_images.string() + " --out " + scores.string() +
                " --k 3 --seed 11");
    REQUIRE(r.exit_code == 0);
  }
};

Pipeline& pipeline() {
  static Pipeline p;
  return p;
}

}  // namespace

TEST_CASE("version and usage errors") {
  CHECK(run_cli("--version").exit_code == 0);
  CHECK(run_cli("--version").out.find("0.1.0") != std::string::npos);

  auto r = run_cli("transmogrify");
  CHECK(r.exit_code != 0);

  r = run_cli("score --ensemble x");  // missing required flags
  CHECK(r.exit_code != 0);
  CHECK(!r.err.empty());

  r = run_cli("train --variant 3 --config x --out y");
  CHECK(r.exit_code != 0);
}

TEST_CASE("pipeline artifacts land with manifests") {
  auto& p = pipeline();
  CHECK(fs::exists(p.images));
  CHECK(fs::exists(p.ensemble));
  CHECK(fs::exists(p.scores));
  CHECK(fs::exists(p.dir / "diag.csv"));
  for (const char* m : {"train-images.idx.manifest.json", "ens.bvoe.manifest.json",
                        "scores.csv.manifest.json"})
    CHECK(fs::exists(p.dir / m));

  // the score CSV header matches the documented schema, after the stamp
  std::istringstream csv(slurp(p.scores));
  std::string line;
  std::getline(csv, line);
  CHECK(line.rfind("# manifest_id=", 0) == 0);
  std::getline(csv, line);
  CHECK(line == "input_id,score_name,raw,ood_normalized,label");

  // the stamp agrees with the manifest file next to the CSV
  auto manifest = json::parse(slurp(p.dir / "scores.csv.manifest.json"));
  CHECK("# manifest_id=" + manifest.at("id").get<std::string>() ==
        slurp(p.scores).substr(0, 14 + 64));
}

TEST_CASE("training is deterministic across runs") {
  auto& p = pipeline();
  auto again = p.dir / "ens2.bvoe";
  auto r = run_cli("train --variant 2 --config " + (p.dir / "train.json").string() + " --out " +
                   again.string());
  REQUIRE(r.exit_code == 0);
  CHECK(slurp(again) == slurp(p.ensemble));
}

TEST_CASE("eval emits report and curves") {
  auto& p = pipeline();
  auto out = p.dir / "evalout";
  auto r = run_cli("eval --scores " + p.scores.string() + " --out " + out.string());
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(out / "manifest.json"));
  CHECK(fs::exists(out / "report.json"));
  CHECK(fs::exists(out / "ess_roc.csv"));
  CHECK(fs::exists(out / "ess_pr.svg"));
  auto report = json::parse(slurp(out / "report.json"));
  double auroc = report.at("reports")[0].at("auroc").get<double>();
  CHECK(auroc >= 0.0);
  CHECK(auroc <= 1.0);
}

TEST_CASE("rerun reproduces the score csv byte for byte") {
  auto& p = pipeline();
  auto redo = p.dir / "redo";
  auto r = run_cli("rerun --manifest " + (p.dir / "scores.csv.manifest.json").string() +
                   " --out-dir " + redo.string());
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("manifest ") == 0);
  CHECK(slurp(redo / "scores.csv") == slurp(p.scores));
}

TEST_CASE("config violations exit nonzero with a diagnostic") {
  auto& p = pipeline();
  write_file(p.dir / "bad.json", R"({
    "data": {"images": ")" + p.images.string() + R"("},
    "epochs": 6, "seed": 3, "warp_factor": 9
  })");
  auto r = run_cli("train --variant 2 --config " + (p.dir / "bad.json").string() + " --out " +
                   (p.dir / "x.bvoe").string());
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("warp_factor") != std::string::npos);

  write_file(p.dir / "conflict.json", R"({
    "data": {"images": ")" + p.images.string() + R"("},
    "variant": 1, "seed": 3
  })");
  r = run_cli("train --variant 2 --config " + (p.dir / "conflict.json").string() + " --out " +
              (p.dir / "x.bvoe").string());
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("disagrees") != std::string::npos);

  r = run_cli("score --ensemble " + p.ensemble.string() + " --method llr --in " +
              p.images.string() + " --ood " + p.ood_images.string() + " --out " +
              (p.dir / "x.csv").string());
  CHECK(r.exit_code == 1);
  CHECK(r.err.find("background") != std::string::npos);
}

TEST_CASE("fetch-data resolves a local manifest into the cache") {
  auto dir = fresh_dir("fetch");
  auto payload = dir / "payload.idx";
  write_file(payload, "not really idx, digests do not care");
  write_file(dir / "datasets.json", json{{"name", "demo"},
                                         {"url", "file://" + payload.string()},
                                         {"kind", "idx-images"}}
                                        .dump());
  auto r = run_cli("fetch-data " + (dir / "datasets.json").string() + " --cache-dir " +
                   (dir / "cache").string());
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(dir / "datasets.json.manifest.json"));
  auto manifest = json::parse(slurp(dir / "datasets.json.manifest.json"));
  auto cached = manifest.at("outputs").at("demo").at("path").get<std::string>();
  CHECK(fs::exists(cached));
  CHECK(slurp(cached) == slurp(payload));
}
