// Command-line front end. All real work happens behind the C API; this file
// only turns flags and config files into run requests and reports results.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include <bvae_ood.h>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CLI::ValidationError("cannot open " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::exception& e) {
    throw CLI::ValidationError(path + ": " + e.what());
  }
}

// Pulls the "data" block (file paths) out of a config document so the rest
// can be passed through as the command's config.
json split_data_inputs(json& config, const std::string& where, bool need_images,
                       bool need_labels, json& inputs) {
  if (config.contains("data")) {
    json data = config.at("data");
    config.erase("data");
    for (const auto& [key, value] : data.items()) {
      if (key != "images" && key != "labels")
        throw CLI::ValidationError(where + ".data: unknown key \"" + key + "\"");
      inputs[key] = value;
    }
  }
  if (need_images && !inputs.contains("images"))
    throw CLI::ValidationError(where + " needs data.images");
  if (need_labels && !inputs.contains("labels"))
    throw CLI::ValidationError(where + " needs data.labels");
  return inputs;
}

// Executes a request, writes its manifest, prints id and artifacts. Returns
// the process exit code.
int run_and_report(const json& request, const std::string& manifest_path) {
  char* manifest_text = nullptr;
  auto status = bvo_run(request.dump().c_str(), manifest_path.c_str(), &manifest_text);
  if (status != BVO_OK) {
    std::cerr << "error: " << bvo_last_error() << "\n";
    return 1;
  }
  auto manifest = json::parse(manifest_text);
  bvo_string_free(manifest_text);
  std::cout << "manifest " << manifest.at("id").get<std::string>() << " -> " << manifest_path
            << "\n";
  for (const auto& [role, spec] : manifest.at("outputs").items())
    if (spec.contains("path"))
      std::cout << "  " << role << ": " << spec.at("path").get<std::string>() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian VAE out-of-distribution detection toolkit"};
  app.set_version_flag("--version", bvo_version());
  app.require_subcommand(1);

  // ---- fetch-data ------------------------------------------------------------
  std::string fetch_manifest, cache_dir;
  auto* fetch = app.add_subcommand("fetch-data", "download dataset files into the cache");
  fetch->add_option("manifest", fetch_manifest, "JSON dataset manifest")->required();
  fetch->add_option("--cache-dir", cache_dir, "override the cache directory");

  // ---- synth-data ------------------------------------------------------------
  std::string synth_config, synth_images, synth_labels;
  auto* synth = app.add_subcommand("synth-data", "generate a synthetic IDX dataset");
  synth->add_option("--config", synth_config, "synthesis config JSON")->required();
  synth->add_option("--out-images", synth_images, "output images file")->required();
  synth->add_option("--out-labels", synth_labels, "output labels file");

  // ---- train -----------------------------------------------------------------
  int variant = 0;
  std::string train_config, train_out, train_diag;
  auto* train = app.add_subcommand("train", "train a posterior ensemble");
  train->add_option("--variant", variant, "1: shared encoder, 2: coupled chains")
      ->required()
      ->check(CLI::IsMember({1, 2}));
  train->add_option("--config", train_config, "training config JSON")->required();
  train->add_option("--out", train_out, "output ensemble file")->required();
  train->add_option("--diagnostics", train_diag, "also write per-epoch sampler diagnostics CSV");

  // ---- train-background --------------------------------------------------------
  std::string bg_config, bg_out;
  auto* bg = app.add_subcommand("train-background",
                                "train the corrupted-data point-estimate model");
  bg->add_option("--config", bg_config, "training config JSON")->required();
  bg->add_option("--out", bg_out, "output ensemble file")->required();

  // ---- score -------------------------------------------------------------------
  std::string score_ensemble, score_method, score_in, score_ood, score_out;
  std::string score_background, score_train;
  int score_k = 64;
  uint64_t score_seed = 0;
  double background_mu = -1.0;
  long train_subsample = -1;
  auto* score = app.add_subcommand("score", "score in/ood datasets with one method");
  score->add_option("--ensemble", score_ensemble, "trained ensemble file")->required();
  score->add_option("--method", score_method, "ess|kl|ll|waic|llr|tt")->required();
  score->add_option("--in", score_in, "in-distribution IDX images")->required();
  score->add_option("--ood", score_ood, "out-of-distribution IDX images")->required();
  score->add_option("--out", score_out, "output CSV")->required();
  score->add_option("--k", score_k, "importance samples per member");
  score->add_option("--seed", score_seed, "base seed for proposal noise");
  score->add_option("--background", score_background, "background ensemble (llr)");
  score->add_option("--background-mu", background_mu, "background corruption rate (llr)");
  score->add_option("--train", score_train, "training images for the typicality mean (tt)");
  score->add_option("--train-subsample", train_subsample, "rows for the typicality mean (tt)");

  // ---- eval ---------------------------------------------------------------------
  std::string eval_scores, eval_out;
  auto* eval = app.add_subcommand("eval", "metrics, curves and plots from a score CSV");
  eval->add_option("--scores", eval_scores, "score CSV")->required();
  eval->add_option("--out", eval_out, "output directory")->required();

  // ---- latent-eval -----------------------------------------------------------------
  std::string latent_ensemble, latent_config, latent_out;
  auto* latent = app.add_subcommand("latent-eval", "latent-space detection protocol");
  latent->add_option("--ensemble", latent_ensemble, "trained ensemble file")->required();
  latent->add_option("--config", latent_config, "protocol config JSON")->required();
  latent->add_option("--out", latent_out, "output directory")->required();

  // ---- rerun --------------------------------------------------------------------
  std::string rerun_manifest, rerun_dir;
  auto* redo = app.add_subcommand("rerun", "re-execute a saved run manifest");
  redo->add_option("--manifest", rerun_manifest, "manifest JSON from an earlier run")->required();
  redo->add_option("--out-dir", rerun_dir, "directory for the reproduced outputs")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fetch) {
      json doc = read_json_file(fetch_manifest);
      json config;
      if (doc.is_array())
        config["entries"] = doc;
      else if (doc.contains("entries"))
        config = doc;
      else
        config["entries"] = json::array({doc});
      if (!cache_dir.empty()) config["cache_dir"] = cache_dir;
      json request = {{"command", "fetch-data"}, {"config", config}};
      return run_and_report(request, fetch_manifest + ".manifest.json");
    }

    if (*synth) {
      json outputs = {{"images", synth_images}};
      if (!synth_labels.empty()) outputs["labels"] = synth_labels;
      json request = {{"command", "synth-data"},
                      {"config", read_json_file(synth_config)},
                      {"outputs", outputs}};
      return run_and_report(request, synth_images + ".manifest.json");
    }

    if (*train) {
      json config = read_json_file(train_config);
      json inputs = json::object();
      split_data_inputs(config, "train config", true, false, inputs);
      if (config.contains("variant") && config.at("variant") != variant)
        throw CLI::ValidationError("--variant disagrees with the config file");
      config["variant"] = variant;
      json outputs = {{"ensemble", train_out}};
      if (!train_diag.empty()) outputs["diagnostics"] = train_diag;
      json request = {
          {"command", "train"}, {"config", config}, {"inputs", inputs}, {"outputs", outputs}};
      return run_and_report(request, train_out + ".manifest.json");
    }

    if (*bg) {
      json config = read_json_file(bg_config);
      json inputs = json::object();
      split_data_inputs(config, "train-background config", true, false, inputs);
      json request = {{"command", "train-background"},
                      {"config", config},
                      {"inputs", inputs},
                      {"outputs", {{"ensemble", bg_out}}}};
      return run_and_report(request, bg_out + ".manifest.json");
    }

    if (*score) {
      json config = {{"method", score_method}, {"k", score_k}, {"seed", score_seed}};
      json inputs = {{"ensemble", score_ensemble}, {"in", score_in}, {"ood", score_ood}};
      if (!score_background.empty()) inputs["background"] = score_background;
      if (background_mu >= 0.0) config["background_mu"] = background_mu;
      if (!score_train.empty()) inputs["train"] = score_train;
      if (train_subsample >= 0) config["train_subsample"] = train_subsample;
      json request = {{"command", "score"},
                      {"config", config},
                      {"inputs", inputs},
                      {"outputs", {{"scores", score_out}}}};
      return run_and_report(request, score_out + ".manifest.json");
    }

    if (*eval) {
      json request = {{"command", "eval"},
                      {"config", json::object()},
                      {"inputs", {{"scores", eval_scores}}},
                      {"outputs", {{"dir", eval_out}}}};
      return run_and_report(request, (fs::path(eval_out) / "manifest.json").string());
    }

    if (*latent) {
      json config = read_json_file(latent_config);
      json inputs = {{"ensemble", latent_ensemble}};
      split_data_inputs(config, "latent-eval config", true, true, inputs);
      json request = {{"command", "latent-eval"},
                      {"config", config},
                      {"inputs", inputs},
                      {"outputs", {{"dir", latent_out}}}};
      return run_and_report(request, (fs::path(latent_out) / "manifest.json").string());
    }

    if (*redo) {
      auto new_manifest = (fs::path(rerun_dir) / "manifest.json").string();
      char* manifest_text = nullptr;
      auto status = bvo_rerun(rerun_manifest.c_str(), rerun_dir.c_str(), new_manifest.c_str(),
                              &manifest_text);
      if (status != BVO_OK) {
        std::cerr << "error: " << bvo_last_error() << "\n";
        return 1;
      }
      auto manifest = json::parse(manifest_text);
      bvo_string_free(manifest_text);
      std::cout << "manifest " << manifest.at("id").get<std::string>() << " -> " << new_manifest
                << "\n";
      for (const auto& [role, spec] : manifest.at("outputs").items())
        if (spec.contains("path") && spec.contains("sha256"))
          std::cout << "  " << role << ": " << spec.at("path").get<std::string>() << " sha256 "
                    << spec.at("sha256").get<std::string>() << "\n";
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
