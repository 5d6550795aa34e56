#include "core/workflows.hpp"

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <initializer_list>
#include <string_view>

#include "core/bvae.hpp"
#include "core/common.hpp"
#include "core/fetch.hpp"
#include "core/latent_ood.hpp"
#include "core/metrics.hpp"
#include "core/scores.hpp"
#include "core/sha256.hpp"

#ifndef BVO_REVISION
#define BVO_REVISION "unversioned"
#endif

namespace bvo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- strict config access ----------------------------------------------------

void check_keys(const json& j, const std::string& where,
                std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) fail(Err::Config, where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (auto a : allowed)
      if (key == a) known = true;
    if (!known) fail(Err::Config, where + ": unknown key \"" + key + "\"");
  }
}

template <class T>
T field(const json& j, const std::string& where, const char* key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(Err::Config, where + "." + key + ": " + e.what());
  }
}

template <class T>
T required_field(const json& j, const std::string& where, const char* key) {
  if (!j.contains(key)) fail(Err::Config, where + ": missing required key \"" + key + "\"");
  return field<T>(j, where, key, T{});
}

// ---- shared sub-schemas -------------------------------------------------------

Likelihood parse_likelihood(const std::string& name, const std::string& where) {
  if (name == "bernoulli") return Likelihood::BernoulliLogits;
  if (name == "gaussian") return Likelihood::GaussianUnitVar;
  fail(Err::Config, where + ": likelihood must be \"bernoulli\" or \"gaussian\", got \"" + name +
                        "\"");
}

Arch parse_arch(const json& j, const std::string& where, int data_dim) {
  check_keys(j, where, {"d_x", "hidden", "d_z", "likelihood"});
  Arch a;
  a.d_x = field<int>(j, where, "d_x", data_dim);
  if (a.d_x != data_dim)
    fail(Err::Config, where + ".d_x is " + std::to_string(a.d_x) + " but the data rows have " +
                          std::to_string(data_dim) + " values");
  a.hidden = field<std::vector<int>>(j, where, "hidden", a.hidden);
  a.d_z = field<int>(j, where, "d_z", a.d_z);
  a.likelihood =
      parse_likelihood(field<std::string>(j, where, "likelihood", "bernoulli"), where);
  return a;
}

GammaPrior parse_prior(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2)
    fail(Err::Config, where + " must be [alpha, beta]");
  GammaPrior p;
  p.alpha = j.at(0).get<double>();
  p.beta = j.at(1).get<double>();
  return p;
}

SghmcConfig parse_sghmc(const json& j, const std::string& where) {
  check_keys(j, where,
             {"step_size", "momentum_decay", "ema_rho", "v_floor", "divergence_norm", "burn_in",
              "thinning"});
  SghmcConfig c;
  c.step_size = field<double>(j, where, "step_size", c.step_size);
  c.momentum_decay = field<double>(j, where, "momentum_decay", c.momentum_decay);
  c.ema_rho = field<double>(j, where, "ema_rho", c.ema_rho);
  c.v_floor = field<double>(j, where, "v_floor", c.v_floor);
  c.divergence_norm = field<double>(j, where, "divergence_norm", c.divergence_norm);
  c.burn_in = field<long>(j, where, "burn_in", c.burn_in);
  c.thinning = field<long>(j, where, "thinning", c.thinning);
  return c;
}

ClassifierTrainConfig parse_clf(const json& j, const std::string& where, uint64_t default_seed) {
  check_keys(j, where, {"hidden", "epochs", "batch_size", "lr", "min_train_accuracy", "seed"});
  ClassifierTrainConfig c;
  c.hidden = field<std::vector<int>>(j, where, "hidden", c.hidden);
  c.epochs = field<int>(j, where, "epochs", c.epochs);
  c.batch_size = field<int>(j, where, "batch_size", c.batch_size);
  c.lr = field<double>(j, where, "lr", c.lr);
  c.min_train_accuracy = field<double>(j, where, "min_train_accuracy", c.min_train_accuracy);
  c.seed = field<uint64_t>(j, where, "seed", default_seed);
  return c;
}

// ---- request shape ------------------------------------------------------------

const std::string& input_path(const RunRequest& req, const char* role) {
  auto it = req.inputs.find(role);
  if (it == req.inputs.end())
    fail(Err::Config, req.command + " needs input \"" + std::string(role) + "\"");
  return it->second;
}

const std::string& output_path(const RunRequest& req, const char* role) {
  auto it = req.outputs.find(role);
  if (it == req.outputs.end())
    fail(Err::Config, req.command + " needs output \"" + std::string(role) + "\"");
  return it->second;
}

void check_roles(const std::map<std::string, std::string>& got, const std::string& where,
                 const std::vector<std::string_view>& required,
                 const std::vector<std::string_view>& optional) {
  for (auto r : required)
    if (!got.count(std::string(r)))
      fail(Err::Config, where + ": missing \"" + std::string(r) + "\"");
  for (const auto& [role, path] : got) {
    (void)path;
    bool known = false;
    for (auto r : required)
      if (role == r) known = true;
    for (auto r : optional)
      if (role == r) known = true;
    if (!known) fail(Err::Config, where + ": unexpected role \"" + role + "\"");
  }
}

void ensure_parent_dir(const std::string& path) {
  auto parent = fs::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) fail(Err::Io, "cannot create " + parent.string() + ": " + ec.message());
}

std::string ensure_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) fail(Err::Io, "cannot create " + path + ": " + ec.message());
  return path;
}

void digest_output_file(RunManifest& m, const std::string& key, const std::string& path) {
  m.output_digests[key] = sha256_file(path);
}

// ---- command runners ----------------------------------------------------------

void run_synth_data(RunManifest& m) {
  const auto& req = m.request;
  const std::string where = "synth-data config";
  check_roles(req.inputs, "synth-data inputs", {}, {});
  check_roles(req.outputs, "synth-data outputs", {"images"}, {"labels"});
  auto kind = required_field<std::string>(req.config, where, "kind");
  auto seed = required_field<uint64_t>(req.config, where, "seed");
  ImageDataset ds;
  if (kind == "shapes") {
    check_keys(req.config, where, {"kind", "seed", "classes", "per_class"});
    auto classes = required_field<std::vector<int>>(req.config, where, "classes");
    auto per_class = required_field<size_t>(req.config, where, "per_class");
    ds = synthetic_shapes(per_class, classes, seed);
  } else if (kind == "mixture") {
    check_keys(req.config, where, {"kind", "seed", "centers", "stddev", "n"});
    auto centers = required_field<std::vector<std::vector<double>>>(req.config, where, "centers");
    auto stddev = required_field<double>(req.config, where, "stddev");
    auto n = required_field<size_t>(req.config, where, "n");
    ds = synthetic_mixture(centers, stddev, n, seed);
  } else {
    fail(Err::Config, where + ".kind must be \"shapes\" or \"mixture\", got \"" + kind + "\"");
  }
  auto images = output_path(req, "images");
  auto labels_it = req.outputs.find("labels");
  ensure_parent_dir(images);
  if (labels_it != req.outputs.end()) ensure_parent_dir(labels_it->second);
  save_idx(ds, images, labels_it == req.outputs.end() ? "" : labels_it->second);
  digest_output_file(m, "images", images);
  if (labels_it != req.outputs.end()) digest_output_file(m, "labels", labels_it->second);
}

void run_fetch_data(RunManifest& m) {
  auto& req = m.request;
  const std::string where = "fetch-data config";
  check_roles(req.inputs, "fetch-data inputs", {}, {});
  check_keys(req.config, where, {"entries", "cache_dir"});
  auto cache = ensure_dir(field<std::string>(req.config, where, "cache_dir", default_cache_dir()));
  if (!req.config.contains("entries") || !req.config.at("entries").is_array() ||
      req.config.at("entries").empty())
    fail(Err::Config, where + ".entries must be a non-empty array");
  for (const auto& entry : req.config.at("entries")) {
    const std::string ewhere = where + ".entries[]";
    check_keys(entry, ewhere, {"name", "url", "sha256", "kind"});
    auto name = required_field<std::string>(entry, ewhere, "name");
    auto url = required_field<std::string>(entry, ewhere, "url");
    auto kind = required_field<std::string>(entry, ewhere, "kind");
    if (kind != "idx-images" && kind != "idx-labels")
      fail(Err::Config, ewhere + ".kind must be \"idx-images\" or \"idx-labels\"");
    auto expected = field<std::string>(entry, ewhere, "sha256", "");
    std::string path, digest;
    if (!expected.empty()) {
      path = fetch_with_cache(url, cache, expected);
      digest = expected;
    } else {
      // no pinned digest: trust the first fetch, record what arrived
      auto bytes = default_fetch(url);
      digest = sha256_hex(bytes);
      path = (fs::path(cache) / (digest + ".bin")).string();
      if (!fs::exists(path)) write_file_bytes(path, bytes);
    }
    req.outputs[name] = path;
    m.output_digests[name] = digest;
  }
}

void run_train(RunManifest& m) {
  const auto& req = m.request;
  check_roles(req.inputs, "train inputs", {"images"}, {"labels"});
  check_roles(req.outputs, "train outputs", {"ensemble"}, {"diagnostics"});
  auto labels_it = req.inputs.find("labels");
  auto ds = load_idx(input_path(req, "images"),
                     labels_it == req.inputs.end() ? "" : labels_it->second);
  auto cfg = parse_bvae_train_config(req.config, ds.dim());

  std::vector<EpochDiagnostics> diag;
  auto ens = train_bvae(ds, cfg, &diag);
  auto out = output_path(req, "ensemble");
  ensure_parent_dir(out);
  save_ensemble(ens, out);
  digest_output_file(m, "ensemble", out);
  if (auto it = req.outputs.find("diagnostics"); it != req.outputs.end()) {
    ensure_parent_dir(it->second);
    write_diagnostics_csv(it->second, diag, m.id());
    digest_output_file(m, "diagnostics", it->second);
  }
}

void run_train_background(RunManifest& m) {
  const auto& req = m.request;
  const std::string where = "train-background config";
  check_roles(req.inputs, "train-background inputs", {"images"}, {"labels"});
  check_roles(req.outputs, "train-background outputs", {"ensemble"}, {});
  check_keys(req.config, where,
             {"arch", "epochs", "batch_size", "n_mc", "lr", "weight_decay", "mu", "seed"});
  auto labels_it = req.inputs.find("labels");
  auto ds = load_idx(input_path(req, "images"),
                     labels_it == req.inputs.end() ? "" : labels_it->second);

  PlainVaeTrainConfig cfg;
  cfg.arch = parse_arch(req.config.value("arch", json::object()), where + ".arch", ds.dim());
  cfg.epochs = field<int>(req.config, where, "epochs", cfg.epochs);
  cfg.batch_size = field<int>(req.config, where, "batch_size", cfg.batch_size);
  cfg.n_mc = field<int>(req.config, where, "n_mc", cfg.n_mc);
  cfg.lr = field<double>(req.config, where, "lr", cfg.lr);
  cfg.weight_decay = field<double>(req.config, where, "weight_decay", cfg.weight_decay);
  cfg.seed = required_field<uint64_t>(req.config, where, "seed");
  double mu = field<double>(req.config, where, "mu", 0.2);
  if (mu < 0.0 || mu > 1.0)
    fail(Err::Config, where + ".mu must lie in [0, 1], got " + std::to_string(mu));

  auto corrupted = corrupt(ds, mu, mix_seed(cfg.seed, "background_corrupt"));
  auto params = train_plain_vae(corrupted, cfg);
  auto out = output_path(req, "ensemble");
  ensure_parent_dir(out);
  save_ensemble(wrap_plain_vae(params), out);
  digest_output_file(m, "ensemble", out);
}

void run_score(RunManifest& m) {
  const auto& req = m.request;
  const std::string where = "score config";
  check_keys(req.config, where, {"method", "k", "seed", "background_mu", "train_subsample"});
  auto method = parse_score_method(required_field<std::string>(req.config, where, "method"));

  std::vector<std::string_view> req_inputs = {"ensemble", "in", "ood"};
  if (method == ScoreMethod::Llr) req_inputs.push_back("background");
  if (method == ScoreMethod::Typicality) req_inputs.push_back("train");
  check_roles(req.inputs, "score inputs", req_inputs, {});
  check_roles(req.outputs, "score outputs", {"scores"}, {});
  if (req.config.contains("background_mu") && method != ScoreMethod::Llr)
    fail(Err::Config, where + ".background_mu only applies to method llr");
  if (req.config.contains("train_subsample") && method != ScoreMethod::Typicality)
    fail(Err::Config, where + ".train_subsample only applies to method tt");

  auto ens = load_ensemble(input_path(req, "ensemble"));
  auto ds_in = load_idx(input_path(req, "in"));
  auto ds_ood = load_idx(input_path(req, "ood"));

  ScoreBatchConfig cfg;
  cfg.method = method;
  cfg.K = field<int>(req.config, where, "k", cfg.K);
  cfg.seed = required_field<uint64_t>(req.config, where, "seed");

  BackgroundModel bm;  // must outlive score_dataset when llr is selected
  if (method == ScoreMethod::Llr) {
    bm.params = unwrap_plain_vae(load_ensemble(input_path(req, "background")));
    bm.mu = field<double>(req.config, where, "background_mu", bm.mu);
    cfg.background = &bm;
  }
  if (method == ScoreMethod::Typicality) {
    auto train_ds = load_idx(input_path(req, "train"));
    auto subsample = field<size_t>(req.config, where, "train_subsample", 2000);
    cfg.train_ll_mean =
        mean_log_lik(ens, train_ds, subsample, cfg.K, mix_seed(cfg.seed, "train_mean"));
  }

  auto recs = score_dataset(ens, ds_in, cfg, "in/");
  auto ood_recs = score_dataset(ens, ds_ood, cfg, "ood/");
  std::vector<int> labels(recs.size(), 0);
  recs.insert(recs.end(), ood_recs.begin(), ood_recs.end());
  labels.resize(recs.size(), 1);

  auto out = output_path(req, "scores");
  ensure_parent_dir(out);
  write_scores_csv(out, recs, labels, m.id());
  digest_output_file(m, "scores", out);
}

void run_eval(RunManifest& m) {
  const auto& req = m.request;
  check_keys(req.config, "eval config", {});
  check_roles(req.inputs, "eval inputs", {"scores"}, {});
  check_roles(req.outputs, "eval outputs", {"dir"}, {});
  auto rows = read_scores_csv(input_path(req, "scores"));
  auto reports = evaluate_labeled(rows);
  auto dir = ensure_dir(output_path(req, "dir"));
  auto id = m.id();
  auto report_path = (fs::path(dir) / "report.json").string();
  write_report_json(report_path, reports, id);
  digest_output_file(m, "dir/report.json", report_path);
  for (const auto& r : reports)
    for (const auto& f : export_curves(r, dir, id))
      digest_output_file(m, "dir/" + fs::path(f).filename().string(), f);
}

void run_latent_eval(RunManifest& m) {
  const auto& req = m.request;
  const std::string where = "latent-eval config";
  check_roles(req.inputs, "latent-eval inputs", {"ensemble", "images", "labels"}, {});
  check_roles(req.outputs, "latent-eval outputs", {"dir"}, {});
  check_keys(req.config, where,
             {"n_latents", "scale", "d", "seed", "j", "l", "n_disagreement_inputs", "k",
              "qz_neighbors", "clf"});

  auto ens = load_ensemble(input_path(req, "ensemble"));
  auto ds = load_idx(input_path(req, "images"), input_path(req, "labels"));

  LatentEvalConfig cfg;
  cfg.proto.n_latents = field<int>(req.config, where, "n_latents", cfg.proto.n_latents);
  cfg.proto.scale = field<double>(req.config, where, "scale", cfg.proto.scale);
  cfg.proto.seed = required_field<uint64_t>(req.config, where, "seed");
  cfg.proto.d = ens.arch.d_z;
  if (int d = field<int>(req.config, where, "d", cfg.proto.d); d != cfg.proto.d)
    fail(Err::Config, where + ".d is " + std::to_string(d) + " but the ensemble's latent size is " +
                          std::to_string(cfg.proto.d));
  cfg.J = field<int>(req.config, where, "j", cfg.J);
  cfg.L = field<int>(req.config, where, "l", cfg.L);
  cfg.n_disagreement_inputs =
      field<int>(req.config, where, "n_disagreement_inputs", cfg.n_disagreement_inputs);
  cfg.K = field<int>(req.config, where, "k", cfg.K);
  cfg.qz_neighbors = field<int>(req.config, where, "qz_neighbors", cfg.qz_neighbors);
  cfg.clf = parse_clf(req.config.value("clf", json::object()), where + ".clf",
                      mix_seed(cfg.proto.seed, "clf"));

  auto res = run_latent_protocol(ens, ds, cfg);
  auto dir = ensure_dir(output_path(req, "dir"));
  auto id = m.id();
  auto csv_path = (fs::path(dir) / "latent.csv").string();
  write_latent_csv(csv_path, res.rows, id);
  digest_output_file(m, "dir/latent.csv", csv_path);
  auto report_path = (fs::path(dir) / "report.json").string();
  write_report_json(report_path, res.reports, id);
  digest_output_file(m, "dir/report.json", report_path);
  for (const auto& r : res.reports)
    for (const auto& f : export_curves(r, dir, id))
      digest_output_file(m, "dir/" + fs::path(f).filename().string(), f);
}

std::map<std::string, int> artifact_versions_for(const std::string& command) {
  if (command == "synth-data") return {{"idx", 1}};
  if (command == "fetch-data") return {};
  if (command == "train") return {{"ensemble", 1}, {"diagnostics_csv", 1}};
  if (command == "train-background") return {{"ensemble", 1}};
  if (command == "score") return {{"scores_csv", 1}};
  if (command == "eval") return {{"report_json", 1}, {"curve_csv", 1}, {"curve_svg", 1}};
  if (command == "latent-eval")
    return {{"latent_csv", 1}, {"report_json", 1}, {"curve_csv", 1}, {"curve_svg", 1}};
  fail(Err::Config, "unknown command \"" + command + "\"");
}

std::string utc_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

BvaeTrainConfig parse_bvae_train_config(const json& config, int data_dim) {
  const std::string where = "train config";
  check_keys(config, where,
             {"variant", "arch", "epochs", "batch_size", "n_mc", "encoder_lr", "sghmc",
              "theta_prior", "phi_prior", "seed"});
  BvaeTrainConfig cfg;
  cfg.arch = parse_arch(config.value("arch", json::object()), where + ".arch", data_dim);
  cfg.variant = required_field<int>(config, where, "variant");
  if (cfg.variant != 1 && cfg.variant != 2)
    fail(Err::Config, where + ".variant must be 1 or 2, got " + std::to_string(cfg.variant));
  cfg.epochs = field<int>(config, where, "epochs", cfg.epochs);
  cfg.batch_size = field<int>(config, where, "batch_size", cfg.batch_size);
  cfg.n_mc = field<int>(config, where, "n_mc", cfg.n_mc);
  cfg.encoder_lr = field<double>(config, where, "encoder_lr", cfg.encoder_lr);
  cfg.sghmc = parse_sghmc(config.value("sghmc", json::object()), where + ".sghmc");
  if (config.contains("theta_prior"))
    cfg.theta_prior = parse_prior(config.at("theta_prior"), where + ".theta_prior");
  if (config.contains("phi_prior"))
    cfg.phi_prior = parse_prior(config.at("phi_prior"), where + ".phi_prior");
  cfg.seed = required_field<uint64_t>(config, where, "seed");
  return cfg;
}

std::string RunManifest::id() const {
  json core;
  core["command"] = request.command;
  core["config"] = request.config;
  core["input_digests"] = input_digests;
  core["artifact_versions"] = artifact_versions;
  core["revision"] = revision;
  return sha256_hex(core.dump());
}

json RunManifest::to_json() const {
  json j;
  j["id"] = id();
  j["command"] = request.command;
  j["config"] = request.config;
  j["config_digest"] = sha256_hex(request.config.dump());
  json inputs = json::object();
  for (const auto& [role, path] : request.inputs) {
    inputs[role] = {{"path", path}};
    if (auto it = input_digests.find(role); it != input_digests.end())
      inputs[role]["sha256"] = it->second;
  }
  j["inputs"] = inputs;
  json outputs = json::object();
  for (const auto& [role, path] : request.outputs) outputs[role] = {{"path", path}};
  for (const auto& [key, digest] : output_digests) {
    auto slash = key.find('/');
    auto role = key.substr(0, slash);
    if (outputs.contains(key)) {
      outputs[key]["sha256"] = digest;
    } else if (slash != std::string::npos && request.outputs.count(role)) {
      // file inside a directory output
      auto path = (fs::path(request.outputs.at(role)) / key.substr(slash + 1)).string();
      outputs[key] = {{"path", path}, {"sha256", digest}};
    } else {
      outputs[key] = {{"sha256", digest}};
    }
  }
  j["outputs"] = outputs;
  j["artifact_versions"] = artifact_versions;
  j["revision"] = revision;
  j["wall_clock"] = wall_clock;
  return j;
}

void save_manifest(const RunManifest& m, const std::string& path) {
  ensure_parent_dir(path);
  write_text_file(path, m.to_json().dump(2) + "\n");
}

RunManifest load_manifest(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    fail(Err::Format, path + ": " + e.what());
  }
  check_keys(j, path,
             {"id", "command", "config", "config_digest", "inputs", "outputs",
              "artifact_versions", "revision", "wall_clock"});
  RunManifest m;
  m.request.command = required_field<std::string>(j, path, "command");
  if (!j.contains("config")) fail(Err::Config, path + ": missing required key \"config\"");
  m.request.config = j.at("config");
  if (j.contains("inputs")) {
    for (const auto& [role, spec] : j.at("inputs").items()) {
      m.request.inputs[role] = required_field<std::string>(spec, path + ".inputs." + role, "path");
      if (spec.contains("sha256"))
        m.input_digests[role] = spec.at("sha256").get<std::string>();
    }
  }
  if (j.contains("outputs")) {
    for (const auto& [key, spec] : j.at("outputs").items()) {
      if (spec.contains("path") && key.find('/') == std::string::npos)
        m.request.outputs[key] = spec.at("path").get<std::string>();
      if (spec.contains("sha256")) m.output_digests[key] = spec.at("sha256").get<std::string>();
    }
  }
  m.artifact_versions = field<std::map<std::string, int>>(j, path, "artifact_versions", {});
  m.revision = field<std::string>(j, path, "revision", "");
  m.wall_clock = field<std::string>(j, path, "wall_clock", "");
  auto stored = required_field<std::string>(j, path, "id");
  if (stored != m.id())
    fail(Err::Integrity, path + ": stored id " + stored + " does not match recomputed " + m.id());
  return m;
}

RunManifest execute(const RunRequest& req) {
  RunManifest m;
  m.request = req;
  m.artifact_versions = artifact_versions_for(req.command);
  m.revision = BVO_REVISION;
  for (const auto& [role, path] : req.inputs) m.input_digests[role] = sha256_file(path);

  if (req.command == "synth-data")
    run_synth_data(m);
  else if (req.command == "fetch-data")
    run_fetch_data(m);
  else if (req.command == "train")
    run_train(m);
  else if (req.command == "train-background")
    run_train_background(m);
  else if (req.command == "score")
    run_score(m);
  else if (req.command == "eval")
    run_eval(m);
  else if (req.command == "latent-eval")
    run_latent_eval(m);
  else
    fail(Err::Config, "unknown command \"" + req.command + "\"");

  m.wall_clock = utc_now();
  return m;
}

RunManifest rerun(const RunManifest& m, const std::string& out_dir) {
  RunRequest req = m.request;
  for (const auto& [role, path] : req.inputs) {
    auto it = m.input_digests.find(role);
    if (it == m.input_digests.end())
      fail(Err::Integrity, "manifest records no digest for input \"" + role + "\"");
    auto actual = sha256_file(path);
    if (actual != it->second)
      fail(Err::Integrity, "input \"" + role + "\" (" + path + ") has digest " + actual +
                               ", manifest recorded " + it->second);
  }
  if (req.command != "fetch-data") {
    ensure_dir(out_dir);
    for (auto& [role, path] : req.outputs) {
      auto name = fs::path(path).lexically_normal().filename();
      if (name.empty()) name = fs::path(path).lexically_normal().parent_path().filename();
      path = (fs::path(out_dir) / name).string();
    }
  }
  return execute(req);
}

std::string default_cache_dir() {
  if (const char* env = std::getenv("BVO_CACHE_DIR"); env && *env) return env;
  if (const char* home = std::getenv("HOME"); home && *home)
    return (fs::path(home) / ".cache" / "bvae-ood").string();
  return ".bvo-cache";
}

const std::map<std::string, std::string>& command_summaries() {
  static const std::map<std::string, std::string> s = {
      {"synth-data", "generate a synthetic IDX dataset (shapes or mixture)"},
      {"fetch-data", "download dataset files into the digest-addressed cache"},
      {"train", "train a posterior ensemble (variant 1 or 2)"},
      {"train-background", "train the corrupted-data point-estimate model"},
      {"score", "score in/ood datasets with one method into a CSV"},
      {"eval", "compute detection metrics and curves from a score CSV"},
      {"latent-eval", "run the latent-space protocol end to end"},
  };
  return s;
}

}  // namespace bvo
