#include "bvae_ood.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "core/bvae.hpp"
#include "core/common.hpp"
#include "core/dataset.hpp"
#include "core/metrics.hpp"
#include "core/scores.hpp"
#include "core/sha256.hpp"
#include "core/workflows.hpp"

#ifndef BVO_REVISION
#define BVO_REVISION "unversioned"
#endif

struct bvo_dataset {
  bvo::ImageDataset ds;
};

struct bvo_ensemble {
  bvo::PosteriorEnsemble ens;
};

namespace {

thread_local std::string t_last_error;

bvo_status status_of(bvo::Err kind) {
  switch (kind) {
    case bvo::Err::InvalidArgument: return BVO_E_INVALID_ARGUMENT;
    case bvo::Err::Dimension: return BVO_E_DIMENSION;
    case bvo::Err::Domain: return BVO_E_DOMAIN;
    case bvo::Err::Format: return BVO_E_FORMAT;
    case bvo::Err::Length: return BVO_E_LENGTH;
    case bvo::Err::Integrity: return BVO_E_INTEGRITY;
    case bvo::Err::Fetch: return BVO_E_FETCH;
    case bvo::Err::Numeric: return BVO_E_NUMERIC;
    case bvo::Err::Divergence: return BVO_E_DIVERGENCE;
    case bvo::Err::Config: return BVO_E_CONFIG;
    case bvo::Err::Io: return BVO_E_IO;
    case bvo::Err::Internal: return BVO_E_INTERNAL;
  }
  return BVO_E_INTERNAL;
}

// Runs f under the library's exception-to-status contract. A successful call
// clears the thread's diagnostic.
template <class F>
bvo_status guard(F&& f) {
  try {
    f();
    t_last_error.clear();
    return BVO_OK;
  } catch (const bvo::Error& e) {
    t_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return BVO_E_INTERNAL;
  }
}

void need(bool ok, const char* what) {
  if (!ok) bvo::fail(bvo::Err::InvalidArgument, std::string("null ") + what);
}

void copy_hex(const std::string& hex, char out[65]) {
  std::memcpy(out, hex.c_str(), hex.size() + 1);
}

nlohmann::json parse_json(const char* text, const char* what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    bvo::fail(bvo::Err::Format, std::string(what) + ": " + e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) bvo::fail(bvo::Err::Internal, "out of memory duplicating a result string");
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::map<std::string, std::string> parse_role_map(const nlohmann::json& j, const char* what) {
  std::map<std::string, std::string> out;
  if (!j.is_object()) bvo::fail(bvo::Err::Config, std::string(what) + " must be a JSON object");
  for (const auto& [role, path] : j.items()) {
    if (!path.is_string())
      bvo::fail(bvo::Err::Config, std::string(what) + "." + role + " must be a path string");
    out[role] = path.get<std::string>();
  }
  return out;
}

bvo::RunManifest run_request_json(const nlohmann::json& j) {
  if (!j.is_object()) bvo::fail(bvo::Err::Config, "request must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (key != "command" && key != "config" && key != "inputs" && key != "outputs")
      bvo::fail(bvo::Err::Config, "request: unknown key \"" + key + "\"");
  }
  bvo::RunRequest req;
  if (!j.contains("command") || !j.at("command").is_string())
    bvo::fail(bvo::Err::Config, "request needs a \"command\" string");
  req.command = j.at("command").get<std::string>();
  req.config = j.value("config", nlohmann::json::object());
  if (j.contains("inputs")) req.inputs = parse_role_map(j.at("inputs"), "request.inputs");
  if (j.contains("outputs")) req.outputs = parse_role_map(j.at("outputs"), "request.outputs");
  return bvo::execute(req);
}

void deliver_manifest(const bvo::RunManifest& m, const char* manifest_path,
                      char** manifest_json_out) {
  if (manifest_path) bvo::save_manifest(m, manifest_path);
  if (manifest_json_out) *manifest_json_out = dup_string(m.to_json().dump(2));
}

}  // namespace

extern "C" {

const char* bvo_version(void) { return BVO_REVISION; }

const char* bvo_last_error(void) { return t_last_error.c_str(); }

/* ---- datasets ------------------------------------------------------------ */

bvo_status bvo_dataset_open_idx(const char* images_path, const char* labels_path,
                                bvo_dataset** out) {
  return guard([&] {
    need(images_path, "images_path");
    need(out, "out");
    auto ds = bvo::load_idx(images_path, labels_path ? labels_path : "");
    *out = new bvo_dataset{std::move(ds)};
  });
}

bvo_status bvo_dataset_save_idx(const bvo_dataset* ds, const char* images_path,
                                const char* labels_path) {
  return guard([&] {
    need(ds, "dataset");
    need(images_path, "images_path");
    bvo::save_idx(ds->ds, images_path, labels_path ? labels_path : "");
  });
}

bvo_status bvo_dataset_synthetic_shapes(size_t n_per_class, const int* class_ids,
                                        size_t n_classes, uint64_t seed, bvo_dataset** out) {
  return guard([&] {
    need(class_ids, "class_ids");
    need(out, "out");
    std::vector<int> ids(class_ids, class_ids + n_classes);
    *out = new bvo_dataset{bvo::synthetic_shapes(n_per_class, ids, seed)};
  });
}

bvo_status bvo_dataset_split_classes(const bvo_dataset* ds, const int* held_out,
                                     size_t n_held_out, bvo_dataset** kept, bvo_dataset** held) {
  return guard([&] {
    need(ds, "dataset");
    need(held_out, "held_out");
    need(kept, "kept");
    need(held, "held");
    std::vector<int> ids(held_out, held_out + n_held_out);
    auto [keep, hold] = bvo::split_classes(ds->ds, ids);
    auto keep_handle = std::make_unique<bvo_dataset>(bvo_dataset{std::move(keep)});
    *held = new bvo_dataset{std::move(hold)};
    *kept = keep_handle.release();
  });
}

bvo_status bvo_dataset_corrupt(const bvo_dataset* ds, double mu, uint64_t seed,
                               bvo_dataset** out) {
  return guard([&] {
    need(ds, "dataset");
    need(out, "out");
    *out = new bvo_dataset{bvo::corrupt(ds->ds, mu, seed)};
  });
}

bvo_status bvo_dataset_take(const bvo_dataset* ds, size_t n, uint64_t seed, bvo_dataset** out) {
  return guard([&] {
    need(ds, "dataset");
    need(out, "out");
    *out = new bvo_dataset{bvo::take(ds->ds, n, seed)};
  });
}

size_t bvo_dataset_count(const bvo_dataset* ds) { return ds ? ds->ds.count() : 0; }

int bvo_dataset_dim(const bvo_dataset* ds) { return ds ? ds->ds.dim() : 0; }

bvo_status bvo_dataset_digest(const bvo_dataset* ds, char out_hex[65]) {
  return guard([&] {
    need(ds, "dataset");
    need(out_hex, "out_hex");
    copy_hex(ds->ds.digest(), out_hex);
  });
}

void bvo_dataset_free(bvo_dataset* ds) { delete ds; }

/* ---- posterior ensembles --------------------------------------------------- */

bvo_status bvo_train(const bvo_dataset* train, const char* config_json, bvo_ensemble** out) {
  return guard([&] {
    need(train, "train dataset");
    need(config_json, "config_json");
    need(out, "out");
    auto cfg = bvo::parse_bvae_train_config(parse_json(config_json, "train config"),
                                            train->ds.dim());
    *out = new bvo_ensemble{bvo::train_bvae(train->ds, cfg)};
  });
}

bvo_status bvo_ensemble_load(const char* path, bvo_ensemble** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new bvo_ensemble{bvo::load_ensemble(path)};
  });
}

bvo_status bvo_ensemble_save(const bvo_ensemble* ens, const char* path) {
  return guard([&] {
    need(ens, "ensemble");
    need(path, "path");
    bvo::save_ensemble(ens->ens, path);
  });
}

size_t bvo_ensemble_members(const bvo_ensemble* ens) { return ens ? ens->ens.members() : 0; }

int bvo_ensemble_variant(const bvo_ensemble* ens) { return ens ? ens->ens.variant : 0; }

int bvo_ensemble_latent_dim(const bvo_ensemble* ens) { return ens ? ens->ens.arch.d_z : 0; }

bvo_status bvo_ensemble_digest(const bvo_ensemble* ens, char out_hex[65]) {
  return guard([&] {
    need(ens, "ensemble");
    need(out_hex, "out_hex");
    copy_hex(ens->ens.digest(), out_hex);
  });
}

void bvo_ensemble_free(bvo_ensemble* ens) { delete ens; }

/* ---- scoring --------------------------------------------------------------- */

bvo_status bvo_ensemble_log_liks(const bvo_ensemble* ens, const double* x, size_t d, int K,
                                 uint64_t seed, double* out) {
  return guard([&] {
    need(ens, "ensemble");
    need(x, "x");
    need(out, "out");
    auto lls = bvo::ensemble_log_liks(ens->ens, {x, d}, K, seed);
    std::memcpy(out, lls.data(), lls.size() * sizeof(double));
  });
}

bvo_status bvo_score_input(const bvo_ensemble* ens, const char* method, const double* x,
                           size_t d, int K, uint64_t seed, double out[2]) {
  return guard([&] {
    need(ens, "ensemble");
    need(method, "method");
    need(x, "x");
    need(out, "out");
    auto m = bvo::parse_score_method(method);
    bvo::ScoreRecord rec;
    switch (m) {
      case bvo::ScoreMethod::Ess: rec = bvo::disagreement_input(ens->ens, {x, d}, K, seed); break;
      case bvo::ScoreMethod::KlChange: rec = bvo::kl_change_input(ens->ens, {x, d}, K, seed); break;
      case bvo::ScoreMethod::LogLik: rec = bvo::ll_score(ens->ens, {x, d}, K, seed); break;
      case bvo::ScoreMethod::Waic: rec = bvo::waic_score(ens->ens, {x, d}, K, seed); break;
      default:
        bvo::fail(bvo::Err::Config, std::string(method) +
                                        " needs batch context (background model or training "
                                        "mean); run it through the score command");
    }
    out[0] = rec.raw;
    out[1] = rec.ood_normalized;
  });
}

/* ---- detection metrics ------------------------------------------------------ */

bvo_status bvo_auroc(const double* scores, const int* labels, size_t n, double* out) {
  return guard([&] {
    need(scores, "scores");
    need(labels, "labels");
    need(out, "out");
    *out = bvo::auroc({scores, n}, {labels, n});
  });
}

bvo_status bvo_auprc(const double* scores, const int* labels, size_t n, int positive_is_ood,
                     double* out) {
  return guard([&] {
    need(scores, "scores");
    need(labels, "labels");
    need(out, "out");
    *out = bvo::auprc({scores, n}, {labels, n},
                      positive_is_ood ? bvo::PositiveClass::OoD : bvo::PositiveClass::InDist);
  });
}

bvo_status bvo_fpr_at_tpr(const double* scores, const int* labels, size_t n, double tpr_target,
                          double* out) {
  return guard([&] {
    need(scores, "scores");
    need(labels, "labels");
    need(out, "out");
    *out = bvo::fpr_at_tpr({scores, n}, {labels, n}, tpr_target);
  });
}

/* ---- command runs ----------------------------------------------------------- */

bvo_status bvo_run(const char* request_json, const char* manifest_path,
                   char** manifest_json_out) {
  return guard([&] {
    need(request_json, "request_json");
    auto m = run_request_json(parse_json(request_json, "request"));
    deliver_manifest(m, manifest_path, manifest_json_out);
  });
}

bvo_status bvo_rerun(const char* manifest_path, const char* out_dir,
                     const char* new_manifest_path, char** manifest_json_out) {
  return guard([&] {
    need(manifest_path, "manifest_path");
    need(out_dir, "out_dir");
    auto m = bvo::rerun(bvo::load_manifest(manifest_path), out_dir);
    deliver_manifest(m, new_manifest_path, manifest_json_out);
  });
}

void bvo_string_free(char* s) { std::free(s); }

/* ---- utilities --------------------------------------------------------------- */

bvo_status bvo_sha256_file(const char* path, char out_hex[65]) {
  return guard([&] {
    need(path, "path");
    need(out_hex, "out_hex");
    copy_hex(bvo::sha256_file(path), out_hex);
  });
}

}  // extern "C"
