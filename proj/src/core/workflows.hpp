#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "core/bvae.hpp"

namespace bvo {

// Command-level plumbing shared by the CLI and the C API. A run is a command
// name plus its resolved JSON config and the named input/output files it
// touches; executing one yields a RunManifest that pins everything needed to
// reproduce the artifacts byte for byte.

struct RunRequest {
  std::string command;
  nlohmann::json config;  // schema-checked per command; unknown keys are errors
  std::map<std::string, std::string> inputs;   // role -> path
  std::map<std::string, std::string> outputs;  // role -> path
};

struct RunManifest {
  RunRequest request;
  std::map<std::string, std::string> input_digests;   // role -> sha256
  std::map<std::string, std::string> output_digests;  // role or filename -> sha256
  std::map<std::string, int> artifact_versions;       // formats this command emits
  std::string revision;    // compile-time build revision
  std::string wall_clock;  // ISO-8601 UTC; excluded from the id

  // sha256 over the fields that determine the outputs: command, config,
  // input digests, artifact versions, revision. Wall clock, paths and output
  // digests stay out, so a rerun recomputes the identical id and therefore
  // stamps identical "# manifest_id=" lines into its artifacts.
  std::string id() const;

  nlohmann::json to_json() const;
};

void save_manifest(const RunManifest& m, const std::string& path);
RunManifest load_manifest(const std::string& path);

// Validates the request, digests inputs, runs the command (stamping every
// text artifact with the manifest id), digests outputs, and returns the
// completed manifest. The manifest file itself is the caller's to place.
RunManifest execute(const RunRequest& req);

// Re-executes a saved manifest with every output redirected into out_dir
// (original basenames kept). Inputs are re-digested first; any mismatch with
// the recorded values is an integrity error.
RunManifest rerun(const RunManifest& m, const std::string& out_dir);

// $BVO_CACHE_DIR, else ~/.cache/bvae-ood, else ./.bvo-cache.
std::string default_cache_dir();

// The train command's JSON schema, shared with the C API. data_dim fills
// arch.d_x when the config leaves it out; unknown keys are config errors.
BvaeTrainConfig parse_bvae_train_config(const nlohmann::json& config, int data_dim);

// Names of the commands execute() understands.
const std::map<std::string, std::string>& command_summaries();

}  // namespace bvo
