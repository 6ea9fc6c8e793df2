#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "handmotion/error.hpp"
#include "handmotion/stages.hpp"

namespace hm::pipeline {

namespace fs = std::filesystem;

/// Stage names in dependency order.
const std::vector<std::string>& stage_order();

struct Inputs {
  fs::path body;        // body estimates: manifest.jsonl + motion files
  fs::path hands;       // <id>.hhe hand estimates
  fs::path phonology;   // JSONL phonology records
  fs::path labels;      // JSONL frame-level label streams
  fs::path embeddings;  // samples.jsonl + variants.jsonl
  fs::path dictionary;  // {"glosses": {...}}
  std::string llm;      // URL or fixtures:DIR
  fs::path text_encoder;  // for the diffuser; empty = the trained THMR checkpoint
};

/// Relative paths are resolved against the directory of the config file.
/// Per-stage sections ("stitch", "hms", "describe", "segments", "thmr",
/// "diffusion", "eval") hold that stage's settings.
struct PipelineConfig {
  fs::path out_dir;
  std::vector<std::string> stages;
  std::uint64_t seed = 0;
  int workers = 1;
  Inputs inputs;
  nlohmann::json sections = nlohmann::json::object();

  /// Throws ConfigError for unknown stages, missing keys or bad values.
  static PipelineConfig from_json(const nlohmann::json& j, const fs::path& base_dir);
  static PipelineConfig load(const fs::path& path);
  nlohmann::json section(const std::string& name) const;
};

/// A stage raised `cause`; outputs written so far are left in place.
class StageFailure : public Error {
 public:
  StageFailure(std::string stage, ErrorCode cause, const std::string& message)
      : Error(ErrorCode::StageFailure, "stage '" + stage + "': " + message), stage_(std::move(stage)), cause_(cause) {}
  const std::string& stage() const noexcept { return stage_; }
  ErrorCode cause() const noexcept { return cause_; }

 private:
  std::string stage_;
  ErrorCode cause_;
};

struct PipelineResult {
  std::vector<std::string> executed;
  std::vector<std::string> skipped;
};

/// Runs the selected stages in dependency order, each into <out>/<stage>/.
/// A stage finishing writes <out>/<stage>/stage.json with the hash of its
/// inputs (file bytes, settings and seed) and the digest of each output; a
/// later run whose input hash and outputs still match skips the stage.
PipelineResult run_pipeline(const PipelineConfig& cfg);

/// Seed handed to one stage's stochastic components.
std::uint64_t stage_seed(const PipelineConfig& cfg, const std::string& stage);

/// Describe-stage settings as the pipeline passes them.
stages::DescribeOptions describe_options(const PipelineConfig& cfg);

/// SHA-256 over the relative path and content digest of every file under
/// `path` (or of the file itself), ignoring stage.json manifests.
std::string tree_hash(const fs::path& path);

}  // namespace hm::pipeline
