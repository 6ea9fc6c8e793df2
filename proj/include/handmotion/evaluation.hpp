#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace hm::eval {

namespace fs = std::filesystem;

enum class Mode { MotionToMotion, MotionToText };

std::string_view to_string(Mode m);
Mode parse_mode(std::string_view s);  // "m2m" | "m2t"

struct EvalOptions {
  Mode mode = Mode::MotionToMotion;
  std::vector<int> ks{1, 3};
  double text_threshold = 0.95;  // a retrieved item also counts when its text is this similar
  int diversity_pairs = 300;     // capped at half the number of motions
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static EvalOptions from_json(const nlohmann::json& j);
};

struct RepeatMetrics {
  std::map<int, double> recall;  // k -> percent
  double fid = 0.0;
  double diversity = 0.0;
};

struct EvalReport {
  EvalOptions options;
  std::vector<RepeatMetrics> repeats;
  std::optional<double> multimodality;  // needs two or more repeats
  int num_queries = 0;
  std::string config_fingerprint;
  std::string content_hash;

  /// Flat means and population standard deviations (R1_mean, R1_std, ...,
  /// FID, FID_std, diversity, diversity_std, multimodality) next to the raw
  /// per-repeat values they were computed from.
  nlohmann::json to_json() const;
};

/// Mean and population standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& values);

/// SHA-256 over "<name>/<relative path>\0<file sha256>\n" for every file
/// under the inputs, in sorted path order.
std::string content_hash(const std::vector<fs::path>& inputs);

/// Each generation directory holds manifest.jsonl listing generated motions
/// under the ground-truth ids. Queries are the generated motions; the
/// gallery is the ground-truth motions (m2m) or their first texts (m2t).
/// Throws MissingCheckpoint or SchemaViolation.
EvalReport evaluate(const fs::path& thmr_ckpt, const std::vector<fs::path>& gen_dirs, const fs::path& gt_dir,
                    const EvalOptions& opts = {});

struct ExperimentConfig {
  fs::path gt_dir;
  std::string split = "test";
  fs::path thmr_ckpt;
  std::string generator = "diffusion";  // or "identity": copies the ground truth
  fs::path diffusion_ckpt;
  std::optional<fs::path> text_encoder;
  int repeats = 4;
  double guidance = 15.0;
  std::uint64_t seed = 0;
  fs::path out_dir;
  EvalOptions eval;

  void validate() const;
};

/// Writes <out>/gen_<r> for each seeded repeat (one generation per test
/// motion from its first text at its length, capped at the model maximum),
/// then <out>/report.json.
EvalReport evaluate_experiment(const ExperimentConfig& cfg);

}  // namespace hm::eval
