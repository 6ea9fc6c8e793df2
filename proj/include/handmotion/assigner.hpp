#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace hm::assign {

/// Frame-level pseudo-gloss predictions for one episode.
struct LabelStream {
  std::string episode_id;
  std::vector<std::string> labels;
  std::vector<double> confidences;

  void validate() const;
  static LabelStream from_json(const nlohmann::json& j);
};

struct Segment {
  std::string label;
  int start = 0;
  int end = 0;  // inclusive
  int length() const { return end - start + 1; }
  bool operator==(const Segment&) const = default;
};

struct SegmentConfig {
  double conf_threshold = 0.5;
  int min_length = 6;  // m
  int merge_gap = 6;   // same-label runs fewer than this many frames apart are merged
};

/// Frames below the threshold are dropped, maximal same-label runs are
/// formed, runs of one label separated by fewer than merge_gap frames are
/// merged (whatever lies between them), and merged runs shorter than
/// min_length are removed. Sorted by start frame, then label.
std::vector<Segment> extract_segments(const LabelStream& s, const SegmentConfig& cfg = {});

/// Rows are points. 1 - cosine similarity, clamped to [0, 2], exact zeros on
/// the diagonal. Throws ZeroVector for an all-zero row.
Eigen::MatrixXd cosine_distance_matrix(const Eigen::MatrixXd& points);

struct KMedoidsResult {
  std::vector<int> medoids;   // point index per cluster
  std::vector<int> labels;    // cluster per point
  std::vector<double> costs;  // total cost after each iteration, [0] = initial assignment
  int iterations = 0;
};

/// Alternates nearest-medoid assignment (ties to the lowest cluster index,
/// medoids always in their own cluster) and per-cluster medoid update (the
/// member with minimal summed distance; the current medoid wins ties, then
/// the lowest point index) until the medoids stop changing or `max_iter`.
KMedoidsResult k_medoids(const Eigen::MatrixXd& distances, std::vector<int> init_medoids,
                         int max_iter = 100);

inline const std::string kFiltered = "FILTERED";

/// Sample id -> variant id, or kFiltered.
using VariantAssignment = std::map<std::string, std::string>;

/// Clusters samples and variants together with one cluster per variant,
/// seeded at the variants. A cluster holding one variant gives it to all its
/// samples; one holding none filters its samples; one holding several gives
/// each sample its most cosine-similar variant among them.
VariantAssignment assign_variants(const std::vector<std::pair<std::string, Eigen::VectorXd>>& samples,
                                  const std::vector<std::pair<std::string, Eigen::VectorXd>>& variants);

/// Gloss -> the words it translates to and its related keywords.
struct DictionaryEntry {
  std::vector<std::string> words;
  std::vector<std::string> keywords;
};

class DictionaryIndex {
 public:
  DictionaryIndex() = default;
  explicit DictionaryIndex(std::map<std::string, DictionaryEntry> glosses);
  static DictionaryIndex from_json(const nlohmann::json& j);  // {"glosses": {ID: {words, keywords}}}
  static DictionaryIndex load(const std::filesystem::path& path);

  const std::map<std::string, DictionaryEntry>& glosses() const { return glosses_; }
  /// Glosses listing `word` among their words or keywords (case-insensitive).
  std::vector<std::string> direct(const std::string& word) const;
  /// Glosses listing `word` among their words.
  std::vector<std::string> translating(const std::string& word) const;

 private:
  std::map<std::string, DictionaryEntry> glosses_;
};

/// Glosses mapping to the word plus, one hop out, the glosses translating
/// each keyword of those glosses. Sorted, unique. Throws UnknownWord.
std::vector<std::string> build_candidate_variants(const std::string& word, const DictionaryIndex& index);

}  // namespace hm::assign
