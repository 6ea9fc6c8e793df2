#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "handmotion/layout.hpp"

namespace hm {

using FrameMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Handedness : std::uint8_t { Right = 0, Left = 1 };

std::string_view to_string(Handedness h);
Handedness parse_handedness(std::string_view s);

/// T frames x 274 features. Values are float64 in memory, float32 on disk.
struct MotionSequence {
  std::string id;
  double fps = 25.0;
  Handedness handedness = Handedness::Right;
  FrameMatrix frames;

  int num_frames() const { return static_cast<int>(frames.rows()); }
  std::span<const double> frame(int t) const {
    return {frames.row(t).data(), static_cast<std::size_t>(frames.cols())};
  }
  std::span<double> frame(int t) {
    return {frames.row(t).data(), static_cast<std::size_t>(frames.cols())};
  }

  /// Throws LayoutMismatch / TruncatedPayload when invariants fail.
  void validate() const;

  /// T frames in the rest pose (identity rotations, zero face).
  static MotionSequence rest(std::string id, int num_frames, double fps = 25.0);
};

/// Reduced per-frame features (T x 274/216/180).
FrameMatrix select_subset(const MotionSequence& m, FeatureSubset subset);

/// Binary container "HMF1". The sequence id is the file stem.
void write_motion(const std::filesystem::path& path, const MotionSequence& m);
MotionSequence read_motion(const std::filesystem::path& path);

/// One line of a dataset manifest.jsonl.
struct ManifestRecord {
  std::string id;
  std::string path;  // relative to the dataset directory
  std::vector<std::string> text_ids;
  std::string split = "train";
  nlohmann::json extra = nlohmann::json::object();  // any further fields, preserved verbatim
};

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

/// JSON Lines helpers shared by every stage.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

}  // namespace hm
