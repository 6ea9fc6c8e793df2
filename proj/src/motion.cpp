#include "handmotion/motion.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "handmotion/binary_io.hpp"
#include "handmotion/error.hpp"
#include "handmotion/rotation.hpp"

namespace hm {

namespace {

constexpr std::string_view kMotionMagic = "HMF1";
constexpr std::uint32_t kMotionVersion = 1;

}  // namespace

std::string_view to_string(Handedness h) { return h == Handedness::Right ? "right" : "left"; }

Handedness parse_handedness(std::string_view s) {
  if (s == "right" || s == "R" || s == "r") return Handedness::Right;
  if (s == "left" || s == "L" || s == "l") return Handedness::Left;
  fail(ErrorCode::SchemaViolation, "unknown handedness '" + std::string(s) + "'");
}

void MotionSequence::validate() const {
  if (frames.rows() == 0) fail(ErrorCode::TruncatedPayload, "motion '" + id + "' has no frames");
  if (frames.cols() != kFeatureCount) {
    fail(ErrorCode::LayoutMismatch, "motion '" + id + "' has " + std::to_string(frames.cols()) +
                                        " features per frame, expected 274");
  }
  if (!(fps > 0.0) || !std::isfinite(fps)) fail(ErrorCode::SchemaViolation, "fps must be positive");
}

MotionSequence MotionSequence::rest(std::string id, int num_frames, double fps) {
  MotionSequence m;
  m.id = std::move(id);
  m.fps = fps;
  m.frames = FrameMatrix::Zero(num_frames, kFeatureCount);
  const Rotation6D identity;
  for (int t = 0; t < num_frames; ++t) {
    for (int b = 0; b < kRotationBlockCount; ++b) {
      identity.write_to(m.frame(t).subspan(block_offset(b), 6));
    }
  }
  return m;
}

FrameMatrix select_subset(const MotionSequence& m, FeatureSubset subset) {
  if (subset == FeatureSubset::Full274) return m.frames;
  const std::vector<int>& idx = subset_indices(subset);
  FrameMatrix out(m.frames.rows(), static_cast<Eigen::Index>(idx.size()));
  for (Eigen::Index c = 0; c < out.cols(); ++c) out.col(c) = m.frames.col(idx[c]);
  return out;
}

void write_motion(const std::filesystem::path& path, const MotionSequence& m) {
  m.validate();
  io::ByteWriter w;
  w.magic(kMotionMagic);
  w.u32(kMotionVersion);
  w.u32(static_cast<std::uint32_t>(m.frames.rows()));
  w.f32(static_cast<float>(m.fps));
  w.u8(static_cast<std::uint8_t>(m.handedness));
  w.u32(static_cast<std::uint32_t>(m.frames.cols()));
  for (Eigen::Index t = 0; t < m.frames.rows(); ++t) {
    for (Eigen::Index c = 0; c < m.frames.cols(); ++c) w.f32(static_cast<float>(m.frames(t, c)));
  }
  io::write_file(path, w.data());
}

MotionSequence read_motion(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> data = io::read_file(path);
  io::ByteReader r(data);
  if (data.size() < kMotionMagic.size() || r.magic(kMotionMagic.size()) != kMotionMagic) {
    fail(ErrorCode::BadMagic, path.string() + " is not an HMF1 motion file");
  }
  const std::uint32_t version = r.u32();
  if (version != kMotionVersion) {
    fail(ErrorCode::VersionUnsupported, "motion container version " + std::to_string(version));
  }
  const std::uint32_t frame_count = r.u32();
  MotionSequence m;
  m.id = path.stem().string();
  m.fps = r.f32();
  const std::uint8_t hand = r.u8();
  if (hand > 1) fail(ErrorCode::SchemaViolation, "handedness byte must be 0 or 1");
  m.handedness = static_cast<Handedness>(hand);
  const std::uint32_t feature_count = r.u32();
  if (frame_count == 0) fail(ErrorCode::TruncatedPayload, path.string() + " declares zero frames");
  if (feature_count != static_cast<std::uint32_t>(kFeatureCount)) {
    fail(ErrorCode::LayoutMismatch, "feature_count " + std::to_string(feature_count));
  }
  r.need(static_cast<std::size_t>(frame_count) * feature_count * 4);
  m.frames.resize(frame_count, feature_count);
  for (std::uint32_t t = 0; t < frame_count; ++t) {
    for (std::uint32_t c = 0; c < feature_count; ++c) m.frames(t, c) = r.f32();
  }
  if (!(m.fps > 0.0)) fail(ErrorCode::SchemaViolation, "fps must be positive");
  return m;
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorCode::SchemaViolation,
           path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& records) {
  std::string text;
  for (const auto& r : records) {
    text += r.dump();
    text += '\n';
  }
  io::write_text(path, text);
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::vector<ManifestRecord> out;
  for (nlohmann::json j : read_jsonl(path)) {
    ManifestRecord r;
    try {
      r.id = j.at("id").get<std::string>();
      r.path = j.at("path").get<std::string>();
      if (j.contains("text_ids")) r.text_ids = j["text_ids"].get<std::vector<std::string>>();
      if (j.contains("split")) r.split = j["split"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::SchemaViolation, path.string() + ": " + e.what());
    }
    for (const char* key : {"id", "path", "text_ids", "split"}) j.erase(key);
    r.extra = std::move(j);
    out.push_back(std::move(r));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  std::vector<nlohmann::json> lines;
  lines.reserve(records.size());
  for (const ManifestRecord& r : records) {
    nlohmann::json j = r.extra.is_object() ? r.extra : nlohmann::json::object();
    j["id"] = r.id;
    j["path"] = r.path;
    j["text_ids"] = r.text_ids;
    j["split"] = r.split;
    lines.push_back(std::move(j));
  }
  write_jsonl(path, lines);
}

}  // namespace hm
