#pragma once

// Dataset-level drivers behind the CLI subcommands and the pipeline. Each one
// reads its inputs from files, writes its outputs and returns the records it
// wrote.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "handmotion/assigner.hpp"
#include "handmotion/diffusion.hpp"
#include "handmotion/embed.hpp"
#include "handmotion/hms.hpp"
#include "handmotion/llm.hpp"
#include "handmotion/motion.hpp"
#include "handmotion/phonology.hpp"
#include "handmotion/stitcher.hpp"

namespace hm::stages {

namespace fs = std::filesystem;

/// Child seed for a named component: seed XOR the first 8 bytes of SHA-256(tag).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

/// Dataset directory: manifest.jsonl, motion files at the record paths and,
/// once texts are attached, texts.jsonl {text_id, text}.
struct Dataset {
  fs::path dir;
  std::vector<ManifestRecord> records;
  std::map<std::string, std::string> texts;  // text_id -> text

  static Dataset load(const fs::path& dir);
  MotionSequence motion(const ManifestRecord& r) const;
  /// Texts of a record in text_id order. Throws SchemaViolation for an unknown id.
  std::vector<std::string> texts_of(const ManifestRecord& r) const;
  std::vector<const ManifestRecord*> split(const std::string& name) const;
};

/// Per record of <body>/manifest.jsonl: merges <hands>/<id>.hhe into the body
/// motion and refines the arms. Writes <out>/<id>.hmf, manifest.jsonl and
/// report.jsonl {motion_id, iterations, converged, objective_start,
/// objective_end, mean_residual}.
std::vector<nlohmann::json> stitch_dataset(const fs::path& body_dir, const fs::path& hands_dir, const fs::path& out_dir,
                                           const StitchConfig& cfg, int workers);

struct HmsStageOptions {
  hms::ExtractOptions extract;
  int min_run = 4;
};

/// Motions whose manifest record names a gloss_id found in the phonology
/// file; the record's locations select the anchors and a one-handed tag
/// restricts codes to the dominant hand. Records {motion_id, gloss_id,
/// channels, block}, sorted by motion_id.
std::vector<nlohmann::json> hms_dataset(const fs::path& motions_dir, const fs::path& phonology,
                                        const fs::path& out_jsonl, const HmsStageOptions& opts, int workers);

struct DescribeOptions {
  std::string model = "default";
  double temperature = 1.0;
  std::uint64_t seed = 0;
  int max_in_flight = 4;
  fs::path prompt_dir;   // empty: bundled templates
  fs::path lexicon;      // empty: bundled lexicon
};

/// Gloss without a trailing lowercase variant letter ("THINKb" -> "THINK").
std::string base_gloss(const std::string& variant);

struct DescribeJob {
  phon::PhonologyRecord record;
  std::optional<std::string> hms_block;  // from the first motion (by id) of that gloss
  llm::Request request;
};

/// One request per phonology record. With HMS records, a record whose gloss
/// has a motion uses the HMS prompt; otherwise the attributes-only prompt.
std::vector<DescribeJob> describe_jobs(const std::vector<phon::PhonologyRecord>& records,
                                       const std::vector<nlohmann::json>& hms_records, const DescribeOptions& opts);

/// Records {gloss_id, variant, with_hms, descriptions[3]}.
std::vector<nlohmann::json> describe(const fs::path& phonology, const std::optional<fs::path>& hms_jsonl,
                                     const std::string& llm_spec, const fs::path& out_jsonl,
                                     const DescribeOptions& opts);

/// Records {episode_id, label, start, end} per label stream line.
std::vector<nlohmann::json> segments(const fs::path& labels_jsonl, const assign::SegmentConfig& cfg,
                                     const fs::path& out_jsonl);

/// <dir>/samples.jsonl {motion_id, word, embedding} and <dir>/variants.jsonl
/// {variant_id, embedding}. Samples are grouped by word and clustered with
/// the candidate variants that have an embedding. Records {motion_id, word,
/// variant_id}; a word with no candidate filters its samples.
std::vector<nlohmann::json> assign_dataset(const fs::path& embeddings_dir, const fs::path& dictionary,
                                           const fs::path& out_jsonl, int workers);

/// Joins stitched motions with descriptions. Dictionary motions (extra.source
/// "dictionary") take their own gloss_id; segment samples need a kept segment
/// overlapping theirs (IoU >= 0.5) and a non-filtered assignment. Texts are
/// localized to each motion's signer handedness.
std::vector<ManifestRecord> build_dataset(const fs::path& stitched_dir, const fs::path& segments_jsonl,
                                          const fs::path& assignments_jsonl, const fs::path& descriptions_jsonl,
                                          const fs::path& out_dir);

/// Trains on the "train" split and saves the checkpoint. Precomputed text
/// input needs the embedding table.
embed::ThmrTrainResult train_thmr(const fs::path& data_dir, const embed::ThmrConfig& cfg, std::uint64_t seed,
                                  const fs::path& out_ckpt, const std::optional<fs::path>& precomputed = {});

/// Trains on the "train" split with texts embedded by `text_encoder` (THMR
/// checkpoint or precomputed JSONL); text_dim follows the encoder. The
/// checkpoint records the encoder path and digest.
diffusion::DiffusionTrainResult train_diffusion(const fs::path& data_dir, const fs::path& text_encoder,
                                                diffusion::DiffuserConfig cfg, std::uint64_t seed,
                                                const fs::path& out_ckpt);

/// Loaded diffusion checkpoint plus its text encoder.
struct Generator {
  std::unique_ptr<diffusion::DiffusionModel> model;
  std::unique_ptr<embed::TextEmbedder> text_encoder;

  /// Throws MissingCheckpoint, or ChecksumMismatch when the recorded text
  /// encoder changed. `text_encoder` overrides the recorded path.
  static Generator load(const fs::path& ckpt, const std::optional<fs::path>& text_encoder = {});
  MotionSequence generate(const std::string& text, int length, double guidance, std::uint64_t seed,
                          const std::string& id) const;
};

}  // namespace hm::stages
