#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "handmotion/layout.hpp"
#include "handmotion/motion.hpp"
#include "handmotion/nn/layers.hpp"

namespace hm::embed {

using Embedding = Eigen::VectorXd;

/// Lowercases ASCII, then splits into runs of letters, digits and apostrophes
/// (bytes >= 0x80 count as letters) and single-character punctuation tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Token ids: 0 is reserved for unknown tokens, the rest are sorted.
class Vocabulary {
 public:
  static constexpr int kUnknown = 0;
  static Vocabulary build(const std::vector<std::string>& texts);
  static Vocabulary from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  int id(const std::string& token) const;
  std::vector<int> encode(std::string_view text) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_{"<unk>"};
  std::map<std::string, int> ids_;
};

/// Text -> matrix of input vectors (one row per token, or a single row for a
/// sentence-level vector), read from JSON Lines {"text", "embedding"}.
class PrecomputedTexts {
 public:
  static PrecomputedTexts load(const std::filesystem::path& path);
  void add(const std::string& text, Eigen::MatrixXd rows);
  /// Throws EmptyText for an empty string, SchemaViolation when absent.
  const Eigen::MatrixXd& lookup(const std::string& text) const;
  int dim() const { return dim_; }
  bool empty() const { return table_.empty(); }

 private:
  std::map<std::string, Eigen::MatrixXd> table_;
  int dim_ = 0;
};

enum class TextInput { Tokens, Precomputed };

struct ThmrConfig {
  int latent_dim = 256;
  double temperature = 0.1;
  double lambda_nce = 0.1;
  double lr = 1e-4;
  double weight_decay = 0.0;
  int batch_size = 32;
  int epochs = 100;
  FeatureSubset subset = FeatureSubset::Full274;
  nn::EncoderConfig motion_encoder;
  nn::EncoderConfig text_encoder;
  TextInput text_input = TextInput::Tokens;
  int text_input_dim = 0;  // width of precomputed vectors

  void validate() const;
  nlohmann::json to_json() const;
  static ThmrConfig from_json(const nlohmann::json& j);
  /// SHA-256 of the canonical config JSON.
  std::string fingerprint() const;
};

/// Dual text/motion encoder. Each encoder prepends a learned summary token to
/// its sequence and projects that token's output to the latent space.
class ThmrModel {
 public:
  ThmrModel(ThmrConfig cfg, Vocabulary vocab, std::uint64_t seed);
  ThmrModel(const ThmrModel&) = delete;  // parameters are shared handles
  ThmrModel(ThmrModel&&) = default;

  const ThmrConfig& config() const { return cfg_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  /// Required when the config reads precomputed text inputs.
  void set_precomputed(std::shared_ptr<const PrecomputedTexts> table);

  /// `reduced` is T x subset width. Throws FeatureWidthMismatch.
  Embedding encode_motion(const FrameMatrix& reduced) const;
  /// Throws EmptyText.
  Embedding encode_text(const std::string& text) const;
  /// One row per input.
  Eigen::MatrixXd encode_motions(const std::vector<const FrameMatrix*>& motions) const;
  Eigen::MatrixXd encode_texts(const std::vector<std::string>& texts) const;

  nn::Var motion_forward(const std::vector<const FrameMatrix*>& motions) const;
  nn::Var text_forward(const std::vector<std::string>& texts) const;

  nn::Checkpoint to_checkpoint() const;
  static ThmrModel from_checkpoint(const nn::Checkpoint& ck);
  void save(const std::filesystem::path& path) const;
  static ThmrModel load(const std::filesystem::path& path);

 private:
  ThmrConfig cfg_;
  Vocabulary vocab_;
  nn::ParamStore params_;
  nn::Linear motion_in_, motion_out_, text_out_, text_in_;
  nn::Var motion_cls_, text_cls_, token_table_;
  nn::TransformerEncoder motion_enc_, text_enc_;
  std::shared_ptr<const PrecomputedTexts> precomputed_;
};

struct ThmrPair {
  FrameMatrix motion;  // already reduced to the config's subset
  std::vector<std::string> texts;
};

struct ThmrTrainResult {
  std::unique_ptr<ThmrModel> model;
  std::vector<double> epoch_losses;
};

/// Contrastive training with a seeded shuffle; one text drawn uniformly per
/// motion per step. A final batch of one is skipped. Weights end rounded to
/// float32 so the returned model equals its saved checkpoint.
ThmrTrainResult train_thmr(const std::vector<ThmrPair>& data, const ThmrConfig& cfg, std::uint64_t seed,
                           const std::function<void(int, double)>& on_epoch = {},
                           std::shared_ptr<const PrecomputedTexts> precomputed = {});

/// Sentence vector used to condition other models.
class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual Embedding embed(const std::string& text) const = 0;
  virtual int dim() const = 0;
};

class ThmrTextEmbedder : public TextEmbedder {
 public:
  explicit ThmrTextEmbedder(std::shared_ptr<const ThmrModel> model) : model_(std::move(model)) {}
  Embedding embed(const std::string& text) const override { return model_->encode_text(text); }
  int dim() const override { return model_->config().latent_dim; }

 private:
  std::shared_ptr<const ThmrModel> model_;
};

/// Uses the single row stored per text, or the mean of its rows.
class PrecomputedTextEmbedder : public TextEmbedder {
 public:
  explicit PrecomputedTextEmbedder(PrecomputedTexts table) : table_(std::move(table)) {}
  Embedding embed(const std::string& text) const override;
  int dim() const override { return table_.dim(); }

 private:
  PrecomputedTexts table_;
};

/// "HMCK" checkpoint path -> THMR text encoder, anything else -> JSONL table.
std::unique_ptr<TextEmbedder> load_text_embedder(const std::filesystem::path& path);

double cosine_similarity(const Embedding& a, const Embedding& b);

struct RetrievalResult {
  std::vector<std::vector<int>> ranked;  // per query: gallery indices, best first
  std::map<int, double> recall;          // k -> percent of queries with a hit in the top k
};

/// Rows are vectors. Gallery items are sorted by descending cosine similarity,
/// ties by gallery index. Throws ZeroVector.
RetrievalResult retrieval(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& gallery,
                          const std::function<bool(int, int)>& correct, const std::vector<int>& ks = {1, 3});

/// Strictly greater than the threshold.
bool text_similarity_correct(const Embedding& a, const Embedding& b, double threshold = 0.95);

/// Frechet distance between Gaussian fits of two row sets (unbiased
/// covariances). Throws InsufficientSamples or CovarianceSingularBeyondTolerance.
double fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Mean Euclidean distance over `n_pairs` disjoint pairs drawn by a seeded
/// shuffle. Throws InsufficientSamples.
double diversity(const Eigen::MatrixXd& embeddings, int n_pairs, std::uint64_t seed);

/// Mean over texts of the mean pairwise distance between generations sharing
/// that text. Throws InsufficientSamples.
double multimodality(const std::vector<Eigen::MatrixXd>& per_text);

/// In-place Fisher-Yates; the same generator state always gives the same order.
void seeded_shuffle(std::vector<int>& v, std::mt19937_64& rng);

}  // namespace hm::embed
