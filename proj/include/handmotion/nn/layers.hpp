#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "handmotion/nn/autograd.hpp"

namespace hm::nn {

/// Named trainable tensors in registration order.
class ParamStore {
 public:
  Var add(const std::string& name, Mat init);
  const std::vector<std::pair<std::string, Var>>& items() const { return params_; }
  void zero_grad();
  /// Rounds every value to the nearest float32 so that in-memory weights equal
  /// what a checkpoint stores.
  void quantize_f32();
  std::size_t scalar_count() const;
  std::vector<std::pair<std::string, Mat>> snapshot() const;
  /// Copies values by name; names and shapes must match exactly.
  void restore(const std::vector<std::pair<std::string, Mat>>& values);

 private:
  std::vector<std::pair<std::string, Var>> params_;
};

struct Linear {
  Var w;
  Var b;
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng);
  Var operator()(const Var& x) const { return linear(x, w, b); }
};

struct LayerNorm {
  Var gamma;
  Var beta;
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, int width);
  Var operator()(const Var& x) const { return layer_norm(x, gamma, beta); }
};

struct EncoderConfig {
  int width = 64;
  int layers = 2;
  int heads = 4;
  int ff = 128;

  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

/// Pre-norm transformer encoder over row-stacked variable-length sequences.
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(ParamStore& store, const std::string& name, const EncoderConfig& cfg, std::mt19937_64& rng);
  Var operator()(Var x, const Segments& seg) const;

 private:
  struct Block {
    LayerNorm ln1, ln2;
    Linear q, k, v, o, ff1, ff2;
  };
  EncoderConfig cfg_;
  std::vector<Block> blocks_;
  LayerNorm final_;
};

/// Sinusoidal features of `positions`, one row each.
Mat sinusoidal(const std::vector<double>& positions, int width);

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double max_grad_norm = 0.0;  // 0 disables clipping
};

class AdamW {
 public:
  AdamW(ParamStore& store, AdamWConfig cfg);
  /// Applies one update from the accumulated gradients (missing ones count as
  /// zero) and clears them.
  void step();
  const AdamWConfig& config() const { return cfg_; }

 private:
  ParamStore& store_;
  AdamWConfig cfg_;
  std::vector<Mat> m_, v_;
  std::int64_t t_ = 0;
};

/// "HMCK" container: JSON header, named little-endian float32 tensors, and a
/// trailing SHA-256 of everything before it.
struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, Mat>> tensors;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
/// Throws BadMagic, VersionUnsupported, TruncatedPayload or ChecksumMismatch.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
/// Throws MissingCheckpoint when the file does not exist.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hm::nn
