#pragma once

#include <random>
#include <string>
#include <vector>

#include "handmotion/diffusion.hpp"
#include "handmotion/embed.hpp"
#include "test_util.hpp"

namespace hm::test {

/// One distinct random pose held for `frames` frames.
inline MotionSequence constant_pose(std::mt19937_64& rng, int frames, const std::string& id) {
  const MotionSequence one = random_motion(rng, 1, 1.5, id);
  MotionSequence m = MotionSequence::rest(id, frames);
  for (int t = 0; t < frames; ++t) m.frames.row(t) = one.frames.row(0);
  return m;
}

/// `count` separable pairs: pose k is described by a text naming shape k.
inline std::vector<embed::ThmrPair> toy_thmr_pairs(int count, int frames, std::uint64_t seed) {
  static const std::vector<std::string> words = {
      "apple",  "bridge", "candle", "desert", "engine", "forest", "garden", "harbor",
      "island", "jungle", "kettle", "ladder", "marble", "needle", "orange", "pencil",
      "quartz", "rabbit", "saddle", "tunnel", "umpire", "velvet", "walnut", "yellow",
      "zipper", "anchor", "basket", "cactus", "dragon", "falcon", "guitar", "helmet"};
  std::mt19937_64 rng(seed);
  std::vector<embed::ThmrPair> out;
  for (int k = 0; k < count; ++k) {
    const MotionSequence m = constant_pose(rng, frames, "pose" + std::to_string(k));
    out.push_back({m.frames, {"hands form the " + words[k % words.size()] + " shape"}});
  }
  return out;
}

/// Small encoders with the latent size, temperature, contrastive weight,
/// learning rate and batch size of the reference retrieval configuration.
inline embed::ThmrConfig toy_thmr_config() {
  embed::ThmrConfig cfg;
  cfg.latent_dim = 256;
  cfg.temperature = 0.1;
  cfg.lambda_nce = 0.1;
  cfg.lr = 1e-4;
  cfg.batch_size = 32;
  cfg.epochs = 100;
  cfg.motion_encoder = {64, 2, 4, 128};
  cfg.text_encoder = {64, 2, 4, 128};
  return cfg;
}

inline double text_to_motion_r1(const embed::ThmrModel& model, const std::vector<embed::ThmrPair>& data) {
  std::vector<const FrameMatrix*> motions;
  std::vector<std::string> texts;
  for (const auto& p : data) {
    motions.push_back(&p.motion);
    texts.push_back(p.texts.front());
  }
  const auto res = embed::retrieval(model.encode_texts(texts), model.encode_motions(motions),
                                    [](int q, int g) { return q == g; }, {1});
  return res.recall.at(1);
}

/// Eight labels, each a distinct constant pose paired with a random unit
/// text vector; every label appears `copies` times.
struct ToyDiffusionSet {
  std::vector<FrameMatrix> poses;
  std::vector<embed::Embedding> texts;
  std::vector<diffusion::TrainItem> items;
};

inline ToyDiffusionSet toy_diffusion_set(int labels, int frames, int text_dim, int copies, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  ToyDiffusionSet s;
  for (int k = 0; k < labels; ++k) {
    s.poses.push_back(constant_pose(rng, frames, "label" + std::to_string(k)).frames);
    embed::Embedding e(text_dim);
    for (int i = 0; i < text_dim; ++i) e(i) = z(rng);
    s.texts.push_back(e.normalized());
  }
  for (int c = 0; c < copies; ++c) {
    for (int k = 0; k < labels; ++k) s.items.push_back({s.poses[k], {s.texts[k]}});
  }
  return s;
}

/// Index of the pose closest to `m` in Euclidean distance.
inline int nearest_pose(const FrameMatrix& m, const std::vector<FrameMatrix>& poses) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(poses.size()); ++k) {
    if ((m - poses[k]).norm() < (m - poses[best]).norm()) best = k;
  }
  return best;
}

inline diffusion::DiffuserConfig toy_diffuser_config() {
  diffusion::DiffuserConfig cfg;
  cfg.text_dim = 256;
  cfg.encoder = {64, 3, 4, 128};
  cfg.steps = 100;
  cfg.p_drop = 0.05;
  cfg.lr = 1e-3;
  cfg.batch_size = 32;
  cfg.epochs = 1500;
  cfg.guidance = 15.0;
  return cfg;
}

}  // namespace hm::test
