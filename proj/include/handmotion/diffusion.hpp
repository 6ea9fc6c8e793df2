#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "handmotion/embed.hpp"
#include "handmotion/motion.hpp"
#include "handmotion/nn/layers.hpp"

namespace hm::diffusion {

enum class ScheduleKind { Cosine, Linear };

/// Arrays are indexed by step t in [0, N]; entry 0 is the clean state
/// (alpha_bar = 1, beta = 0).
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  /// Cosine: alpha_bar(t) = f(t)/f(0), f(t) = cos^2((t/N + s)/(1 + s) * pi/2),
  /// betas clipped to 0.999. Linear: betas evenly spaced from beta_start to
  /// beta_end. Throws BadScheduleParams.
  static NoiseSchedule build(int steps, ScheduleKind kind = ScheduleKind::Cosine, double s = 0.008,
                             double beta_start = 1e-4, double beta_end = 0.02);
};

std::string_view to_string(ScheduleKind kind);
ScheduleKind parse_schedule_kind(std::string_view name);

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise.
FrameMatrix q_sample(const FrameMatrix& x0, int t, const FrameMatrix& noise, const NoiseSchedule& schedule);

/// Predicts clean motions from noisy ones. A null text pointer asks for the
/// unconditional prediction.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual std::vector<FrameMatrix> predict(const std::vector<FrameMatrix>& x_t, const std::vector<int>& t,
                                           const std::vector<const embed::Embedding*>& text) const = 0;
  virtual int features() const = 0;
  virtual int max_length() const = 0;
};

struct DiffuserConfig {
  int features = kFeatureCount;
  int text_dim = 256;
  int max_length = 128;
  nn::EncoderConfig encoder{128, 4, 4, 256};
  int steps = 100;
  ScheduleKind schedule = ScheduleKind::Cosine;
  double p_drop = 0.05;
  double lr = 1e-4;
  double weight_decay = 0.01;
  int batch_size = 32;
  int epochs = 300;
  double guidance = 15.0;

  void validate() const;
  nlohmann::json to_json() const;
  static DiffuserConfig from_json(const nlohmann::json& j);
  std::string fingerprint() const;
};

/// Transformer denoiser over [text token, timestep token, two registers,
/// one token per frame]. Text vectors are projected to the model width; the
/// unconditional case uses a learned null vector in text space.
class DiffusionModel : public Denoiser {
 public:
  DiffusionModel(DiffuserConfig cfg, std::uint64_t seed);
  DiffusionModel(const DiffusionModel&) = delete;
  DiffusionModel(DiffusionModel&&) = default;

  const DiffuserConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  /// Row-stacked prediction for sequences of the given lengths.
  nn::Var forward(const std::vector<FrameMatrix>& x_t, const std::vector<int>& t,
                  const std::vector<const embed::Embedding*>& text) const;
  std::vector<FrameMatrix> predict(const std::vector<FrameMatrix>& x_t, const std::vector<int>& t,
                                   const std::vector<const embed::Embedding*>& text) const override;
  int features() const override { return cfg_.features; }
  int max_length() const override { return cfg_.max_length; }

  /// Padded batch: rows at or beyond lengths[i] are ignored on input and
  /// zero on output. Throws LengthExceedsMax.
  std::vector<FrameMatrix> denoise(const std::vector<FrameMatrix>& padded, const std::vector<int>& lengths,
                                   const std::vector<int>& t, const std::vector<const embed::Embedding*>& text) const;

  nn::Checkpoint to_checkpoint(nlohmann::json extra = nlohmann::json::object()) const;
  static DiffusionModel from_checkpoint(const nn::Checkpoint& ck);

 private:
  DiffuserConfig cfg_;
  nn::ParamStore params_;
  nn::Var null_text_, registers_;
  nn::Linear text_proj_, time1_, time2_, motion_in_, motion_out_;
  nn::TransformerEncoder encoder_;
};

struct TrainItem {
  FrameMatrix motion;
  std::vector<embed::Embedding> texts;
};

/// Inputs of one denoising step: a text drawn uniformly per item, replaced by
/// the null condition with probability p_drop, t uniform in [1, N].
struct TrainDraw {
  std::vector<FrameMatrix> x0;
  std::vector<FrameMatrix> x_t;
  std::vector<int> t;
  std::vector<const embed::Embedding*> text;
};

TrainDraw draw_training_inputs(const std::vector<const TrainItem*>& batch, const NoiseSchedule& schedule,
                               double p_drop, std::mt19937_64& rng);

/// Mean squared error between predictions and the clean motions over every
/// valid frame and feature.
nn::Var denoising_loss(const DiffusionModel& model, const TrainDraw& draw);
double denoising_loss(const Denoiser& model, const TrainDraw& draw);

/// Draws, computes the loss, back-propagates and applies one optimizer step.
double training_step(DiffusionModel& model, const std::vector<const TrainItem*>& batch,
                     const NoiseSchedule& schedule, double p_drop, nn::AdamW& opt, std::mt19937_64& rng);

struct DiffusionTrainResult {
  std::unique_ptr<DiffusionModel> model;
  std::vector<double> epoch_losses;
};

/// Seeded shuffle per epoch, batches of cfg.batch_size. Weights end rounded
/// to float32. Throws EmptyDataset or LengthExceedsMax.
DiffusionTrainResult train_diffusion(const std::vector<TrainItem>& data, const DiffuserConfig& cfg, std::uint64_t seed,
                                     const std::function<void(int, double)>& on_epoch = {});

/// Per-step predictions, for inspection.
struct GuidanceTrace {
  int t = 0;
  FrameMatrix x0_cond;
  FrameMatrix x0_uncond;
  FrameMatrix x0_guided;
};

/// (1 - lambda) x0_uncond + lambda x0_cond, which equals
/// x0_uncond + lambda (x0_cond - x0_uncond).
FrameMatrix guide(const FrameMatrix& x0_cond, const FrameMatrix& x0_uncond, double lambda);

/// Ancestral sampling from t = N down to 1 with the x0-parameterized
/// posterior; the guided x0 estimate of the last step is returned. A null
/// text samples unconditionally. Throws LengthExceedsMax.
FrameMatrix sample(const Denoiser& model, const embed::Embedding* text, int length, double lambda,
                   const NoiseSchedule& schedule, std::uint64_t seed,
                   const std::function<void(const GuidanceTrace&)>& observer = {});

/// Projects every 6D block onto the nearest valid rotation (Gram-Schmidt);
/// degenerate blocks become the identity.
MotionSequence to_motion(const FrameMatrix& frames, std::string id, double fps = 25.0);

}  // namespace hm::diffusion
