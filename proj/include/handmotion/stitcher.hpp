#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "handmotion/motion.hpp"
#include "handmotion/skeleton.hpp"

namespace hm {

/// Per-frame flying-hand reconstruction for both hands.
struct HandFrame {
  std::array<Rotation6D, kHandJointCount> fingers{};
  Mat3 wrist_global = Mat3::Identity();
  bool valid = false;
};

struct HandEstimate {
  double fps = 25.0;
  Handedness handedness = Handedness::Right;
  std::vector<std::array<HandFrame, 2>> frames;  // [t][0 = left, 1 = right]

  int num_frames() const { return static_cast<int>(frames.size()); }
  HandFrame& at(int t, Side side) { return frames[t][side == Side::Left ? 0 : 1]; }
  const HandFrame& at(int t, Side side) const { return frames[t][side == Side::Left ? 0 : 1]; }
};

/// Container "HHE1": header as HMF1 with feature_count = 198, then per frame
/// 198 float32 (left fingers 90, left wrist 3x3 row-major, right fingers 90,
/// right wrist) followed by two validity bytes (left, right).
void write_hand_estimate(const std::filesystem::path& path, const HandEstimate& est);
HandEstimate read_hand_estimate(const std::filesystem::path& path);

struct StitchConfig {
  double data_weight = 1.0;
  double smooth_weight = 0.1;
  double reg_weight = 0.01;
  int max_iterations = 200;
  double step_size = 1.0;  // initial trial step of the line search
  double tolerance = 1e-6;  // stop on relative objective decrease below this
  bool init_from_neutral = true;  // false: start from the init motion's arm rotations

  void validate() const;
  static StitchConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct StitchReport {
  std::vector<double> objective;       // objective after each accepted iteration, [0] = start
  std::vector<double> frame_residual;  // mean target-joint error per frame, meters
  int iterations = 0;
  bool converged = false;

  nlohmann::json to_json() const;
};

inline constexpr int kTargetJointCount = 34;
using TargetFrame = std::array<Vec3, kTargetJointCount>;

/// Target joints in order: left/right elbow, left/right wrist, 15 left-hand
/// joints, 15 right-hand joints.
std::array<int, kTargetJointCount> target_joint_indices(const Skeleton& skel);

/// Replaces finger rotations with the hand estimate and sets each wrist's
/// local rotation so its global orientation equals the estimate. Frames whose
/// hand is flagged invalid keep the body values for that hand.
MotionSequence merge_hands(const MotionSequence& body, const HandEstimate& hands,
                           const Skeleton& skel, const RootTransform& root = {});

std::vector<TargetFrame> build_targets(const MotionSequence& merged, const Skeleton& skel,
                                       const RootTransform& root = {});

/// J = w_d sum |p - target|^2 + w_s sum_t |p_t - p_{t-1}|^2 + w_r sum angle(R_arm)^2
/// over the 34 target joints, as a function of the six arm 6D blocks per frame.
class ArmObjective {
 public:
  ArmObjective(std::vector<TargetFrame> targets, const MotionSequence& init,
               const StitchConfig& cfg, const Skeleton& skel, const RootTransform& root = {});

  int num_parameters() const { return 36 * num_frames_; }
  int num_frames() const { return num_frames_; }

  /// Arm blocks as laid out in `motion` (T x 36 values).
  std::vector<double> parameters_from(const MotionSequence& motion) const;
  std::vector<double> neutral_parameters() const;

  double value(std::span<const double> x) const;
  double value_and_gradient(std::span<const double> x, std::span<double> grad) const;

  /// Per-frame mean distance between posed target joints and targets.
  std::vector<double> frame_residuals(std::span<const double> x) const;

  MotionSequence apply(std::span<const double> x) const;

 private:
  double evaluate(std::span<const double> x, std::span<double> grad, bool want_grad) const;

  std::vector<TargetFrame> targets_;
  MotionSequence init_;
  StitchConfig cfg_;
  Skeleton skel_;
  RootTransform root_;
  int num_frames_;
  std::array<int, kTargetJointCount> target_joints_;
  std::array<int, 6> arm_joints_;
  std::vector<std::vector<Mat3>> frozen_locals_;
};

struct StitchResult {
  MotionSequence motion;
  StitchReport report;
};

/// Refines the six arm rotations per frame by L-BFGS with a step-halving line
/// search; only accepted steps that lower J are taken.
StitchResult optimize_arms(const std::vector<TargetFrame>& targets, const MotionSequence& init,
                           const StitchConfig& cfg, const Skeleton& skel,
                           const RootTransform& root = {});

}  // namespace hm
