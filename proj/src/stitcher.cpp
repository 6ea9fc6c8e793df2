#include "handmotion/stitcher.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include "handmotion/binary_io.hpp"
#include "handmotion/error.hpp"

namespace hm {

namespace {

constexpr std::string_view kHandMagic = "HHE1";
constexpr std::uint32_t kHandVersion = 1;
constexpr std::uint32_t kHandFeatureCount = 2 * (kHandJointCount * 6 + 9);

bool finite_weight(double w) { return std::isfinite(w) && w >= 0.0; }

// d(angle^2)/d(trace R) scaled into a gradient on R (a multiple of identity).
double angle_sq_trace_slope(double angle) {
  const double s = std::sin(angle);
  if (angle < 1e-6) return -1.0 - angle * angle / 6.0;
  return -angle / std::max(s, 1e-12);
}

}  // namespace

void write_hand_estimate(const std::filesystem::path& path, const HandEstimate& est) {
  if (est.frames.empty()) fail(ErrorCode::TruncatedPayload, "hand estimate has no frames");
  io::ByteWriter w;
  w.magic(kHandMagic);
  w.u32(kHandVersion);
  w.u32(static_cast<std::uint32_t>(est.frames.size()));
  w.f32(static_cast<float>(est.fps));
  w.u8(static_cast<std::uint8_t>(est.handedness));
  w.u32(kHandFeatureCount);
  for (const auto& frame : est.frames) {
    for (const HandFrame& hand : frame) {
      for (const Rotation6D& r : hand.fingers) {
        for (double v : r.r) w.f32(static_cast<float>(v));
      }
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) w.f32(static_cast<float>(hand.wrist_global(i, j)));
      }
    }
    w.u8(frame[0].valid ? 1 : 0);
    w.u8(frame[1].valid ? 1 : 0);
  }
  io::write_file(path, w.data());
}

HandEstimate read_hand_estimate(const std::filesystem::path& path) {
  const auto data = io::read_file(path);
  io::ByteReader r(data);
  if (data.size() < 4 || r.magic(4) != kHandMagic) {
    fail(ErrorCode::BadMagic, path.string() + " is not an HHE1 hand estimate");
  }
  if (const auto v = r.u32(); v != kHandVersion) {
    fail(ErrorCode::VersionUnsupported, "hand estimate version " + std::to_string(v));
  }
  const std::uint32_t frames = r.u32();
  HandEstimate est;
  est.fps = r.f32();
  est.handedness = static_cast<Handedness>(r.u8());
  if (r.u32() != kHandFeatureCount) fail(ErrorCode::LayoutMismatch, "hand estimate feature count");
  if (frames == 0) fail(ErrorCode::TruncatedPayload, "hand estimate declares zero frames");
  est.frames.resize(frames);
  for (auto& frame : est.frames) {
    for (HandFrame& hand : frame) {
      for (Rotation6D& rot : hand.fingers) {
        for (double& v : rot.r) v = r.f32();
      }
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) hand.wrist_global(i, j) = r.f32();
      }
      if (!hand.wrist_global.allFinite()) {
        fail(ErrorCode::SchemaViolation, "non-finite hand payload in " + path.string());
      }
    }
    frame[0].valid = r.u8() != 0;
    frame[1].valid = r.u8() != 0;
  }
  return est;
}

void StitchConfig::validate() const {
  if (!finite_weight(data_weight) || !finite_weight(smooth_weight) || !finite_weight(reg_weight)) {
    fail(ErrorCode::ConfigError, "stitch weights must be finite and non-negative");
  }
  if (max_iterations < 1) fail(ErrorCode::ConfigError, "max_iterations must be >= 1");
  if (!(step_size > 0.0) || !(tolerance >= 0.0)) {
    fail(ErrorCode::ConfigError, "step_size must be positive and tolerance non-negative");
  }
}

StitchConfig StitchConfig::from_json(const nlohmann::json& j) {
  StitchConfig c;
  c.data_weight = j.value("data_weight", c.data_weight);
  c.smooth_weight = j.value("smooth_weight", c.smooth_weight);
  c.reg_weight = j.value("reg_weight", c.reg_weight);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.step_size = j.value("step_size", c.step_size);
  c.tolerance = j.value("tolerance", c.tolerance);
  c.init_from_neutral = j.value("init_from_neutral", c.init_from_neutral);
  c.validate();
  return c;
}

nlohmann::json StitchConfig::to_json() const {
  return {{"data_weight", data_weight},     {"smooth_weight", smooth_weight},
          {"reg_weight", reg_weight},       {"max_iterations", max_iterations},
          {"step_size", step_size},         {"tolerance", tolerance},
          {"init_from_neutral", init_from_neutral}};
}

nlohmann::json StitchReport::to_json() const {
  return {{"objective", objective},
          {"frame_residual", frame_residual},
          {"iterations", iterations},
          {"converged", converged}};
}

std::array<int, kTargetJointCount> target_joint_indices(const Skeleton& skel) {
  std::array<int, kTargetJointCount> idx{};
  idx[0] = skel.joint_for_block(kLeftElbowBlock);
  idx[1] = skel.joint_for_block(kRightElbowBlock);
  idx[2] = skel.wrist_joint(Side::Left);
  idx[3] = skel.wrist_joint(Side::Right);
  for (int f = 0; f < kHandJointCount; ++f) {
    idx[4 + f] = skel.hand_joint(Side::Left, f);
    idx[4 + kHandJointCount + f] = skel.hand_joint(Side::Right, f);
  }
  return idx;
}

MotionSequence merge_hands(const MotionSequence& body, const HandEstimate& hands,
                           const Skeleton& skel, const RootTransform& root) {
  body.validate();
  if (body.num_frames() != hands.num_frames()) {
    fail(ErrorCode::FrameCountMismatch, "body has " + std::to_string(body.num_frames()) +
                                            " frames, hands have " +
                                            std::to_string(hands.num_frames()));
  }
  MotionSequence out = body;
  for (int t = 0; t < body.num_frames(); ++t) {
    const PoseState pose = pose_from_locals(skel, local_rotations(skel, body.frame(t)), root);
    for (Side side : {Side::Left, Side::Right}) {
      const HandFrame& hand = hands.at(t, side);
      if (!hand.valid) continue;
      for (int f = 0; f < kHandJointCount; ++f) {
        hand.fingers[f].write_to(out.frame(t).subspan(block_offset(hand_block(side, f)), 6));
      }
      const int wrist = skel.wrist_joint(side);
      const Mat3& parent_global = pose.global[skel.joints()[wrist].parent];
      const Mat3 local = parent_global.transpose() * hand.wrist_global;
      matrix_to_rot6d(local).write_to(out.frame(t).subspan(block_offset(wrist_block(side)), 6));
    }
  }
  return out;
}

std::vector<TargetFrame> build_targets(const MotionSequence& merged, const Skeleton& skel,
                                       const RootTransform& root) {
  const auto idx = target_joint_indices(skel);
  std::vector<TargetFrame> targets(merged.num_frames());
  for (int t = 0; t < merged.num_frames(); ++t) {
    const auto pos = forward_kinematics(skel, merged.frame(t), root);
    for (int k = 0; k < kTargetJointCount; ++k) targets[t][k] = pos[idx[k]];
  }
  return targets;
}

ArmObjective::ArmObjective(std::vector<TargetFrame> targets, const MotionSequence& init,
                           const StitchConfig& cfg, const Skeleton& skel,
                           const RootTransform& root)
    : targets_(std::move(targets)),
      init_(init),
      cfg_(cfg),
      skel_(skel),
      root_(root),
      num_frames_(init.num_frames()),
      target_joints_(target_joint_indices(skel)) {
  cfg_.validate();
  init_.validate();
  if (static_cast<int>(targets_.size()) != num_frames_) {
    fail(ErrorCode::FrameCountMismatch, "targets and init differ in frame count");
  }
  for (int k = 0; k < 6; ++k) arm_joints_[k] = skel_.joint_for_block(kArmBlocks[k]);
  frozen_locals_.reserve(num_frames_);
  for (int t = 0; t < num_frames_; ++t) frozen_locals_.push_back(local_rotations(skel_, init_.frame(t)));
}

std::vector<double> ArmObjective::parameters_from(const MotionSequence& motion) const {
  std::vector<double> x(num_parameters());
  for (int t = 0; t < num_frames_; ++t) {
    for (int k = 0; k < 6; ++k) {
      const auto src = motion.frame(t).subspan(block_offset(kArmBlocks[k]), 6);
      std::copy(src.begin(), src.end(), x.begin() + 36 * t + 6 * k);
    }
  }
  return x;
}

std::vector<double> ArmObjective::neutral_parameters() const {
  std::vector<double> x(num_parameters());
  const Rotation6D identity;
  for (int i = 0; i < num_frames_ * 6; ++i) std::copy(identity.r.begin(), identity.r.end(), x.begin() + 6 * i);
  return x;
}

double ArmObjective::value(std::span<const double> x) const { return evaluate(x, {}, false); }

double ArmObjective::value_and_gradient(std::span<const double> x, std::span<double> grad) const {
  return evaluate(x, grad, true);
}

double ArmObjective::evaluate(std::span<const double> x, std::span<double> grad,
                              bool want_grad) const {
  const int n = skel_.size();
  std::vector<std::array<Vec3, kTargetJointCount>> posed(num_frames_);
  std::vector<PoseState> poses(want_grad ? num_frames_ : 0);
  std::vector<std::vector<Mat3>> locals_all(want_grad ? num_frames_ : 0);
  double data = 0.0, smooth = 0.0, reg = 0.0;

  for (int t = 0; t < num_frames_; ++t) {
    std::vector<Mat3> locals = frozen_locals_[t];
    for (int k = 0; k < 6; ++k) {
      const Mat3 r = rot6d_to_matrix(x.subspan(36 * t + 6 * k, 6));
      locals[arm_joints_[k]] = r;
      const double a = rotation_angle(r);
      reg += a * a;
    }
    PoseState pose = pose_from_locals(skel_, locals, root_);
    for (int j = 0; j < kTargetJointCount; ++j) {
      posed[t][j] = pose.positions[target_joints_[j]];
      data += (posed[t][j] - targets_[t][j]).squaredNorm();
      if (t > 0) smooth += (posed[t][j] - posed[t - 1][j]).squaredNorm();
    }
    if (want_grad) {
      poses[t] = std::move(pose);
      locals_all[t] = std::move(locals);
    }
  }
  const double total = cfg_.data_weight * data + cfg_.smooth_weight * smooth + cfg_.reg_weight * reg;
  if (!want_grad) return total;

  std::fill(grad.begin(), grad.end(), 0.0);
  std::vector<Vec3> g_pos(n);
  std::vector<Mat3> g_glob(n);
  for (int t = 0; t < num_frames_; ++t) {
    std::fill(g_pos.begin(), g_pos.end(), Vec3::Zero());
    std::fill(g_glob.begin(), g_glob.end(), Mat3::Zero());
    for (int j = 0; j < kTargetJointCount; ++j) {
      Vec3 g = 2.0 * cfg_.data_weight * (posed[t][j] - targets_[t][j]);
      if (t > 0) g += 2.0 * cfg_.smooth_weight * (posed[t][j] - posed[t - 1][j]);
      if (t + 1 < num_frames_) g -= 2.0 * cfg_.smooth_weight * (posed[t + 1][j] - posed[t][j]);
      g_pos[target_joints_[j]] += g;
    }
    const PoseState& pose = poses[t];
    const std::vector<Mat3>& locals = locals_all[t];
    std::vector<Mat3> g_local(n, Mat3::Zero());
    for (int j = n - 1; j >= 1; --j) {
      const Joint& joint = skel_.joints()[j];
      const int p = joint.parent;
      g_pos[p] += g_pos[j];
      g_glob[p] += g_pos[j] * joint.offset.transpose();
      g_glob[p] += g_glob[j] * locals[j].transpose();
      g_local[j] = pose.global[p].transpose() * g_glob[j];
    }
    for (int k = 0; k < 6; ++k) {
      const int j = arm_joints_[k];
      const double a = rotation_angle(locals[j]);
      Mat3 g = g_local[j];
      g.diagonal().array() += cfg_.reg_weight * angle_sq_trace_slope(a);
      const auto g6 = rot6d_backward(x.subspan(36 * t + 6 * k, 6), g);
      std::copy(g6.begin(), g6.end(), grad.begin() + 36 * t + 6 * k);
    }
  }
  return total;
}

std::vector<double> ArmObjective::frame_residuals(std::span<const double> x) const {
  std::vector<double> out(num_frames_);
  for (int t = 0; t < num_frames_; ++t) {
    std::vector<Mat3> locals = frozen_locals_[t];
    for (int k = 0; k < 6; ++k) locals[arm_joints_[k]] = rot6d_to_matrix(x.subspan(36 * t + 6 * k, 6));
    const PoseState pose = pose_from_locals(skel_, locals, root_);
    double sum = 0.0;
    for (int j = 0; j < kTargetJointCount; ++j) {
      sum += (pose.positions[target_joints_[j]] - targets_[t][j]).norm();
    }
    out[t] = sum / kTargetJointCount;
  }
  return out;
}

MotionSequence ArmObjective::apply(std::span<const double> x) const {
  MotionSequence out = init_;
  for (int t = 0; t < num_frames_; ++t) {
    for (int k = 0; k < 6; ++k) {
      const Mat3 r = rot6d_to_matrix(x.subspan(36 * t + 6 * k, 6));
      matrix_to_rot6d(r).write_to(out.frame(t).subspan(block_offset(kArmBlocks[k]), 6));
    }
  }
  return out;
}

StitchResult optimize_arms(const std::vector<TargetFrame>& targets, const MotionSequence& init,
                           const StitchConfig& cfg, const Skeleton& skel,
                           const RootTransform& root) {
  const ArmObjective objective(targets, init, cfg, skel, root);
  const int dim = objective.num_parameters();
  std::vector<double> x =
      cfg.init_from_neutral ? objective.neutral_parameters() : objective.parameters_from(init);

  Eigen::Map<Eigen::VectorXd> xv(x.data(), dim);
  Eigen::VectorXd g(dim), g_new(dim), x_trial(dim), direction(dim);
  double f = objective.value_and_gradient(x, {g.data(), static_cast<std::size_t>(dim)});
  if (!std::isfinite(f)) fail(ErrorCode::NonFiniteObjective, "initial stitch objective is " + std::to_string(f));

  StitchReport report;
  report.objective.push_back(f);

  constexpr int kHistory = 10;
  constexpr int kMaxHalvings = 50;
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> history;  // (s, y)

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() == 0.0) {
      report.converged = true;
      break;
    }
    // Two-loop recursion.
    direction = -g;
    std::vector<double> alphas(history.size());
    for (int i = static_cast<int>(history.size()) - 1; i >= 0; --i) {
      const auto& [s, y] = history[i];
      alphas[i] = s.dot(direction) / y.dot(s);
      direction -= alphas[i] * y;
    }
    if (!history.empty()) {
      const auto& [s, y] = history.back();
      direction *= s.dot(y) / y.squaredNorm();
    }
    for (std::size_t i = 0; i < history.size(); ++i) {
      const auto& [s, y] = history[i];
      const double beta = y.dot(direction) / y.dot(s);
      direction += s * (alphas[i] - beta);
    }
    double slope = g.dot(direction);
    if (!(slope < 0.0)) {
      history.clear();
      direction = -g;
      slope = -g.squaredNorm();
    }
    double step = history.empty() ? cfg.step_size / std::max(1.0, direction.lpNorm<Eigen::Infinity>()) : 1.0;

    bool accepted = false;
    double f_trial = f;
    for (int h = 0; h < kMaxHalvings; ++h, step *= 0.5) {
      x_trial = xv + step * direction;
      try {
        f_trial = objective.value({x_trial.data(), static_cast<std::size_t>(dim)});
      } catch (const Error&) {
        continue;  // degenerate trial rotation
      }
      if (std::isfinite(f_trial) && f_trial < f && f_trial <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      report.converged = true;
      break;
    }
    const double f_new = objective.value_and_gradient({x_trial.data(), static_cast<std::size_t>(dim)},
                                                      {g_new.data(), static_cast<std::size_t>(dim)});
    if (!std::isfinite(f_new)) fail(ErrorCode::NonFiniteObjective, "stitch objective became non-finite");
    Eigen::VectorXd s = x_trial - xv;
    Eigen::VectorXd y = g_new - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      history.emplace_back(std::move(s), std::move(y));
      if (static_cast<int>(history.size()) > kHistory) history.pop_front();
    }
    const double decrease = f - f_new;
    xv = x_trial;
    g = g_new;
    f = f_new;
    report.objective.push_back(f);
    report.iterations = iter + 1;
    if (decrease <= cfg.tolerance * std::max(std::abs(f + decrease), 1e-300) || f == 0.0) {
      report.converged = true;
      break;
    }
  }
  report.frame_residual = objective.frame_residuals(x);
  return {objective.apply(x), std::move(report)};
}

}  // namespace hm
