#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "handmotion/layout.hpp"
#include "handmotion/rotation.hpp"

namespace hm {

struct Joint {
  std::string name;
  int parent = -1;
  Vec3 offset = Vec3::Zero();  // rest offset from the parent, meters
  int block = -1;              // rotation block in the feature layout, -1 for fixed sites
};

/// Named body anchor: a point rigidly attached to a joint frame.
struct Marker {
  int joint = 0;
  Vec3 offset = Vec3::Zero();
};

struct RootTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

/// Upper-body kinematic tree. Joints are topologically sorted (parent index
/// below own index) and every one of the 43 rotation blocks drives exactly one
/// joint; additional joints are fixed sites that never rotate.
class Skeleton {
 public:
  Skeleton(std::vector<Joint> joints, std::map<std::string, Marker> markers);

  /// Synthetic anthropometric skeleton in a T-pose: x toward the signer's
  /// left, y up, z forward (away from the body).
  static Skeleton bundled();
  static Skeleton from_json(const nlohmann::json& doc);
  static Skeleton load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  const std::vector<Joint>& joints() const { return joints_; }
  const std::map<std::string, Marker>& markers() const { return markers_; }
  int size() const { return static_cast<int>(joints_.size()); }

  int index_of(std::string_view name) const;
  int joint_for_block(int block) const { return block_joint_[block]; }
  int wrist_joint(Side side) const { return joint_for_block(wrist_block(side)); }
  int hand_joint(Side side, int finger) const { return joint_for_block(hand_block(side, finger)); }
  const Marker& marker(std::string_view name) const;
  bool has_marker(std::string_view name) const;

  Skeleton scaled(double factor) const;

 private:
  std::vector<Joint> joints_;
  std::map<std::string, Marker> markers_;
  std::array<int, kRotationBlockCount> block_joint_{};
};

/// Per-joint global rotations and positions for one frame.
struct PoseState {
  std::vector<Mat3> global;
  std::vector<Vec3> positions;
};

/// Local rotation of every joint (identity for fixed sites).
std::vector<Mat3> local_rotations(const Skeleton& skel, std::span<const double> frame);

PoseState pose_from_locals(const Skeleton& skel, const std::vector<Mat3>& locals,
                           const RootTransform& root = {});

/// position(j) = position(parent) + G(parent) * offset(j), G composed root to leaf.
/// Throws LayoutMismatch when the frame is not 274 wide.
std::vector<Vec3> forward_kinematics(const Skeleton& skel, std::span<const double> frame,
                                     const RootTransform& root = {});

/// Product of local rotations from the root down to `joint`.
Mat3 global_orientation(const Skeleton& skel, std::span<const double> frame, int joint,
                        const RootTransform& root = {});

Vec3 marker_position(const Skeleton& skel, const PoseState& pose, std::string_view name);

}  // namespace hm
