#include "handmotion/skeleton.hpp"

#include <fstream>

#include "handmotion/error.hpp"

namespace hm {

namespace {

struct FingerSpec {
  std::string_view name;
  Vec3 base;      // offset of the first phalanx from the wrist
  double len2;    // second and third phalanx lengths along the finger axis
  double len3;
};

// Left-hand rest offsets; the right hand mirrors x.
const std::array<FingerSpec, 5> kFingers = {{
    {"index", Vec3(0.095, 0.005, 0.025), 0.035, 0.025},
    {"middle", Vec3(0.100, 0.005, 0.003), 0.035, 0.027},
    {"pinky", Vec3(0.085, -0.005, -0.040), 0.022, 0.018},
    {"ring", Vec3(0.095, 0.000, -0.020), 0.032, 0.025},
    {"thumb", Vec3(0.030, -0.010, 0.035), 0.030, 0.025},
}};

Vec3 parse_vec3(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) {
    fail(ErrorCode::SchemaViolation, what + ": expected a 3-element array");
  }
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

Skeleton::Skeleton(std::vector<Joint> joints, std::map<std::string, Marker> markers)
    : joints_(std::move(joints)), markers_(std::move(markers)) {
  block_joint_.fill(-1);
  if (joints_.empty() || joints_[0].parent != -1) {
    fail(ErrorCode::LayoutMismatch, "skeleton root must have parent -1");
  }
  for (int j = 0; j < size(); ++j) {
    const Joint& joint = joints_[j];
    if (j > 0 && (joint.parent < 0 || joint.parent >= j)) {
      fail(ErrorCode::LayoutMismatch,
           "joint '" + joint.name + "' is not topologically sorted after its parent");
    }
    if (joint.block >= kRotationBlockCount || joint.block < -1) {
      fail(ErrorCode::LayoutMismatch, "joint '" + joint.name + "' has an invalid rotation block");
    }
    if (joint.block >= 0) {
      if (block_joint_[joint.block] != -1) {
        fail(ErrorCode::LayoutMismatch, "rotation block assigned twice");
      }
      block_joint_[joint.block] = j;
    }
  }
  for (int b = 0; b < kRotationBlockCount; ++b) {
    if (block_joint_[b] == -1) {
      fail(ErrorCode::LayoutMismatch, "rotation block " + std::to_string(b) + " drives no joint");
    }
  }
  for (const auto& [name, m] : markers_) {
    if (m.joint < 0 || m.joint >= size()) {
      fail(ErrorCode::LayoutMismatch, "marker '" + name + "' references a missing joint");
    }
  }
}

Skeleton Skeleton::bundled() {
  std::vector<Joint> joints;
  joints.push_back({"pelvis", -1, Vec3::Zero(), -1});
  auto add = [&](std::string name, int parent, Vec3 offset, int block) {
    joints.push_back({std::move(name), parent, offset, block});
    return static_cast<int>(joints.size()) - 1;
  };
  const int spine1 = add("spine1", 0, Vec3(0.0, 0.10, -0.01), 0);
  const int spine2 = add("spine2", spine1, Vec3(0.0, 0.13, 0.01), 1);
  const int spine3 = add("spine3", spine2, Vec3(0.0, 0.06, 0.0), 2);
  const int neck = add("neck", spine3, Vec3(0.0, 0.21, -0.02), 3);
  const int head = add("head", neck, Vec3(0.0, 0.09, 0.03), 4);
  const int lcollar = add("left_collar", spine3, Vec3(0.07, 0.12, -0.01), 5);
  const int rcollar = add("right_collar", spine3, Vec3(-0.07, 0.12, -0.01), 6);
  const int lshoulder = add("left_shoulder", lcollar, Vec3(0.12, 0.03, -0.01), 7);
  const int rshoulder = add("right_shoulder", rcollar, Vec3(-0.12, 0.03, -0.01), 8);
  const int lelbow = add("left_elbow", lshoulder, Vec3(0.26, 0.0, 0.0), 9);
  const int relbow = add("right_elbow", rshoulder, Vec3(-0.26, 0.0, 0.0), 10);
  const int lwrist = add("left_wrist", lelbow, Vec3(0.25, 0.0, 0.0), 11);
  const int rwrist = add("right_wrist", relbow, Vec3(-0.25, 0.0, 0.0), 12);

  for (Side side : {Side::Left, Side::Right}) {
    const double mirror = side == Side::Left ? 1.0 : -1.0;
    const std::string prefix = side == Side::Left ? "left_" : "right_";
    const int wrist = side == Side::Left ? lwrist : rwrist;
    // Feature order is index, middle, pinky, ring, thumb; three phalanges each.
    for (int f = 0; f < 5; ++f) {
      const FingerSpec& spec = kFingers[f];
      Vec3 base = spec.base;
      base.x() *= mirror;
      const Vec3 axis = Vec3(mirror, 0.0, 0.0);
      int parent = wrist;
      const Vec3 offsets[3] = {base, axis * spec.len2, axis * spec.len3};
      for (int k = 0; k < 3; ++k) {
        parent = add(prefix + std::string(spec.name) + std::to_string(k + 1), parent, offsets[k],
                     hand_block(side, 3 * f + k));
      }
    }
  }

  std::map<std::string, Marker> markers;
  markers["head"] = {head, Vec3(0.0, 0.08, 0.02)};
  markers["chin"] = {head, Vec3(0.0, -0.04, 0.09)};
  markers["chest"] = {spine3, Vec3(0.0, 0.05, 0.11)};
  markers["torso"] = {spine2, Vec3(0.0, 0.0, 0.12)};
  markers["left_shoulder"] = {lshoulder, Vec3::Zero()};
  markers["right_shoulder"] = {rshoulder, Vec3::Zero()};
  return Skeleton(std::move(joints), std::move(markers));
}

Skeleton Skeleton::from_json(const nlohmann::json& doc) {
  if (!doc.contains("joints") || !doc["joints"].is_array()) {
    fail(ErrorCode::SchemaViolation, "skeleton: missing 'joints' array");
  }
  std::vector<Joint> joints;
  std::map<std::string, int> by_name;
  for (const auto& jj : doc["joints"]) {
    Joint joint;
    joint.name = jj.at("name").get<std::string>();
    const auto& parent = jj.at("parent");
    if (parent.is_null()) {
      joint.parent = -1;
    } else if (parent.is_string()) {
      auto it = by_name.find(parent.get<std::string>());
      if (it == by_name.end()) {
        fail(ErrorCode::LayoutMismatch, "joint '" + joint.name + "' listed before its parent");
      }
      joint.parent = it->second;
    } else {
      joint.parent = parent.get<int>();
    }
    joint.offset = parse_vec3(jj.at("offset"), "joint '" + joint.name + "' offset");
    joint.block = jj.contains("block") && !jj["block"].is_null() ? jj["block"].get<int>() : -1;
    by_name[joint.name] = static_cast<int>(joints.size());
    joints.push_back(std::move(joint));
  }
  std::map<std::string, Marker> markers;
  if (doc.contains("markers")) {
    for (const auto& [name, mj] : doc["markers"].items()) {
      Marker m;
      const auto& target = mj.at("joint");
      if (target.is_string()) {
        auto it = by_name.find(target.get<std::string>());
        if (it == by_name.end()) fail(ErrorCode::UnknownAnchor, "marker '" + name + "'");
        m.joint = it->second;
      } else {
        m.joint = target.get<int>();
      }
      m.offset = mj.contains("offset") ? parse_vec3(mj["offset"], "marker offset") : Vec3::Zero();
      markers[name] = m;
    }
  }
  return Skeleton(std::move(joints), std::move(markers));
}

Skeleton Skeleton::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open skeleton file " + path.string());
  return from_json(nlohmann::json::parse(in));
}

nlohmann::json Skeleton::to_json() const {
  nlohmann::json doc;
  doc["joints"] = nlohmann::json::array();
  for (const Joint& j : joints_) {
    doc["joints"].push_back({{"name", j.name},
                             {"parent", j.parent < 0 ? nlohmann::json(nullptr)
                                                     : nlohmann::json(joints_[j.parent].name)},
                             {"offset", {j.offset.x(), j.offset.y(), j.offset.z()}},
                             {"block", j.block < 0 ? nlohmann::json(nullptr) : nlohmann::json(j.block)}});
  }
  doc["markers"] = nlohmann::json::object();
  for (const auto& [name, m] : markers_) {
    doc["markers"][name] = {{"joint", joints_[m.joint].name},
                            {"offset", {m.offset.x(), m.offset.y(), m.offset.z()}}};
  }
  return doc;
}

int Skeleton::index_of(std::string_view name) const {
  for (int j = 0; j < size(); ++j) {
    if (joints_[j].name == name) return j;
  }
  fail(ErrorCode::UnknownAnchor, "no joint named '" + std::string(name) + "'");
}

const Marker& Skeleton::marker(std::string_view name) const {
  auto it = markers_.find(std::string(name));
  if (it == markers_.end()) fail(ErrorCode::UnknownAnchor, "no anchor named '" + std::string(name) + "'");
  return it->second;
}

bool Skeleton::has_marker(std::string_view name) const {
  return markers_.count(std::string(name)) > 0;
}

Skeleton Skeleton::scaled(double factor) const {
  std::vector<Joint> joints = joints_;
  for (Joint& j : joints) j.offset *= factor;
  std::map<std::string, Marker> markers = markers_;
  for (auto& [name, m] : markers) m.offset *= factor;
  return Skeleton(std::move(joints), std::move(markers));
}

std::vector<Mat3> local_rotations(const Skeleton& skel, std::span<const double> frame) {
  if (static_cast<int>(frame.size()) != kFeatureCount) {
    fail(ErrorCode::LayoutMismatch,
         "frame has " + std::to_string(frame.size()) + " features, expected 274");
  }
  std::vector<Mat3> locals(skel.size(), Mat3::Identity());
  for (int j = 0; j < skel.size(); ++j) {
    const int block = skel.joints()[j].block;
    if (block >= 0) locals[j] = rot6d_to_matrix(frame.subspan(block_offset(block), 6));
  }
  return locals;
}

PoseState pose_from_locals(const Skeleton& skel, const std::vector<Mat3>& locals,
                           const RootTransform& root) {
  PoseState pose;
  const int n = skel.size();
  pose.global.resize(n);
  pose.positions.resize(n);
  for (int j = 0; j < n; ++j) {
    const Joint& joint = skel.joints()[j];
    if (joint.parent < 0) {
      pose.global[j] = root.rotation * locals[j];
      pose.positions[j] = root.translation + root.rotation * joint.offset;
    } else {
      pose.global[j] = pose.global[joint.parent] * locals[j];
      pose.positions[j] = pose.positions[joint.parent] + pose.global[joint.parent] * joint.offset;
    }
  }
  return pose;
}

std::vector<Vec3> forward_kinematics(const Skeleton& skel, std::span<const double> frame,
                                     const RootTransform& root) {
  return pose_from_locals(skel, local_rotations(skel, frame), root).positions;
}

Mat3 global_orientation(const Skeleton& skel, std::span<const double> frame, int joint,
                        const RootTransform& root) {
  if (joint < 0 || joint >= skel.size()) {
    fail(ErrorCode::IndexOutOfRange, "joint index " + std::to_string(joint));
  }
  const std::vector<Mat3> locals = local_rotations(skel, frame);
  Mat3 g = locals[joint];
  for (int j = skel.joints()[joint].parent; j >= 0; j = skel.joints()[j].parent) {
    g = locals[j] * g;
  }
  return root.rotation * g;
}

Vec3 marker_position(const Skeleton& skel, const PoseState& pose, std::string_view name) {
  const Marker& m = skel.marker(name);
  return pose.positions[m.joint] + pose.global[m.joint] * m.offset;
}

}  // namespace hm
