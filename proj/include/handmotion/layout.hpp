#pragma once

#include <array>
#include <string_view>
#include <vector>

namespace hm {

// Canonical per-frame feature layout (normative):
//   [  0,  78)  13 upper-body joints x 6D
//   [ 78, 168)  15 left-hand joints x 6D
//   [168, 258)  15 right-hand joints x 6D
//   [258, 274)  16 face coefficients, passed through untouched
inline constexpr int kFeatureCount = 274;
inline constexpr int kBodyJointCount = 13;
inline constexpr int kHandJointCount = 15;
inline constexpr int kFaceCount = 16;
inline constexpr int kRotationBlockCount = kBodyJointCount + 2 * kHandJointCount;  // 43
inline constexpr int kLeftHandOffset = 6 * kBodyJointCount;                          // 78
inline constexpr int kRightHandOffset = kLeftHandOffset + 6 * kHandJointCount;      // 168
inline constexpr int kFaceOffset = kRightHandOffset + 6 * kHandJointCount;          // 258

static_assert(kFaceOffset + kFaceCount == kFeatureCount);

/// Upper-body rotation blocks in feature order. Wrists belong to the body block.
inline constexpr std::array<std::string_view, kBodyJointCount> kBodyJointNames = {
    "spine1",        "spine2",         "spine3",     "neck",        "head",
    "left_collar",   "right_collar",   "left_shoulder", "right_shoulder",
    "left_elbow",    "right_elbow",    "left_wrist", "right_wrist"};

/// Finger joints per hand, in feature order.
inline constexpr std::array<std::string_view, kHandJointCount> kHandJointNames = {
    "index1", "index2", "index3", "middle1", "middle2", "middle3", "pinky1", "pinky2",
    "pinky3", "ring1",  "ring2",  "ring3",   "thumb1",  "thumb2",  "thumb3"};

enum class Side { Left, Right };

inline constexpr int kLeftShoulderBlock = 7;
inline constexpr int kRightShoulderBlock = 8;
inline constexpr int kLeftElbowBlock = 9;
inline constexpr int kRightElbowBlock = 10;
inline constexpr int kLeftWristBlock = 11;
inline constexpr int kRightWristBlock = 12;

/// The six arm rotations refined by the stitcher, in block order.
inline constexpr std::array<int, 6> kArmBlocks = {kLeftShoulderBlock, kRightShoulderBlock,
                                                  kLeftElbowBlock,    kRightElbowBlock,
                                                  kLeftWristBlock,    kRightWristBlock};

constexpr int block_offset(int block) { return 6 * block; }

constexpr int hand_block(Side side, int finger_joint) {
  return kBodyJointCount + (side == Side::Left ? 0 : kHandJointCount) + finger_joint;
}

constexpr int wrist_block(Side side) {
  return side == Side::Left ? kLeftWristBlock : kRightWristBlock;
}

enum class FeatureSubset { Full274, ArmsHands216, Hands180 };

/// Sorted feature indices kept by a subset (274, 216 or 180 entries).
const std::vector<int>& subset_indices(FeatureSubset subset);

int subset_width(FeatureSubset subset);

std::string_view to_string(FeatureSubset subset);
FeatureSubset parse_feature_subset(std::string_view name);

}  // namespace hm
