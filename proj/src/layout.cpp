#include "handmotion/layout.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "handmotion/error.hpp"

namespace hm {

namespace {

std::vector<int> blocks_to_features(const std::vector<int>& blocks) {
  std::vector<int> out;
  out.reserve(blocks.size() * 6);
  for (int b : blocks) {
    for (int k = 0; k < 6; ++k) out.push_back(block_offset(b) + k);
  }
  return out;
}

std::vector<int> hand_blocks() {
  std::vector<int> blocks(2 * kHandJointCount);
  std::iota(blocks.begin(), blocks.end(), kBodyJointCount);
  return blocks;
}

}  // namespace

const std::vector<int>& subset_indices(FeatureSubset subset) {
  static const std::vector<int> full = [] {
    std::vector<int> v(kFeatureCount);
    std::iota(v.begin(), v.end(), 0);
    return v;
  }();
  static const std::vector<int> arms_hands = [] {
    std::vector<int> blocks(kArmBlocks.begin(), kArmBlocks.end());
    std::sort(blocks.begin(), blocks.end());
    for (int b : hand_blocks()) blocks.push_back(b);
    return blocks_to_features(blocks);
  }();
  static const std::vector<int> hands = blocks_to_features(hand_blocks());
  switch (subset) {
    case FeatureSubset::Full274: return full;
    case FeatureSubset::ArmsHands216: return arms_hands;
    case FeatureSubset::Hands180: return hands;
  }
  return full;
}

int subset_width(FeatureSubset subset) { return static_cast<int>(subset_indices(subset).size()); }

std::string_view to_string(FeatureSubset subset) {
  switch (subset) {
    case FeatureSubset::Full274: return "full_274";
    case FeatureSubset::ArmsHands216: return "arms_hands_216";
    case FeatureSubset::Hands180: return "hands_180";
  }
  return "full_274";
}

FeatureSubset parse_feature_subset(std::string_view name) {
  if (name == "full_274") return FeatureSubset::Full274;
  if (name == "arms_hands_216") return FeatureSubset::ArmsHands216;
  if (name == "hands_180") return FeatureSubset::Hands180;
  fail(ErrorCode::ConfigError, "unknown feature subset '" + std::string(name) + "'");
}

}  // namespace hm
