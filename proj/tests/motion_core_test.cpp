#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "handmotion/binary_io.hpp"
#include "handmotion/error.hpp"
#include "handmotion/layout.hpp"
#include "handmotion/motion.hpp"
#include "handmotion/skeleton.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace hm {
namespace {

using test::random_motion;
using test::random_raw6d;
using test::random_rotation;

TEST(Rotation6D, IdentityDecodesToIdentity) {
  Rotation6D r;
  r.r = {1, 0, 0, 0, 1, 0};
  EXPECT_TRUE(rot6d_to_matrix(r).isApprox(Mat3::Identity(), 0.0));
}

TEST(Rotation6D, QuarterTurnAboutZ) {
  Rotation6D r;
  r.r = {0, 1, 0, -1, 0, 0};
  const Mat3 expected = axis_angle_matrix(Vec3::UnitZ(), std::numbers::pi / 2);
  EXPECT_LT((rot6d_to_matrix(r) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Rotation6D, RandomInputsAreProperRotations) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const Mat3 m = rot6d_to_matrix(random_raw6d(rng));
    EXPECT_LT((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(m.determinant(), 1.0, 1e-9);
  }
}

TEST(Rotation6D, FirstColumnIsNormalizedInput) {
  std::mt19937_64 rng(2);
  const Rotation6D r = random_raw6d(rng);
  const Vec3 a(r.r[0], r.r[1], r.r[2]);
  EXPECT_LT((rot6d_to_matrix(r).col(0) - a.normalized()).norm(), 1e-15);
}

TEST(Rotation6D, DegenerateInputsThrow) {
  Rotation6D zero;
  zero.r = {0, 0, 0, 0, 1, 0};
  Rotation6D colinear;
  colinear.r = {1, 2, 3, 2, 4, 6};
  for (const Rotation6D& r : {zero, colinear}) {
    try {
      rot6d_to_matrix(r);
      FAIL() << "expected DegenerateRotation";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::DegenerateRotation);
    }
  }
}

TEST(Rotation6D, MatrixToSixD) {
  EXPECT_EQ(matrix_to_rot6d(Mat3::Identity()).r, (std::array<double, 6>{1, 0, 0, 0, 1, 0}));
  Mat3 flip_x = Mat3::Identity();
  flip_x(1, 1) = -1;
  flip_x(2, 2) = -1;  // exact 180 degrees about x
  EXPECT_EQ(matrix_to_rot6d(flip_x).r, (std::array<double, 6>{1, 0, 0, 0, -1, 0}));
}

TEST(Rotation6D, RoundTripIsFixedPoint) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const Mat3 m = rot6d_to_matrix(random_raw6d(rng));
    const Rotation6D r = matrix_to_rot6d(m);
    EXPECT_LT((rot6d_to_matrix(r) - m).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((rot6d_to_matrix(matrix_to_rot6d(rot6d_to_matrix(r))) - m).cwiseAbs().maxCoeff(),
              1e-9);
  }
}

TEST(Rotation6D, RejectsNonRotation) {
  Mat3 scaled = 2.0 * Mat3::Identity();
  Mat3 reflection = Mat3::Identity();
  reflection(0, 0) = -1;
  for (const Mat3& m : {scaled, reflection}) {
    try {
      matrix_to_rot6d(m);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::NotARotation);
    }
  }
}

TEST(Rotation6D, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Rotation6D r = random_raw6d(rng);
    Mat3 w;
    for (int i = 0; i < 9; ++i) w(i / 3, i % 3) = n(rng);
    auto objective = [&](const Rotation6D& x) { return (rot6d_to_matrix(x).cwiseProduct(w)).sum(); };
    const auto grad = rot6d_backward(r.r, w);
    for (int k = 0; k < 6; ++k) {
      Rotation6D plus = r, minus = r;
      const double h = 1e-6;
      plus.r[k] += h;
      minus.r[k] -= h;
      const double fd = (objective(plus) - objective(minus)) / (2 * h);
      EXPECT_NEAR(grad[k], fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Layout, SubsetSizesAndOrdering) {
  EXPECT_EQ(subset_width(FeatureSubset::Full274), 274);
  EXPECT_EQ(subset_width(FeatureSubset::ArmsHands216), 216);
  EXPECT_EQ(subset_width(FeatureSubset::Hands180), 180);
  for (auto s : {FeatureSubset::Full274, FeatureSubset::ArmsHands216, FeatureSubset::Hands180}) {
    const auto& idx = subset_indices(s);
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
  }
  EXPECT_EQ(subset_indices(FeatureSubset::Hands180).front(), kLeftHandOffset);
  EXPECT_EQ(subset_indices(FeatureSubset::Hands180).back(), kFaceOffset - 1);
  EXPECT_EQ(parse_feature_subset("arms_hands_216"), FeatureSubset::ArmsHands216);
}

TEST(Layout, SelectSubset) {
  std::mt19937_64 rng(5);
  const MotionSequence m = random_motion(rng, 4);
  const FrameMatrix full = select_subset(m, FeatureSubset::Full274);
  EXPECT_EQ(std::memcmp(full.data(), m.frames.data(), sizeof(double) * full.size()), 0);
  const FrameMatrix arms = select_subset(m, FeatureSubset::ArmsHands216);
  const FrameMatrix hands = select_subset(m, FeatureSubset::Hands180);
  EXPECT_EQ(arms.cols(), 216);
  EXPECT_EQ(hands.cols(), 180);
  // Nesting: the hand features are the trailing 180 columns of the arm+hand subset.
  EXPECT_EQ(arms.rightCols(180), hands);
  EXPECT_EQ(arms.leftCols(6), m.frames.block(0, 6 * kLeftShoulderBlock, 4, 6));
}

TEST(Skeleton, BundledIsConsistent) {
  const Skeleton s = Skeleton::bundled();
  EXPECT_EQ(s.size(), 1 + 13 + 30);
  for (int j = 1; j < s.size(); ++j) EXPECT_LT(s.joints()[j].parent, j);
  for (const char* anchor : {"head", "torso", "chin", "chest", "left_shoulder", "right_shoulder"}) {
    EXPECT_TRUE(s.has_marker(anchor)) << anchor;
  }
  EXPECT_EQ(s.joints()[s.wrist_joint(Side::Left)].name, "left_wrist");
  EXPECT_EQ(s.joints()[s.hand_joint(Side::Right, 14)].name, "right_thumb3");
}

TEST(Skeleton, JsonRoundTrip) {
  const Skeleton s = Skeleton::bundled();
  const Skeleton back = Skeleton::from_json(s.to_json());
  ASSERT_EQ(back.size(), s.size());
  for (int j = 0; j < s.size(); ++j) {
    EXPECT_EQ(back.joints()[j].name, s.joints()[j].name);
    EXPECT_EQ(back.joints()[j].parent, s.joints()[j].parent);
    EXPECT_EQ(back.joints()[j].offset, s.joints()[j].offset);
    EXPECT_EQ(back.joints()[j].block, s.joints()[j].block);
  }
}

TEST(Skeleton, RejectsUnsortedOrIncompleteTrees) {
  std::vector<Joint> joints = {{"root", -1, Vec3::Zero(), -1}, {"a", 2, Vec3::UnitX(), 0},
                               {"b", 0, Vec3::UnitX(), 1}};
  try {
    Skeleton(joints, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LayoutMismatch);
  }
}

TEST(ForwardKinematics, RestPoseIsCumulativeOffsets) {
  const Skeleton s = Skeleton::bundled();
  const MotionSequence m = MotionSequence::rest("rest", 1);
  const auto pos = forward_kinematics(s, m.frame(0));
  for (int j = 0; j < s.size(); ++j) {
    Vec3 expected = Vec3::Zero();
    for (int k = j; k >= 0; k = s.joints()[k].parent) expected += s.joints()[k].offset;
    EXPECT_LT((pos[j] - expected).norm(), 1e-15);
  }
}

TEST(ForwardKinematics, ThreeJointChain) {
  // Build a chain whose first three rotated blocks sit on unit offsets along x.
  Skeleton bundled = Skeleton::bundled();
  std::vector<Joint> joints = bundled.joints();
  joints[1].offset = Vec3::Zero();
  joints[2].offset = Vec3::UnitX();
  joints[3].offset = Vec3::UnitX();
  const Skeleton s(joints, {});
  MotionSequence m = MotionSequence::rest("chain", 1);
  matrix_to_rot6d(axis_angle_matrix(Vec3::UnitZ(), std::numbers::pi / 2))
      .write_to(m.frame(0).subspan(0, 6));
  const auto pos = forward_kinematics(s, m.frame(0));
  EXPECT_LT((pos[2] - Vec3(0, 1, 0)).norm(), 1e-15);
  EXPECT_LT((pos[3] - Vec3(0, 2, 0)).norm(), 1e-15);
}

TEST(ForwardKinematics, MatchesRecursiveOracle) {
  const Skeleton s = Skeleton::bundled();
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const MotionSequence m = random_motion(rng, 1, 3.0);
    const auto pos = forward_kinematics(s, m.frame(0));
    for (int j = 0; j < s.size(); ++j) {
      EXPECT_LT((pos[j] - oracle::position_of(s, m.frame(0), j)).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(ForwardKinematics, ScalingOffsetsScalesPositions) {
  const Skeleton s = Skeleton::bundled();
  const Skeleton s3 = s.scaled(3.0);
  std::mt19937_64 rng(7);
  const MotionSequence m = random_motion(rng, 1);
  const auto a = forward_kinematics(s, m.frame(0));
  const auto b = forward_kinematics(s3, m.frame(0));
  for (int j = 0; j < s.size(); ++j) EXPECT_LT((b[j] - 3.0 * a[j]).norm(), 1e-12);
}

TEST(ForwardKinematics, RejectsWrongWidth) {
  std::vector<double> frame(216, 0.0);
  try {
    forward_kinematics(Skeleton::bundled(), frame);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LayoutMismatch);
  }
}

TEST(GlobalOrientation, IdentityAndComposition) {
  const Skeleton s = Skeleton::bundled();
  MotionSequence m = MotionSequence::rest("g", 1);
  for (int j = 0; j < s.size(); ++j) {
    EXPECT_TRUE(global_orientation(s, m.frame(0), j).isApprox(Mat3::Identity()));
  }
  const Rotation6D r45 = matrix_to_rot6d(axis_angle_matrix(Vec3::UnitZ(), std::numbers::pi / 4));
  r45.write_to(m.frame(0).subspan(0, 6));  // spine1
  r45.write_to(m.frame(0).subspan(6, 6));  // spine2
  const Mat3 g = global_orientation(s, m.frame(0), s.index_of("spine2"));
  EXPECT_LT((g - axis_angle_matrix(Vec3::UnitZ(), std::numbers::pi / 2)).norm(), 1e-12);
  EXPECT_THROW(global_orientation(s, m.frame(0), 99), Error);
}

TEST(GlobalOrientation, MatchesOracleAndInverts) {
  const Skeleton s = Skeleton::bundled();
  std::mt19937_64 rng(8);
  const MotionSequence m = random_motion(rng, 1, 3.0);
  for (int j = 0; j < s.size(); ++j) {
    const Mat3 g = global_orientation(s, m.frame(0), j);
    EXPECT_LT((g - oracle::global_of(s, m.frame(0), j)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((g * g.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(MotionContainer, RoundTripIsBitExact) {
  const auto dir = test::temp_dir("container");
  std::mt19937_64 rng(9);
  MotionSequence m = random_motion(rng, 10, 2.0, "clip_a");
  // Quantize to float32 so the in-memory payload is representable on disk.
  m.frames = m.frames.cast<float>().cast<double>();
  m.fps = 12.5;
  m.handedness = Handedness::Left;
  const auto path = dir / "clip_a.hmf";
  write_motion(path, m);
  const MotionSequence back = read_motion(path);
  EXPECT_EQ(back.id, "clip_a");
  EXPECT_EQ(back.fps, 12.5);
  EXPECT_EQ(back.handedness, Handedness::Left);
  ASSERT_EQ(back.frames.rows(), 10);
  EXPECT_EQ(std::memcmp(back.frames.data(), m.frames.data(), sizeof(double) * m.frames.size()), 0);
  const auto path2 = dir / "clip_a_copy.hmf";
  write_motion(path2, back);
  EXPECT_EQ(io::read_file(path), io::read_file(path2));
}

TEST(MotionContainer, HeaderLayout) {
  const auto dir = test::temp_dir("header");
  const MotionSequence m = MotionSequence::rest("h", 2, 25.0);
  write_motion(dir / "h.hmf", m);
  const auto bytes = io::read_file(dir / "h.hmf");
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 1 + 4 + 2 * 274 * 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "HMF1");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[8], 2);  // frame count
  EXPECT_EQ(bytes[16], 0);  // right-handed
  EXPECT_EQ(bytes[17], 274 & 0xff);
  EXPECT_EQ(bytes[18], 274 >> 8);
}

TEST(MotionContainer, Rejections) {
  const auto dir = test::temp_dir("reject");
  write_motion(dir / "ok.hmf", MotionSequence::rest("ok", 3));
  auto bytes = io::read_file(dir / "ok.hmf");

  auto expect_code = [&](std::vector<std::uint8_t> data, ErrorCode code) {
    io::write_file(dir / "bad.hmf", data);
    try {
      read_motion(dir / "bad.hmf");
      FAIL() << "expected " << to_string(code);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), code);
    }
  };
  auto corrupt = bytes;
  corrupt[0] = 'X';
  expect_code(corrupt, ErrorCode::BadMagic);
  auto version = bytes;
  version[4] = 2;
  expect_code(version, ErrorCode::VersionUnsupported);
  auto zero = bytes;
  zero[8] = 0;
  expect_code(zero, ErrorCode::TruncatedPayload);
  auto cut = bytes;
  cut.resize(cut.size() - 5);
  expect_code(cut, ErrorCode::TruncatedPayload);
}

TEST(Manifest, RoundTripPreservesExtraFields) {
  const auto dir = test::temp_dir("manifest");
  ManifestRecord r;
  r.id = "m1";
  r.path = "motions/m1.hmf";
  r.text_ids = {"t1", "t2"};
  r.split = "test";
  r.extra["word"] = "happy";
  write_manifest(dir / "manifest.jsonl", {r});
  const auto back = read_manifest(dir / "manifest.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].id, "m1");
  EXPECT_EQ(back[0].text_ids, r.text_ids);
  EXPECT_EQ(back[0].split, "test");
  EXPECT_EQ(back[0].extra["word"], "happy");
}

}  // namespace
}  // namespace hm
