#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "handmotion/error.hpp"
#include "handmotion/hms.hpp"
#include "cases.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace hm;
using namespace hm::hms;

using cases::channel;
using cases::processed;
using cases::repeat;
using cases::table_of;

TEST(DistanceCode, Examples) {
  EXPECT_EQ(distance_code(Vec3(1, 2, 3), Vec3(1, 2, 3)), DistanceCode::Touching);
  EXPECT_EQ(distance_code(Vec3(0.08, 0, 0), Vec3::Zero()), DistanceCode::Medium);
  EXPECT_EQ(distance_code(Vec3(0, 0.5, 0), Vec3::Zero()), DistanceCode::Wide);
}

TEST(DistanceCode, MatchesBruteForceBucketer) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng)), q(u(rng), u(rng), u(rng));
    EXPECT_EQ(std::string(label(distance_code(p, q))), oracle::bucket((p - q).norm()));
  }
}

TEST(AxisCode, Examples) {
  EXPECT_EQ(label(axis_code(0.0, Axis::X)), "touching");
  EXPECT_EQ(label(axis_code(0.4000001, Axis::Y)), "wide/above");
  EXPECT_EQ(label(axis_code(-0.05, Axis::X)), "close/right");
  EXPECT_EQ(label(axis_code(0.05, Axis::Z)), "close/in front");
  EXPECT_EQ(axis_code(-0.3, Axis::Z).level, -3);
}

TEST(AxisCode, MatchesBruteForceBucketer) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  const std::pair<Axis, char> axes[] = {{Axis::X, 'x'}, {Axis::Y, 'y'}, {Axis::Z, 'z'}};
  for (int i = 0; i < 1000; ++i) {
    const double d = u(rng);
    for (const auto& [axis, c] : axes) EXPECT_EQ(label(axis_code(d, axis)), oracle::axis(d, c));
  }
}

TEST(AxisCode, NineLevelLabelsPerAxis) {
  const double mags[] = {0.5, 0.3, 0.1, 0.05};
  std::vector<std::string> x;
  for (double m : mags) x.push_back(label(axis_code(-m, Axis::X)));
  x.push_back(label(axis_code(0.0, Axis::X)));
  for (int i = 3; i >= 0; --i) x.push_back(label(axis_code(mags[i], Axis::X)));
  const std::vector<std::string> expected = {"wide/right", "spread/right", "medium/right",
                                             "close/right", "touching",     "close/left",
                                             "medium/left", "spread/left", "wide/left"};
  EXPECT_EQ(x, expected);
}

TEST(Thresholds, RejectsNonIncreasing) {
  Thresholds th;
  th.edges = {0.02, 0.02, 0.2, 0.4};
  EXPECT_THROW(th.validate(), Error);
}

TEST(PalmOrientation, AxisAlignedAndThreshold) {
  EXPECT_EQ(palm_orientation(Mat3::Identity(), Side::Right), Orientation::Down);
  EXPECT_EQ(palm_orientation(Mat3::Identity(), Side::Left), Orientation::Down);
  // Rotate so the palm normal becomes (0.6, 0.6, 0.52): nothing dominates.
  PalmConfig cfg;
  cfg.right_normal = Vec3(0.6, 0.6, 0.52);
  EXPECT_FALSE(palm_orientation(Mat3::Identity(), Side::Right, cfg).has_value());
  cfg.right_normal = Vec3(0.0, 0.0, -1.0);
  EXPECT_EQ(palm_orientation(Mat3::Identity(), Side::Right, cfg), Orientation::In);
  const Mat3 flip = axis_angle_matrix(Vec3::UnitZ(), M_PI);
  EXPECT_EQ(palm_orientation(flip, Side::Right), Orientation::Up);
  const Mat3 quarter = axis_angle_matrix(Vec3::UnitZ(), M_PI / 2);
  EXPECT_EQ(palm_orientation(quarter, Side::Left), Orientation::Sideways);
  const Mat3 tilt = axis_angle_matrix(Vec3::UnitX(), -M_PI / 2);  // -y -> +z
  EXPECT_EQ(palm_orientation(tilt, Side::Right), Orientation::Out);
}

TEST(PalmOrientation, MatchesOracleOnRandomRotations) {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 1000; ++i) {
    const Mat3 r = test::random_rotation(rng);
    const auto o = palm_orientation(r, i % 2 ? Side::Left : Side::Right);
    EXPECT_EQ(o ? std::string(label(*o)) : std::string(), oracle::palm(r));
  }
}

TEST(ChannelKey, NameRoundTrip) {
  const ChannelKey k{ChannelKind::AxisZ, "right_hand", "left_shoulder"};
  EXPECT_EQ(k.name(), "axis_z:right_hand->left_shoulder");
  EXPECT_EQ(ChannelKey::parse(k.name()), k);
  const ChannelKey o{ChannelKind::Orientation, "left_hand", ""};
  EXPECT_EQ(ChannelKey::parse(o.name()), o);
  EXPECT_THROW(ChannelKey::parse("bogus"), Error);
}

TEST(Anchors, LocationMapping) {
  EXPECT_EQ(anchors_for_location("Chest level"), std::vector<std::string>{"torso"});
  EXPECT_EQ(anchors_for_location("neutral_space"), std::vector<std::string>{"neutral_space"});
  EXPECT_EQ(anchors_for_location("Shoulder").size(), 2u);
  EXPECT_TRUE(anchors_for_location("somewhere else").empty());
}

TEST(Extract, StraightLineOracleOnRandomMotions) {
  const Skeleton skel = Skeleton::bundled();
  std::mt19937_64 rng(14);
  const std::vector<std::string> locations = {"torso", "neutral_space", "dominant_shoulder", "head"};
  for (int trial = 0; trial < 50; ++trial) {
    MotionSequence m = test::random_motion(rng, 12, 0.8);
    m.handedness = trial % 2 ? Handedness::Left : Handedness::Right;
    const PosecodeTable table = extract_framecodes(m, skel, locations, UsedHands::Both);
    ASSERT_EQ(table.channels.size(), 4u * 7u + 2u);  // 3 anchors x 2 hands + hand pair, + palms
    for (const Channel& c : table.channels) {
      ASSERT_EQ(static_cast<int>(c.raw.size()), m.num_frames());
      for (int t = 0; t < m.num_frames(); ++t) {
        const oracle::Pose pose = oracle::pose(skel, m.frame(t));
        EXPECT_EQ(c.raw[t], oracle::code(skel, pose, c.key.name())) << c.key.name() << " t=" << t;
      }
    }
    const std::string dom = trial % 2 ? "left_hand" : "right_hand";
    const std::string nondom = trial % 2 ? "right_hand" : "left_hand";
    const std::string dom_shoulder = trial % 2 ? "left_shoulder" : "right_shoulder";
    EXPECT_NE(table.find("distance:" + dom + "->" + nondom), nullptr);
    EXPECT_NE(table.find("distance:" + nondom + "->" + dom_shoulder), nullptr);
    EXPECT_NE(table.find("axis_y:" + dom + "->head"), nullptr);
  }
}

TEST(Extract, StaticMotionGivesConstantChannels) {
  const Skeleton skel = Skeleton::bundled();
  std::mt19937_64 rng(15);
  MotionSequence m = test::random_motion(rng, 1, 0.7);
  MotionSequence still = MotionSequence::rest("still", 9);
  for (int t = 0; t < 9; ++t) still.frames.row(t) = m.frames.row(0);
  const PosecodeTable table = extract_framecodes(still, skel, {"torso", "neutral_space"}, UsedHands::Both);
  for (const Channel& c : table.channels) {
    for (const std::string& code : c.raw) EXPECT_EQ(code, c.raw.front()) << c.key.name();
  }
}

TEST(Extract, ConvergingHandsBruteForce) {
  std::vector<FrameGeometry> frames(30);
  std::vector<std::string> expected;
  for (int t = 0; t < 30; ++t) {
    const double d = 0.35 - (0.35 - 0.03) * t / 29.0;
    FrameGeometry& g = frames[t];
    g.right_hand = Vec3(-d / 2, 1.2, 0.3);
    g.left_hand = Vec3(d / 2, 1.2, 0.3);
    g.left_wrist = g.right_wrist = Mat3::Identity();
    expected.push_back(oracle::bucket(d));
  }
  const PosecodeTable table = framecodes_from_geometry(frames, Handedness::Right, {"neutral_space"},
                                                       UsedHands::Both);
  const Channel* c = table.find("distance:right_hand->left_hand");
  ASSERT_NE(c, nullptr);
  EXPECT_EQ(c->raw, expected);
  EXPECT_EQ(c->raw.front(), "spread");
  EXPECT_EQ(c->raw.back(), "close");
  const PosecodeTable post = postprocess(table);
  EXPECT_EQ(processed(post, "distance:right_hand->left_hand"),
            (std::vector<std::string>{"spread", "medium", "close"}));
  // Only x changes, so the axis channels survive; y and z stay aligned.
  EXPECT_EQ(processed(post, "axis_y:right_hand->left_hand"), std::vector<std::string>{"touching"});
  EXPECT_EQ(processed(post, "axis_x:right_hand->left_hand").front(), "spread/right");
}

TEST(Extract, OneHandedSignsMentionOnlyTheDominantHand) {
  const Skeleton skel = Skeleton::bundled();
  std::mt19937_64 rng(16);
  for (Handedness h : {Handedness::Right, Handedness::Left}) {
    MotionSequence m = test::random_motion(rng, 5, 0.5);
    m.handedness = h;
    const PosecodeTable table =
        extract_framecodes(m, skel, {"torso", "neutral_space", "nondominant_shoulder"}, UsedHands::Dominant);
    const std::string nondom = h == Handedness::Right ? "left_hand" : "right_hand";
    EXPECT_FALSE(table.channels.empty());
    for (const Channel& c : table.channels) {
      EXPECT_EQ(c.key.name().find(nondom), std::string::npos) << c.key.name();
    }
    const std::string block = render_block(postprocess(table), h);
    EXPECT_EQ(block.find("non-dominant hand"), std::string::npos);
  }
}

TEST(Extract, UnknownAnchorThrows) {
  const Skeleton skel = Skeleton::bundled();
  const MotionSequence m = MotionSequence::rest("r", 3);
  try {
    extract_framecodes(m, skel, {"elbow_pit"}, UsedHands::Both);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownAnchor);
  }
}

TEST(Extract, DistanceChannelsInvariantToTranslation) {
  const Skeleton skel = Skeleton::bundled();
  std::mt19937_64 rng(17);
  const std::vector<std::string> anchors = {"torso", "head"};
  for (int trial = 0; trial < 10; ++trial) {
    const MotionSequence m = test::random_motion(rng, 6, 0.8);
    RootTransform shifted;
    shifted.translation = Vec3(3.0, -1.5, 7.25);
    const auto a = framecodes_from_geometry(measure(m, skel, anchors), m.handedness, anchors, UsedHands::Both);
    const auto b = framecodes_from_geometry(measure(m, skel, anchors, shifted), m.handedness, anchors,
                                            UsedHands::Both);
    ASSERT_EQ(a.channels.size(), b.channels.size());
    for (std::size_t i = 0; i < a.channels.size(); ++i) EXPECT_EQ(a.channels[i].raw, b.channels[i].raw);
  }
}

TEST(Extract, AxisChannelsEquivariantUnderXReflection) {
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<FrameGeometry> frames(40), mirrored(40);
  for (int t = 0; t < 40; ++t) {
    FrameGeometry& g = frames[t];
    g.left_hand = Vec3(u(rng), u(rng), u(rng));
    g.right_hand = Vec3(u(rng), u(rng), u(rng));
    g.left_wrist = g.right_wrist = Mat3::Identity();
    g.anchors = {{"torso", Vec3(u(rng), u(rng), u(rng))}};
    mirrored[t] = g;
    mirrored[t].left_hand.x() *= -1;
    mirrored[t].right_hand.x() *= -1;
    mirrored[t].anchors[0].second.x() *= -1;
  }
  const auto a = framecodes_from_geometry(frames, Handedness::Right, {"torso"}, UsedHands::Both);
  const auto b = framecodes_from_geometry(mirrored, Handedness::Right, {"torso"}, UsedHands::Both);
  auto swap_lr = [](std::string s) {
    if (auto p = s.find("/left"); p != std::string::npos) return s.substr(0, p) + "/right";
    if (auto p = s.find("/right"); p != std::string::npos) return s.substr(0, p) + "/left";
    return s;
  };
  for (std::size_t i = 0; i < a.channels.size(); ++i) {
    const Channel& ca = a.channels[i];
    const Channel& cb = b.channels[i];
    for (int t = 0; t < 40; ++t) {
      if (ca.key.kind == ChannelKind::AxisX) {
        EXPECT_EQ(swap_lr(ca.raw[t]), cb.raw[t]);
      } else {
        EXPECT_EQ(ca.raw[t], cb.raw[t]);
      }
    }
  }
}

TEST(Postprocess, CraftedSuite) {
  for (const auto& c : cases::postprocess_suite()) {
    const PosecodeTable t = postprocess(table_of(c.channels));
    for (const auto& [name, expected] : c.expected) EXPECT_EQ(processed(t, name), expected) << c.name << ": " << name;
  }
}

TEST(Postprocess, EmptyChannelsAreFlaggedDropped) {
  auto t = postprocess(table_of({channel("orientation:right_hand", repeat({{"", 6}, {"up", 3}})),
                                 channel("orientation:left_hand", repeat({{"in", 4}, {"", 5}}))}));
  EXPECT_TRUE(t.find("orientation:right_hand")->dropped);
  EXPECT_EQ(t.processed_json().size(), 1u);
}

TEST(Postprocess, IdempotentAndNoRepeats) {
  std::mt19937_64 rng(19);
  const std::vector<std::string> codes = {"touching", "close", "medium", "spread", "wide", ""};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Channel> channels;
    for (const char* name : {"distance:right_hand->torso", "axis_x:right_hand->torso",
                             "axis_y:right_hand->torso", "axis_z:right_hand->torso",
                             "orientation:left_hand"}) {
      std::vector<std::string> raw;
      while (raw.size() < 40) {
        const std::string c = codes[rng() % codes.size()];
        raw.insert(raw.end(), 1 + rng() % 7, c);
      }
      raw.resize(40);
      channels.push_back(channel(name, raw));
    }
    const PosecodeTable once = postprocess(table_of(channels), 4);
    const PosecodeTable twice = postprocess(once, 4);
    ASSERT_EQ(once.channels.size(), twice.channels.size());
    for (std::size_t i = 0; i < once.channels.size(); ++i) {
      EXPECT_EQ(once.channels[i].processed, twice.channels[i].processed);
      EXPECT_EQ(once.channels[i].dropped, twice.channels[i].dropped);
      const auto& p = once.channels[i].processed;
      for (std::size_t k = 1; k < p.size(); ++k) EXPECT_NE(p[k], p[k - 1]);
    }
  }
}

TEST(Render, SingleChannelLine) {
  auto t = postprocess(table_of({channel("distance:right_hand->left_hand",
                                              repeat({{"spread", 10}, {"close", 10}}))}));
  EXPECT_EQ(render_block(t, Handedness::Right),
            "DISTANCE BETWEEN HANDS:\n"
            "- Distance from dominant hand to non-dominant hand: [spread, close]\n");
}

TEST(Render, EmptyTableGivesEmptyBlock) {
  EXPECT_EQ(render_block(PosecodeTable{}, Handedness::Right), "");
  auto t = postprocess(table_of({channel("distance:right_hand->torso", repeat({{"close", 2}}))}));
  EXPECT_EQ(render_block(t, Handedness::Right), "");
}

TEST(Render, CraftedTableMatchesGoldenFile) {
  const PosecodeTable t = postprocess(cases::crafted_block_table());
  std::ifstream in(std::string(HANDMOTION_TEST_DATA) + "/hms/crafted_block.txt", std::ios::binary);
  ASSERT_TRUE(in);
  std::stringstream golden;
  golden << in.rdbuf();
  const std::string block = render_block(t, Handedness::Left);
  EXPECT_EQ(block, golden.str());
  EXPECT_EQ(render_block(t, Handedness::Left), block);
}
