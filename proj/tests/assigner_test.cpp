#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "handmotion/assigner.hpp"
#include "handmotion/error.hpp"
#include "cases.hpp"
#include "oracles.hpp"

using namespace hm;
using namespace hm::assign;
using cases::Named;
using cases::stream;
using cases::vec;

TEST(ExtractSegments, HandTracedTable) {
  for (const auto& c : cases::segment_table()) EXPECT_EQ(extract_segments(stream(c.pattern)), c.expected) << c.pattern;
}

TEST(ExtractSegments, CustomLengthAndGap) {
  SegmentConfig cfg;
  cfg.min_length = 3;
  cfg.merge_gap = 2;
  EXPECT_EQ(extract_segments(stream("AA_AA__AA"), cfg), (std::vector<Segment>{{"A", 0, 4}}));
}

TEST(ExtractSegments, ConfidenceThresholdIsInclusive) {
  LabelStream s = stream("AAAAAA");
  std::fill(s.confidences.begin(), s.confidences.end(), 0.5);
  EXPECT_EQ(extract_segments(s).size(), 1u);
  s.confidences[2] = 0.4999;
  SegmentConfig strict;
  strict.merge_gap = 0;
  EXPECT_TRUE(extract_segments(s, strict).empty());
}

TEST(ExtractSegments, RejectsBadStreams) {
  LabelStream s = stream("AAA");
  s.confidences[1] = 1.5;
  EXPECT_THROW(extract_segments(s), Error);
  s.confidences.pop_back();
  EXPECT_THROW(extract_segments(s), Error);
}

TEST(ExtractSegments, RandomStreamsDisjointAndLongEnough) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    std::string p;
    while (p.size() < 80) p.append(1 + rng() % 8, "ABCab_"[rng() % 6]);
    const auto segs = extract_segments(stream(p));
    for (std::size_t i = 0; i < segs.size(); ++i) {
      EXPECT_GE(segs[i].length(), 6);
      for (std::size_t j = i + 1; j < segs.size(); ++j) {
        if (segs[i].label == segs[j].label) {
          EXPECT_TRUE(segs[i].end < segs[j].start || segs[j].end < segs[i].start);
        }
      }
    }
  }
}

TEST(CosineDistance, Examples) {
  Eigen::MatrixXd p(3, 3);
  p << 1, 0, 0, 2, 0, 0, 0, 5, 0;
  const Eigen::MatrixXd d = cosine_distance_matrix(p);
  EXPECT_EQ(d(0, 1), 0.0);
  EXPECT_NEAR(d(0, 2), 1.0, 1e-15);
  EXPECT_EQ(d(2, 2), 0.0);
  p.row(1).setZero();
  try {
    cosine_distance_matrix(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroVector);
  }
}

TEST(CosineDistance, MatchesDoubleLoopOracle) {
  std::mt19937_64 rng(22);
  const Eigen::MatrixXd p = oracle::randn(rng, 40, 16);
  const Eigen::MatrixXd d = cosine_distance_matrix(p);
  for (int i = 0; i < 40; ++i) {
    for (int j = 0; j < 40; ++j) {
      EXPECT_EQ(d(i, j), d(j, i));
      EXPECT_GE(d(i, j), 0.0);
      EXPECT_LE(d(i, j), 2.0);
      if (i != j) EXPECT_NEAR(d(i, j), oracle::cosine_distance(p.row(i), p.row(j)), 1e-12);
    }
  }
}

TEST(KMedoids, CostMonotoneAndLabelsFixedPoint) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 10 + static_cast<int>(rng() % 30);
    const int k = 1 + static_cast<int>(rng() % 5);
    const Eigen::MatrixXd d = cosine_distance_matrix(oracle::randn(rng, n, 8));
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const KMedoidsResult r = k_medoids(d, std::vector<int>(idx.begin(), idx.begin() + k));
    for (std::size_t i = 1; i < r.costs.size(); ++i) EXPECT_LE(r.costs[i], r.costs[i - 1] + 1e-12);
    for (int i = 0; i < n; ++i) {
      double best = d(i, r.medoids[0]);
      for (int c = 1; c < k; ++c) best = std::min(best, d(i, r.medoids[c]));
      EXPECT_EQ(d(i, r.medoids[r.labels[i]]), best);
    }
    for (int c = 0; c < k; ++c) EXPECT_EQ(r.labels[r.medoids[c]], c);
  }
}

TEST(KMedoids, SeparatedBlobsMatchExhaustiveOptimum) {
  std::mt19937_64 rng(24);
  std::normal_distribution<double> g(0.0, 0.05);
  Eigen::MatrixXd p(12, 3);
  for (int i = 0; i < 12; ++i) {
    const Eigen::Vector3d center = i < 6 ? Eigen::Vector3d(1, 0, 0) : Eigen::Vector3d(0, 1, 0);
    p.row(i) = (center + Eigen::Vector3d(g(rng), g(rng), g(rng))).transpose();
  }
  const Eigen::MatrixXd d = cosine_distance_matrix(p);
  // Both seeds in the first blob.
  const KMedoidsResult r = k_medoids(d, {0, 1});
  for (int i = 0; i < 12; ++i) EXPECT_EQ(r.labels[i] == r.labels[0], i < 6);
  double best = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 12; ++a) {
    for (int b = a + 1; b < 12; ++b) {
      double cost = 0;
      for (int i = 0; i < 12; ++i) cost += std::min(d(i, a), d(i, b));
      best = std::min(best, cost);
    }
  }
  EXPECT_NEAR(r.costs.back(), best, 1e-12);
}

TEST(KMedoids, DegenerateSizes) {
  std::mt19937_64 rng(25);
  const Eigen::MatrixXd d = cosine_distance_matrix(oracle::randn(rng, 5, 4));
  const KMedoidsResult all = k_medoids(d, {4, 2, 0, 1, 3});
  EXPECT_EQ(all.costs.back(), 0.0);
  EXPECT_EQ(all.medoids, (std::vector<int>{4, 2, 0, 1, 3}));
  const KMedoidsResult one = k_medoids(Eigen::MatrixXd::Zero(1, 1), {0});
  EXPECT_EQ(one.medoids, std::vector<int>{0});
  EXPECT_THROW(k_medoids(d, {1, 1}), Error);
  EXPECT_THROW(k_medoids(d, {0, 1, 2, 3, 4, 0}), Error);
}

TEST(AssignVariants, SingleVariantTakesEverything) {
  std::mt19937_64 rng(26);
  const Eigen::MatrixXd p = oracle::randn(rng, 8, 4);
  Named samples;
  for (int i = 0; i < 8; ++i) samples.push_back({"m" + std::to_string(i), p.row(i).transpose()});
  const auto a = assign_variants(samples, {{"HAPPY", vec({1, 0, 0, 0})}});
  ASSERT_EQ(a.size(), 8u);
  for (const auto& [id, v] : a) EXPECT_EQ(v, "HAPPY");
}

TEST(AssignVariants, ClusterOutcomes) {
  for (const auto& c : cases::assignment_cases()) EXPECT_EQ(assign_variants(c.samples, c.variants), c.expected) << c.name;
}

TEST(AssignVariants, PermutationInvariant) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd p = oracle::randn(rng, 25, 5);
    Named samples, variants;
    for (int i = 0; i < 22; ++i) samples.push_back({"s" + std::to_string(i), p.row(i).transpose()});
    for (int j = 22; j < 25; ++j) variants.push_back({"V" + std::to_string(j), p.row(j).transpose()});
    const auto a = assign_variants(samples, variants);
    std::shuffle(samples.begin(), samples.end(), rng);
    EXPECT_EQ(assign_variants(samples, variants), a);
  }
}

TEST(CandidateVariants, HappyExamples) {
  DictionaryIndex three({{"HAPPY", {{"happy"}, {"happiness", "merry", "enjoy", "fun"}}},
                         {"HAPPYb", {{"happy"}, {}}},
                         {"HAPPYc", {{"happy", "excited"}, {"excited", "jump for joy"}}}});
  EXPECT_EQ(build_candidate_variants("happy", three), (std::vector<std::string>{"HAPPY", "HAPPYb", "HAPPYc"}));

  DictionaryIndex with_fun({{"HAPPY", {{"happy"}, {"happiness", "merry", "enjoy", "fun"}}},
                            {"HAPPYb", {{"happy"}, {}}},
                            {"HAPPYc", {{"excited"}, {"happy", "jump for joy"}}},
                            {"FUN", {{"fun"}, {"play"}}},
                            {"FUNb", {{"fun"}, {}}},
                            {"FUNc", {{"fun", "amusing"}, {}}},
                            {"PLAY", {{"play"}, {}}}});
  // FUN is reached through HAPPY's keywords; PLAY would need a second hop.
  EXPECT_EQ(build_candidate_variants("Happy", with_fun),
            (std::vector<std::string>{"FUN", "FUNb", "FUNc", "HAPPY", "HAPPYb", "HAPPYc"}));
  try {
    build_candidate_variants("zebra", with_fun);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownWord);
  }
}

TEST(CandidateVariants, DictionaryJson) {
  const auto index = DictionaryIndex::from_json(nlohmann::json::parse(
      R"({"glosses": {"BATTERY": {"words": ["battery", "uncle"]}, "UNCLE": {"words": ["uncle"], "keywords": []}}})"));
  EXPECT_EQ(build_candidate_variants("uncle", index), (std::vector<std::string>{"BATTERY", "UNCLE"}));
  EXPECT_THROW(DictionaryIndex::from_json(nlohmann::json::parse(R"({"words": []})")), Error);
}
