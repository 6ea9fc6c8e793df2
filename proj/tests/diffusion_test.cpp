#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "handmotion/diffusion.hpp"
#include "handmotion/error.hpp"
#include "handmotion/rotation.hpp"
#include "oracles.hpp"

namespace hm::diffusion {
namespace {

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::ConfigError;
}

FrameMatrix randn(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> n(0.0, 1.0);
  FrameMatrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

DiffuserConfig tiny_config() {
  DiffuserConfig cfg;
  cfg.features = 6;
  cfg.text_dim = 4;
  cfg.max_length = 10;
  cfg.encoder = {8, 2, 2, 8};
  cfg.steps = 10;
  return cfg;
}

/// Returns fixed clean motions whatever it is asked.
class FixedDenoiser : public Denoiser {
 public:
  explicit FixedDenoiser(std::vector<FrameMatrix> x0) : x0_(std::move(x0)) {}
  std::vector<FrameMatrix> predict(const std::vector<FrameMatrix>& x_t, const std::vector<int>&,
                                   const std::vector<const embed::Embedding*>&) const override {
    std::vector<FrameMatrix> out;
    for (std::size_t i = 0; i < x_t.size(); ++i) out.push_back(x0_[i % x0_.size()]);
    return out;
  }
  int features() const override { return static_cast<int>(x0_.front().cols()); }
  int max_length() const override { return 128; }

 private:
  std::vector<FrameMatrix> x0_;
};

TEST(Schedule, SingleStep) {
  const auto s = NoiseSchedule::build(1);
  EXPECT_EQ(s.steps, 1);
  EXPECT_DOUBLE_EQ(s.alpha_bar[1], s.alpha[1]);
  EXPECT_DOUBLE_EQ(s.alpha_bar[0], 1.0);
}

TEST(Schedule, DefaultCosineProperties) {
  const auto s = NoiseSchedule::build(100);
  double prod = 1.0;
  for (int t = 1; t <= 100; ++t) {
    EXPECT_GT(s.beta[t], 0.0);
    EXPECT_LT(s.beta[t], 1.0);
    EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
    prod *= 1.0 - s.beta[t];
    EXPECT_DOUBLE_EQ(s.alpha_bar[t], prod);
  }
  EXPECT_LT(s.alpha_bar[100], 0.01);
  EXPECT_GT(s.alpha_bar[1], 0.99);
  // Closed form away from the clipped final step.
  auto f = [](double t) { return std::pow(std::cos((t / 100.0 + 0.008) / 1.008 * M_PI / 2.0), 2); };
  for (int t : {1, 10, 50, 90}) EXPECT_NEAR(s.alpha_bar[t], f(t) / f(0), 1e-12);
}

TEST(Schedule, LinearAndErrors) {
  const auto s = NoiseSchedule::build(100, ScheduleKind::Linear);
  EXPECT_NEAR(s.beta[1], 1e-3, 1e-15);
  EXPECT_NEAR(s.beta[100], 0.2, 1e-15);
  for (int t = 1; t <= 100; ++t) EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
  EXPECT_EQ(code_of([] { NoiseSchedule::build(0); }), ErrorCode::BadScheduleParams);
  EXPECT_EQ(code_of([] { NoiseSchedule::build(10, ScheduleKind::Linear, 0.1, 0.5, 0.9); }),
            ErrorCode::BadScheduleParams);
}

TEST(QSample, Limits) {
  std::mt19937_64 rng(1);
  const auto s = NoiseSchedule::build(100);
  const FrameMatrix x0 = randn(rng, 3, 5);
  const FrameMatrix noise = randn(rng, 3, 5);
  EXPECT_EQ(q_sample(x0, 0, noise, s), x0);
  const FrameMatrix zero = FrameMatrix::Zero(3, 5);
  EXPECT_EQ(q_sample(zero, 40, noise, s), std::sqrt(1.0 - s.alpha_bar[40]) * noise);
}

TEST(QSample, MonteCarloMoments) {
  std::mt19937_64 rng(2);
  const auto s = NoiseSchedule::build(100);
  FrameMatrix x0(1, 3);
  x0 << 1.5, -0.5, 2.0;
  for (int t : {5, 50, 95}) {
    std::vector<std::vector<double>> draws(3);
    for (int i = 0; i < 100000; ++i) {
      const FrameMatrix x = q_sample(x0, t, randn(rng, 1, 3), s);
      for (int c = 0; c < 3; ++c) draws[c].push_back(x(0, c));
    }
    for (int c = 0; c < 3; ++c) {
      const auto dev = oracle::moment_deviation(draws[c], std::sqrt(s.alpha_bar[t]) * x0(0, c), 1.0 - s.alpha_bar[t]);
      EXPECT_LT(dev.mean_z, 3.0) << t;
      EXPECT_LT(dev.var_z, 3.0) << t;
    }
  }
}

TEST(Denoiser, ShapesMaskAndDeterminism) {
  std::mt19937_64 rng(3);
  const DiffusionModel model(tiny_config(), 4);
  const embed::Embedding text = Eigen::Vector4d(0.1, 0.2, -0.3, 0.4);
  std::vector<FrameMatrix> padded = {randn(rng, 8, 6), randn(rng, 8, 6)};
  const std::vector<int> lengths = {5, 8};
  const auto a = model.denoise(padded, lengths, {3, 7}, {&text, nullptr});
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].rows(), 8);
  EXPECT_EQ(a[0].cols(), 6);
  EXPECT_TRUE(a[0].bottomRows(3).isZero(0.0));
  EXPECT_TRUE(a[0].topRows(5).allFinite());
  // Rewriting padded frames changes nothing.
  padded[0].bottomRows(3) = randn(rng, 3, 6) * 100.0;
  const auto b = model.denoise(padded, lengths, {3, 7}, {&text, nullptr});
  EXPECT_EQ(a[0], b[0]);
  EXPECT_EQ(a[1], b[1]);
  // Batch composition does not leak between sequences.
  const auto alone = model.denoise({padded[1]}, {8}, {7}, {nullptr});
  EXPECT_LT((alone[0] - a[1]).cwiseAbs().maxCoeff(), 1e-12);
  // Conditioning matters.
  const auto c = model.denoise(padded, lengths, {3, 7}, {nullptr, nullptr});
  EXPECT_NE(a[0], c[0]);
  EXPECT_EQ(code_of([&] { model.denoise({randn(rng, 11, 6)}, {11}, {1}, {nullptr}); }), ErrorCode::LengthExceedsMax);
  EXPECT_EQ(code_of([&] { model.predict({randn(rng, 2, 5)}, {1}, {nullptr}); }), ErrorCode::FeatureWidthMismatch);
}

TEST(Training, OracleHasZeroLoss) {
  std::mt19937_64 rng(4);
  const auto s = NoiseSchedule::build(10);
  std::vector<TrainItem> items = {{randn(rng, 4, 6), {Eigen::Vector4d::Ones()}}, {randn(rng, 4, 6), {Eigen::Vector4d::Ones()}}};
  const TrainDraw d = draw_training_inputs({&items[0], &items[1]}, s, 0.05, rng);
  EXPECT_EQ(denoising_loss(FixedDenoiser(d.x0), d), 0.0);
  EXPECT_GT(denoising_loss(FixedDenoiser({FrameMatrix::Zero(4, 6)}), d), 0.0);
}

TEST(Training, DrawFollowsConfiguredDistribution) {
  std::mt19937_64 rng(5);
  const auto s = NoiseSchedule::build(10);
  TrainItem item{FrameMatrix::Zero(2, 6), {Eigen::Vector4d::Ones(), Eigen::Vector4d::Zero()}};
  std::vector<const TrainItem*> batch(4000, &item);
  const TrainDraw d = draw_training_inputs(batch, s, 0.25, rng);
  int dropped = 0, first = 0;
  std::vector<int> t_count(11, 0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!d.text[i]) {
      ++dropped;
    } else if (d.text[i] == &item.texts[0]) {
      ++first;
    }
    ++t_count[d.t[i]];
  }
  EXPECT_NEAR(dropped / 4000.0, 0.25, 0.03);
  EXPECT_NEAR(first / double(4000 - dropped), 0.5, 0.04);
  EXPECT_EQ(t_count[0], 0);
  for (int t = 1; t <= 10; ++t) EXPECT_NEAR(t_count[t] / 4000.0, 0.1, 0.025);
}

TEST(Training, FullDropoutIgnoresText) {
  std::mt19937_64 data_rng(6);
  const DiffusionModel model(tiny_config(), 7);
  const auto s = NoiseSchedule::build(10);
  const FrameMatrix m = randn(data_rng, 5, 6);
  TrainItem a{m, {Eigen::Vector4d(1, 2, 3, 4)}};
  TrainItem b{m, {Eigen::Vector4d(-4, 0, 9, 1)}};
  auto grads = [&](const TrainItem& item) {
    std::mt19937_64 rng(99);
    nn::backward(denoising_loss(model, draw_training_inputs({&item, &item}, s, 1.0, rng)));
    std::vector<nn::Mat> out;
    for (const auto& [name, p] : model.params().items()) {
      out.push_back(p->grad.size() ? p->grad : nn::Mat::Zero(p->value.rows(), p->value.cols()));
      p->grad.resize(0, 0);
    }
    return out;
  };
  const auto ga = grads(a);
  const auto gb = grads(b);
  ASSERT_EQ(ga.size(), gb.size());
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_EQ(ga[i], gb[i]) << model.params().items()[i].first;
}

TEST(Training, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  DiffusionModel model(tiny_config(), 9);
  const auto s = NoiseSchedule::build(10);
  std::vector<TrainItem> items = {{randn(rng, 3, 6), {Eigen::Vector4d(0.5, -1, 0, 2)}},
                                  {randn(rng, 2, 6), {Eigen::Vector4d(1, 1, 1, 1)}}};
  const TrainDraw d = draw_training_inputs({&items[0], &items[1]}, s, 0.5, rng);
  nn::backward(denoising_loss(model, d));
  double worst = 0.0;
  int checked = 0;
  for (const auto& [name, p] : model.params().items()) {
    const nn::Mat g = p->grad.size() ? p->grad : nn::Mat::Zero(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.size(); i += 3) {
      const double orig = p->value.data()[i];
      const double h = 1e-6;
      p->value.data()[i] = orig + h;
      const double up = denoising_loss(model, d)->value(0, 0);
      p->value.data()[i] = orig - h;
      const double down = denoising_loss(model, d)->value(0, 0);
      p->value.data()[i] = orig;
      const double num = (up - down) / (2 * h);
      const double err = std::abs(num - g.data()[i]) / std::max(1e-4, std::abs(num) + std::abs(g.data()[i]));
      worst = std::max(worst, err);
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
  EXPECT_LT(worst, 1e-4);
}

TEST(Training, LossDecreasesAndIsSeeded) {
  std::mt19937_64 rng(10);
  DiffuserConfig cfg = tiny_config();
  cfg.epochs = 60;
  cfg.batch_size = 4;
  cfg.lr = 3e-3;
  std::vector<TrainItem> items;
  for (int i = 0; i < 4; ++i) items.push_back({randn(rng, 4, 6), {embed::Embedding::Random(4)}});
  const auto a = train_diffusion(items, cfg, 3);
  const auto b = train_diffusion(items, cfg, 3);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 10; ++i) {
    early += a.epoch_losses[i];
    late += a.epoch_losses[50 + i];
  }
  EXPECT_LT(late, early);
  EXPECT_EQ(code_of([&] { train_diffusion({}, cfg, 0); }), ErrorCode::EmptyDataset);
}

TEST(Training, LongMotionsAreWindowed) {
  std::mt19937_64 rng(11);
  DiffuserConfig cfg = tiny_config();
  cfg.epochs = 2;
  const auto res = train_diffusion({{randn(rng, 25, 6), {Eigen::Vector4d::Ones()}}}, cfg, 1);
  EXPECT_EQ(res.epoch_losses.size(), 2u);
}

TEST(Sampling, GuidanceAlgebra) {
  std::mt19937_64 rng(12);
  const FrameMatrix c = randn(rng, 4, 6);
  const FrameMatrix u = randn(rng, 4, 6);
  EXPECT_EQ(guide(c, u, 1.0), c);
  EXPECT_EQ(guide(c, u, 0.0), u);
  const FrameMatrix g2 = guide(c, u, 2.0);
  EXPECT_LT((g2 - (u + 2.0 * (c - u))).cwiseAbs().maxCoeff(), 1e-12);
  // Affine in lambda.
  EXPECT_LT((g2 - 2.0 * guide(c, u, 1.0) + guide(c, u, 0.0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sampling, UnitGuidanceUsesConditionalPrediction) {
  const DiffusionModel model(tiny_config(), 13);
  const auto s = NoiseSchedule::build(10);
  const embed::Embedding text = Eigen::Vector4d(0.3, -0.2, 0.9, 0.1);
  int steps = 0;
  sample(model, &text, 4, 1.0, s, 5, [&](const GuidanceTrace& tr) {
    EXPECT_EQ(tr.x0_guided, tr.x0_cond);
    ++steps;
  });
  EXPECT_EQ(steps, 10);
  // With a general lambda the trace reproduces the guidance formula.
  sample(model, &text, 4, 15.0, s, 5, [&](const GuidanceTrace& tr) {
    EXPECT_EQ(tr.x0_guided, guide(tr.x0_cond, tr.x0_uncond, 15.0));
    EXPECT_EQ(guide(tr.x0_cond, tr.x0_uncond, 1.0), tr.x0_cond);
  });
}

TEST(Sampling, ZeroGuidanceIsUnconditional) {
  const DiffusionModel model(tiny_config(), 14);
  const auto s = NoiseSchedule::build(10);
  const embed::Embedding text = Eigen::Vector4d(1, 0, 0, 0);
  EXPECT_EQ(sample(model, &text, 6, 0.0, s, 21), sample(model, nullptr, 6, 15.0, s, 21));
}

TEST(Sampling, SingleStepOracleReturnsCleanMotion) {
  std::mt19937_64 rng(15);
  const FrameMatrix x0 = randn(rng, 5, 6);
  const FixedDenoiser oracle({x0});
  const auto s = NoiseSchedule::build(1);
  const embed::Embedding text = Eigen::Vector4d::Ones();
  EXPECT_EQ(sample(oracle, &text, 5, 1.0, s, 3), x0);
  EXPECT_EQ(sample(oracle, nullptr, 5, 15.0, s, 3), x0);
  // Other coefficients combine two equal predictions, exact up to rounding.
  EXPECT_LT((sample(oracle, &text, 5, 15.0, s, 3) - x0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sampling, SeededReproducibility) {
  const DiffusionModel model(tiny_config(), 16);
  const auto s = NoiseSchedule::build(10);
  const embed::Embedding text = Eigen::Vector4d(0, 1, 0, 0);
  const FrameMatrix a = sample(model, &text, 7, 15.0, s, 8);
  EXPECT_EQ(a, sample(model, &text, 7, 15.0, s, 8));
  EXPECT_NE(a, sample(model, &text, 7, 15.0, s, 9));
  EXPECT_EQ(code_of([&] { sample(model, &text, 11, 15.0, s, 0); }), ErrorCode::LengthExceedsMax);
}

TEST(Sampling, ProjectionYieldsRotations) {
  std::mt19937_64 rng(17);
  FrameMatrix raw = randn(rng, 3, kFeatureCount);
  raw.block(1, 6 * 4, 1, 6).setZero();  // degenerate block
  const MotionSequence m = to_motion(raw, "gen");
  m.validate();
  for (int t = 0; t < 3; ++t) {
    for (int b = 0; b < kRotationBlockCount; ++b) {
      const Mat3 r = rot6d_to_matrix(m.frame(t).subspan(6 * b, 6));
      EXPECT_LT(orthonormality_error(r), 1e-9);
      EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
    }
  }
  EXPECT_EQ(m.frames.block(1, 24, 1, 6), (FrameMatrix(1, 6) << 1, 0, 0, 0, 1, 0).finished());
  EXPECT_EQ(m.frames.block(0, kFaceOffset, 3, kFaceCount), raw.block(0, kFaceOffset, 3, kFaceCount));
}

TEST(Checkpoint, RoundTripIsExact) {
  std::mt19937_64 rng(18);
  const DiffusionModel model(tiny_config(), 19);
  const auto ck = model.to_checkpoint({{"text_encoder", "none"}});
  const auto bytes = nn::encode_checkpoint(ck);
  const DiffusionModel back = DiffusionModel::from_checkpoint(nn::decode_checkpoint(bytes));
  const FrameMatrix x = randn(rng, 3, 6);
  EXPECT_EQ(back.predict({x}, {2}, {nullptr})[0], model.predict({x}, {2}, {nullptr})[0]);
  EXPECT_EQ(nn::encode_checkpoint(back.to_checkpoint({{"text_encoder", "none"}})), bytes);
}

}  // namespace
}  // namespace hm::diffusion
