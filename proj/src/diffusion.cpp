#include "handmotion/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "handmotion/binary_io.hpp"
#include "handmotion/error.hpp"
#include "handmotion/rotation.hpp"

namespace hm::diffusion {

NoiseSchedule NoiseSchedule::build(int steps, ScheduleKind kind, double s, double beta_start, double beta_end) {
  if (steps < 1) fail(ErrorCode::BadScheduleParams, "schedule needs at least one step");
  NoiseSchedule sc;
  sc.steps = steps;
  sc.beta.assign(steps + 1, 0.0);
  if (kind == ScheduleKind::Cosine) {
    if (!(s >= 0.0)) fail(ErrorCode::BadScheduleParams, "cosine offset must be non-negative");
    auto f = [&](double t) {
      const double c = std::cos((t / steps + s) / (1.0 + s) * M_PI / 2.0);
      return c * c;
    };
    for (int t = 1; t <= steps; ++t) sc.beta[t] = std::min(1.0 - f(t) / f(t - 1), 0.999);
  } else {
    // Endpoints are given for 1000 steps and rescaled to the actual count.
    const double scale = 1000.0 / steps;
    const double lo = beta_start * scale;
    const double hi = beta_end * scale;
    if (!(lo > 0.0) || !(hi >= lo) || !(hi < 1.0)) fail(ErrorCode::BadScheduleParams, "linear betas must lie in (0, 1)");
    for (int t = 1; t <= steps; ++t) sc.beta[t] = steps == 1 ? lo : lo + (hi - lo) * (t - 1) / (steps - 1);
  }
  sc.alpha.assign(steps + 1, 1.0);
  sc.alpha_bar.assign(steps + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    if (!(sc.beta[t] > 0.0 && sc.beta[t] < 1.0)) fail(ErrorCode::BadScheduleParams, "beta outside (0, 1)");
    sc.alpha[t] = 1.0 - sc.beta[t];
    sc.alpha_bar[t] = sc.alpha_bar[t - 1] * sc.alpha[t];
  }
  return sc;
}

std::string_view to_string(ScheduleKind kind) { return kind == ScheduleKind::Cosine ? "cosine" : "linear"; }

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "cosine") return ScheduleKind::Cosine;
  if (name == "linear") return ScheduleKind::Linear;
  fail(ErrorCode::ConfigError, "unknown schedule '" + std::string(name) + "'");
}

FrameMatrix q_sample(const FrameMatrix& x0, int t, const FrameMatrix& noise, const NoiseSchedule& schedule) {
  if (t < 0 || t > schedule.steps) fail(ErrorCode::IndexOutOfRange, "diffusion step out of range");
  if (noise.rows() != x0.rows() || noise.cols() != x0.cols()) {
    fail(ErrorCode::FeatureWidthMismatch, "noise shape differs from x0");
  }
  const double ab = schedule.alpha_bar[t];
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * noise;
}

void DiffuserConfig::validate() const {
  if (features < 1 || text_dim < 1 || max_length < 1) fail(ErrorCode::ConfigError, "diffuser sizes must be positive");
  if (steps < 1) fail(ErrorCode::BadScheduleParams, "diffusion needs at least one step");
  if (!(p_drop >= 0.0 && p_drop < 1.0)) fail(ErrorCode::ConfigError, "p_drop must lie in [0, 1)");
  if (!(lr > 0.0) || weight_decay < 0.0 || batch_size < 1 || epochs < 0) {
    fail(ErrorCode::ConfigError, "bad diffuser optimizer settings");
  }
  if (!std::isfinite(guidance) || guidance < 0.0) fail(ErrorCode::ConfigError, "guidance must be finite and >= 0");
  encoder.validate();
}

nlohmann::json DiffuserConfig::to_json() const {
  return {{"features", features},   {"text_dim", text_dim},
          {"max_length", max_length}, {"encoder", encoder.to_json()},
          {"steps", steps},         {"schedule", std::string(to_string(schedule))},
          {"p_drop", p_drop},       {"lr", lr},
          {"weight_decay", weight_decay}, {"batch_size", batch_size},
          {"epochs", epochs},       {"guidance", guidance}};
}

DiffuserConfig DiffuserConfig::from_json(const nlohmann::json& j) {
  DiffuserConfig c;
  try {
    c.features = j.value("features", c.features);
    c.text_dim = j.value("text_dim", c.text_dim);
    c.max_length = j.value("max_length", c.max_length);
    if (j.contains("encoder")) c.encoder = nn::EncoderConfig::from_json(j["encoder"]);
    c.steps = j.value("steps", c.steps);
    if (j.contains("schedule")) c.schedule = parse_schedule_kind(j["schedule"].get<std::string>());
    c.p_drop = j.value("p_drop", c.p_drop);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.guidance = j.value("guidance", c.guidance);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("diffuser config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string DiffuserConfig::fingerprint() const { return io::sha256_hex(to_json().dump()); }

DiffusionModel::DiffusionModel(DiffuserConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.02);
  auto randn = [&](int rows, int cols) {
    nn::Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
  };
  const int w = cfg_.encoder.width;
  null_text_ = params_.add("text.null", randn(1, cfg_.text_dim));
  text_proj_ = nn::Linear(params_, "text.proj", cfg_.text_dim, w, rng);
  time1_ = nn::Linear(params_, "time.fc1", w, w, rng);
  time2_ = nn::Linear(params_, "time.fc2", w, w, rng);
  registers_ = params_.add("registers", randn(2, w));
  motion_in_ = nn::Linear(params_, "motion.input", cfg_.features, w, rng);
  encoder_ = nn::TransformerEncoder(params_, "encoder", cfg_.encoder, rng);
  motion_out_ = nn::Linear(params_, "motion.output", w, cfg_.features, rng);
  params_.quantize_f32();
}

nn::Var DiffusionModel::forward(const std::vector<FrameMatrix>& x_t, const std::vector<int>& t,
                                const std::vector<const embed::Embedding*>& text) const {
  const std::size_t b = x_t.size();
  if (t.size() != b || text.size() != b) fail(ErrorCode::ConfigError, "batch fields differ in size");
  if (b == 0) fail(ErrorCode::EmptyDataset, "empty denoising batch");
  const int w = cfg_.encoder.width;
  nn::Mat cond = nn::Mat::Zero(static_cast<Eigen::Index>(b), cfg_.text_dim);
  std::vector<std::pair<int, int>> cond_index;
  std::vector<double> times;
  std::vector<double> frame_pos;
  int total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const FrameMatrix& x = x_t[i];
    if (x.cols() != cfg_.features) fail(ErrorCode::FeatureWidthMismatch, "motion width differs from the model");
    if (x.rows() < 1) fail(ErrorCode::FrameCountMismatch, "motion has no frames");
    if (x.rows() > cfg_.max_length) {
      fail(ErrorCode::LengthExceedsMax, std::to_string(x.rows()) + " frames exceed the maximum of " +
                                            std::to_string(cfg_.max_length));
    }
    if (t[i] < 1 || t[i] > cfg_.steps) fail(ErrorCode::IndexOutOfRange, "diffusion step out of range");
    if (text[i]) {
      if (text[i]->size() != cfg_.text_dim) fail(ErrorCode::FeatureWidthMismatch, "text embedding width differs");
      cond.row(static_cast<Eigen::Index>(i)) = text[i]->transpose();
      cond_index.emplace_back(0, static_cast<int>(i));
    } else {
      cond_index.emplace_back(1, 0);
    }
    times.push_back(t[i]);
    for (int r = 0; r < x.rows(); ++r) frame_pos.push_back(r);
    total += static_cast<int>(x.rows());
  }
  nn::Mat frames(total, cfg_.features);
  int row = 0;
  for (const FrameMatrix& x : x_t) {
    frames.middleRows(row, x.rows()) = x;
    row += static_cast<int>(x.rows());
  }
  const nn::Var text_tok = text_proj_(nn::gather_rows({nn::constant(std::move(cond)), null_text_}, cond_index));
  const nn::Var time_tok = time2_(nn::gelu(time1_(nn::constant(nn::sinusoidal(times, w)))));
  const nn::Var motion_tok =
      nn::add(motion_in_(nn::constant(std::move(frames))), nn::constant(nn::sinusoidal(frame_pos, w)));

  // Sources: 0 text, 1 time, 2 registers, 3 motion rows.
  std::vector<std::pair<int, int>> layout;
  std::vector<std::pair<int, int>> motion_rows;
  std::vector<int> lengths;
  row = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const int start = static_cast<int>(layout.size());
    layout.emplace_back(0, static_cast<int>(i));
    layout.emplace_back(1, static_cast<int>(i));
    layout.emplace_back(2, 0);
    layout.emplace_back(2, 1);
    for (int r = 0; r < x_t[i].rows(); ++r) {
      motion_rows.emplace_back(0, static_cast<int>(layout.size()));
      layout.emplace_back(3, row++);
    }
    lengths.push_back(static_cast<int>(layout.size()) - start);
  }
  const nn::Var h = encoder_(nn::gather_rows({text_tok, time_tok, registers_, motion_tok}, layout),
                             nn::Segments::from_lengths(lengths));
  return motion_out_(nn::gather_rows({h}, motion_rows));
}

std::vector<FrameMatrix> DiffusionModel::predict(const std::vector<FrameMatrix>& x_t, const std::vector<int>& t,
                                                 const std::vector<const embed::Embedding*>& text) const {
  const nn::Mat out = forward(x_t, t, text)->value;
  std::vector<FrameMatrix> res;
  int row = 0;
  for (const FrameMatrix& x : x_t) {
    res.emplace_back(out.middleRows(row, x.rows()));
    row += static_cast<int>(x.rows());
  }
  return res;
}

std::vector<FrameMatrix> DiffusionModel::denoise(const std::vector<FrameMatrix>& padded, const std::vector<int>& lengths,
                                                 const std::vector<int>& t,
                                                 const std::vector<const embed::Embedding*>& text) const {
  if (lengths.size() != padded.size()) fail(ErrorCode::ConfigError, "one length per sequence is required");
  std::vector<FrameMatrix> trimmed;
  for (std::size_t i = 0; i < padded.size(); ++i) {
    if (lengths[i] > cfg_.max_length) fail(ErrorCode::LengthExceedsMax, "sequence exceeds the maximum length");
    if (lengths[i] < 1 || lengths[i] > padded[i].rows()) fail(ErrorCode::FrameCountMismatch, "bad sequence length");
    trimmed.emplace_back(padded[i].topRows(lengths[i]));
  }
  const auto pred = predict(trimmed, t, text);
  std::vector<FrameMatrix> out;
  for (std::size_t i = 0; i < padded.size(); ++i) {
    FrameMatrix full = FrameMatrix::Zero(padded[i].rows(), padded[i].cols());
    full.topRows(lengths[i]) = pred[i];
    out.push_back(std::move(full));
  }
  return out;
}

nn::Checkpoint DiffusionModel::to_checkpoint(nlohmann::json extra) const {
  nn::Checkpoint ck;
  ck.header = {{"kind", "diffusion"}, {"config", cfg_.to_json()}, {"fingerprint", cfg_.fingerprint()}};
  for (auto& [k, v] : extra.items()) ck.header[k] = v;
  ck.tensors = params_.snapshot();
  return ck;
}

DiffusionModel DiffusionModel::from_checkpoint(const nn::Checkpoint& ck) {
  if (ck.header.value("kind", std::string()) != "diffusion") fail(ErrorCode::SchemaViolation, "not a diffusion checkpoint");
  const DiffuserConfig cfg = DiffuserConfig::from_json(ck.header.at("config"));
  if (cfg.fingerprint() != ck.header.value("fingerprint", std::string())) {
    fail(ErrorCode::ChecksumMismatch, "diffuser config fingerprint does not match");
  }
  DiffusionModel m(cfg, 0);
  m.params_.restore(ck.tensors);
  return m;
}

TrainDraw draw_training_inputs(const std::vector<const TrainItem*>& batch, const NoiseSchedule& schedule,
                               double p_drop, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  TrainDraw d;
  for (const TrainItem* item : batch) {
    if (item->texts.empty()) fail(ErrorCode::EmptyText, "training motion without text");
    const embed::Embedding* text = &item->texts[rng() % item->texts.size()];
    if (u(rng) < p_drop) text = nullptr;
    const int t = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(schedule.steps));
    FrameMatrix noise(item->motion.rows(), item->motion.cols());
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = z(rng);
    d.x_t.push_back(q_sample(item->motion, t, noise, schedule));
    d.x0.push_back(item->motion);
    d.t.push_back(t);
    d.text.push_back(text);
  }
  return d;
}

namespace {

nn::Mat stack(const std::vector<FrameMatrix>& parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  nn::Mat out(rows, parts.empty() ? 0 : parts.front().cols());
  rows = 0;
  for (const auto& p : parts) {
    out.middleRows(rows, p.rows()) = p;
    rows += p.rows();
  }
  return out;
}

}  // namespace

nn::Var denoising_loss(const DiffusionModel& model, const TrainDraw& draw) {
  return nn::mse(model.forward(draw.x_t, draw.t, draw.text), stack(draw.x0));
}

double denoising_loss(const Denoiser& model, const TrainDraw& draw) {
  return (stack(model.predict(draw.x_t, draw.t, draw.text)) - stack(draw.x0)).squaredNorm() /
         static_cast<double>(stack(draw.x0).size());
}

double training_step(DiffusionModel& model, const std::vector<const TrainItem*>& batch,
                     const NoiseSchedule& schedule, double p_drop, nn::AdamW& opt, std::mt19937_64& rng) {
  const nn::Var loss = denoising_loss(model, draw_training_inputs(batch, schedule, p_drop, rng));
  nn::backward(loss);
  opt.step();
  return loss->value(0, 0);
}

DiffusionTrainResult train_diffusion(const std::vector<TrainItem>& data, const DiffuserConfig& cfg, std::uint64_t seed,
                                     const std::function<void(int, double)>& on_epoch) {
  cfg.validate();
  if (data.empty()) fail(ErrorCode::EmptyDataset, "no training motions");
  // Long motions are cut into a random window of max_length frames per draw.
  for (const TrainItem& item : data) {
    if (item.motion.cols() != cfg.features) fail(ErrorCode::FeatureWidthMismatch, "motion width differs from config");
    if (item.motion.rows() < 1) fail(ErrorCode::FrameCountMismatch, "motion has no frames");
    for (const auto& e : item.texts) {
      if (e.size() != cfg.text_dim) fail(ErrorCode::FeatureWidthMismatch, "text embedding width differs from config");
    }
  }
  DiffusionTrainResult res;
  res.model = std::make_unique<DiffusionModel>(cfg, seed);
  const NoiseSchedule schedule = NoiseSchedule::build(cfg.steps, cfg.schedule);
  nn::AdamWConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  opt_cfg.weight_decay = cfg.weight_decay;
  nn::AdamW opt(res.model->params(), opt_cfg);
  std::mt19937_64 rng(seed ^ 0xd1b54a32d192ed03ULL);
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<TrainItem> windows(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    embed::seeded_shuffle(order, rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const TrainItem*> batch;
      for (std::size_t i = start; i < end; ++i) {
        const TrainItem& item = data[order[i]];
        if (item.motion.rows() <= cfg.max_length) {
          batch.push_back(&item);
          continue;
        }
        TrainItem& win = windows[i - start];
        const auto off = static_cast<Eigen::Index>(rng() % (item.motion.rows() - cfg.max_length + 1));
        win.motion = item.motion.middleRows(off, cfg.max_length);
        win.texts = item.texts;
        batch.push_back(&win);
      }
      loss_sum += training_step(*res.model, batch, schedule, cfg.p_drop, opt, rng);
      ++batches;
    }
    res.epoch_losses.push_back(loss_sum / batches);
    if (on_epoch) on_epoch(epoch, res.epoch_losses.back());
  }
  res.model->params().quantize_f32();
  return res;
}

FrameMatrix guide(const FrameMatrix& x0_cond, const FrameMatrix& x0_uncond, double lambda) {
  return (1.0 - lambda) * x0_uncond + lambda * x0_cond;
}

FrameMatrix sample(const Denoiser& model, const embed::Embedding* text, int length, double lambda,
                   const NoiseSchedule& schedule, std::uint64_t seed,
                   const std::function<void(const GuidanceTrace&)>& observer) {
  if (length < 1) fail(ErrorCode::FrameCountMismatch, "generation length must be positive");
  if (length > model.max_length()) {
    fail(ErrorCode::LengthExceedsMax, std::to_string(length) + " frames exceed the maximum of " +
                                          std::to_string(model.max_length()));
  }
  if (!std::isfinite(lambda)) fail(ErrorCode::ConfigError, "guidance must be finite");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  auto noise = [&] {
    FrameMatrix n(length, model.features());
    for (Eigen::Index i = 0; i < n.size(); ++i) n.data()[i] = z(rng);
    return n;
  };
  FrameMatrix x = noise();
  for (int t = schedule.steps; t >= 1; --t) {
    GuidanceTrace tr;
    tr.t = t;
    if (!text) {
      tr.x0_uncond = model.predict({x}, {t}, {nullptr})[0];
      tr.x0_guided = tr.x0_uncond;
    } else if (lambda == 1.0) {
      tr.x0_cond = model.predict({x}, {t}, {text})[0];
      tr.x0_guided = tr.x0_cond;
    } else if (lambda == 0.0) {
      tr.x0_uncond = model.predict({x}, {t}, {nullptr})[0];
      tr.x0_guided = tr.x0_uncond;
    } else {
      auto both = model.predict({x, x}, {t, t}, {text, nullptr});
      tr.x0_cond = std::move(both[0]);
      tr.x0_uncond = std::move(both[1]);
      tr.x0_guided = guide(tr.x0_cond, tr.x0_uncond, lambda);
    }
    if (observer) observer(tr);
    if (t == 1) return tr.x0_guided;
    const double ab = schedule.alpha_bar[t];
    const double ab_prev = schedule.alpha_bar[t - 1];
    const double beta = schedule.beta[t];
    const double c0 = beta * std::sqrt(ab_prev) / (1.0 - ab);
    const double ct = (1.0 - ab_prev) * std::sqrt(schedule.alpha[t]) / (1.0 - ab);
    const double sigma = std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
    x = c0 * tr.x0_guided + ct * x + sigma * noise();
  }
  return x;
}

MotionSequence to_motion(const FrameMatrix& frames, std::string id, double fps) {
  if (frames.cols() != kFeatureCount) fail(ErrorCode::LayoutMismatch, "generated frames are not 274 wide");
  MotionSequence m;
  m.id = std::move(id);
  m.fps = fps;
  m.frames = frames;
  for (int t = 0; t < m.num_frames(); ++t) {
    auto f = m.frame(t);
    for (int b = 0; b < kRotationBlockCount; ++b) {
      Rotation6D r;
      try {
        r = matrix_to_rot6d(rot6d_to_matrix(f.subspan(6 * b, 6)));
      } catch (const Error&) {
        r = Rotation6D{};
      }
      r.write_to(f.subspan(6 * b, 6));
    }
  }
  return m;
}

}  // namespace hm::diffusion
