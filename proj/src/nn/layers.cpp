#include "handmotion/nn/layers.hpp"

#include <cmath>
#include <cstring>

#include "handmotion/binary_io.hpp"
#include "handmotion/error.hpp"

namespace hm::nn {

Var ParamStore::add(const std::string& name, Mat init) {
  for (const auto& [n, v] : params_) {
    if (n == name) fail(ErrorCode::ConfigError, "duplicate parameter name '" + name + "'");
  }
  Var p = parameter(std::move(init));
  params_.emplace_back(name, p);
  return p;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) p->grad.resize(0, 0);
}

void ParamStore::quantize_f32() {
  for (auto& [name, p] : params_) {
    p->value = p->value.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
  }
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

std::vector<std::pair<std::string, Mat>> ParamStore::snapshot() const {
  std::vector<std::pair<std::string, Mat>> out;
  for (const auto& [name, p] : params_) out.emplace_back(name, p->value);
  return out;
}

void ParamStore::restore(const std::vector<std::pair<std::string, Mat>>& values) {
  if (values.size() != params_.size()) fail(ErrorCode::SchemaViolation, "checkpoint tensor count differs from model");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& [name, p] = params_[i];
    const auto& [vname, v] = values[i];
    if (vname != name || v.rows() != p->value.rows() || v.cols() != p->value.cols()) {
      fail(ErrorCode::SchemaViolation, "checkpoint tensor '" + vname + "' does not match parameter '" + name + "'");
    }
    p->value = v;
  }
}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Mat w0(in, out);
  for (Eigen::Index i = 0; i < w0.size(); ++i) w0.data()[i] = u(rng);
  Mat b0(1, out);
  for (Eigen::Index i = 0; i < b0.size(); ++i) b0.data()[i] = u(rng);
  w = store.add(name + ".w", std::move(w0));
  b = store.add(name + ".b", std::move(b0));
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, int width) {
  gamma = store.add(name + ".gamma", Mat::Ones(1, width));
  beta = store.add(name + ".beta", Mat::Zero(1, width));
}

void EncoderConfig::validate() const {
  if (width < 1 || layers < 0 || heads < 1 || ff < 1 || width % heads != 0) {
    fail(ErrorCode::ConfigError, "encoder width must be positive and divisible by the head count");
  }
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"width", width}, {"layers", layers}, {"heads", heads}, {"ff", ff}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.width = j.value("width", c.width);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.ff = j.value("ff", c.ff);
  c.validate();
  return c;
}

TransformerEncoder::TransformerEncoder(ParamStore& store, const std::string& name, const EncoderConfig& cfg,
                                       std::mt19937_64& rng)
    : cfg_(cfg) {
  cfg.validate();
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = name + ".layer" + std::to_string(l);
    Block b;
    b.ln1 = LayerNorm(store, p + ".ln1", cfg.width);
    b.q = Linear(store, p + ".q", cfg.width, cfg.width, rng);
    b.k = Linear(store, p + ".k", cfg.width, cfg.width, rng);
    b.v = Linear(store, p + ".v", cfg.width, cfg.width, rng);
    b.o = Linear(store, p + ".o", cfg.width, cfg.width, rng);
    b.ln2 = LayerNorm(store, p + ".ln2", cfg.width);
    b.ff1 = Linear(store, p + ".ff1", cfg.width, cfg.ff, rng);
    b.ff2 = Linear(store, p + ".ff2", cfg.ff, cfg.width, rng);
    blocks_.push_back(std::move(b));
  }
  final_ = LayerNorm(store, name + ".ln_out", cfg.width);
}

Var TransformerEncoder::operator()(Var x, const Segments& seg) const {
  for (const Block& b : blocks_) {
    const Var h = b.ln1(x);
    x = add(x, b.o(attention(b.q(h), b.k(h), b.v(h), seg, cfg_.heads)));
    x = add(x, b.ff2(gelu(b.ff1(b.ln2(x)))));
  }
  return final_(x);
}

Mat sinusoidal(const std::vector<double>& positions, int width) {
  Mat out(static_cast<Eigen::Index>(positions.size()), width);
  const int half = width / 2;
  for (std::size_t r = 0; r < positions.size(); ++r) {
    for (int i = 0; i < width; ++i) {
      const int k = i % std::max(half, 1);
      const double freq = std::exp(-std::log(10000.0) * k / std::max(half, 1));
      out(static_cast<Eigen::Index>(r), i) = i < half ? std::sin(positions[r] * freq) : std::cos(positions[r] * freq);
    }
  }
  return out;
}

AdamW::AdamW(ParamStore& store, AdamWConfig cfg) : store_(store), cfg_(cfg) {
  if (!(cfg_.lr > 0.0) || cfg_.weight_decay < 0.0 || cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 ||
      cfg_.beta2 >= 1.0) {
    fail(ErrorCode::ConfigError, "bad optimizer settings");
  }
  for (const auto& [name, p] : store_.items()) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step() {
  const auto& items = store_.items();
  double clip = 1.0;
  if (cfg_.max_grad_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, p] : items) {
      if (p->grad.size() != 0) sq += p->grad.squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg_.max_grad_norm) clip = cfg_.max_grad_norm / norm;
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < items.size(); ++i) {
    Node& p = *items[i].second;
    if (p.grad.size() != 0) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * clip * p.grad;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * (clip * p.grad).cwiseAbs2();
    } else {
      m_[i] *= cfg_.beta1;
      v_[i] *= cfg_.beta2;
    }
    const Mat update = (m_[i] / bc1).array() / ((v_[i] / bc2).array().sqrt() + cfg_.eps);
    p.value -= cfg_.lr * (update + cfg_.weight_decay * p.value);
    p.grad.resize(0, 0);
  }
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  io::ByteWriter w;
  w.magic("HMCK");
  w.u32(kCheckpointVersion);
  w.str(ck.header.dump());
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& [name, m] : ck.tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) w.f32(static_cast<float>(m(r, c)));
    }
  }
  const auto digest = io::sha256(w.data().data(), w.data().size());
  w.bytes(digest.data(), digest.size());
  return std::move(w.data());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 + 32) fail(ErrorCode::TruncatedPayload, "checkpoint too short");
  io::ByteReader r(bytes);
  if (r.magic(4) != "HMCK") fail(ErrorCode::BadMagic, "not a checkpoint");
  const auto digest = io::sha256(bytes.data(), bytes.size() - 32);
  if (std::memcmp(digest.data(), bytes.data() + bytes.size() - 32, 32) != 0) {
    fail(ErrorCode::ChecksumMismatch, "checkpoint digest does not match its contents");
  }
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    fail(ErrorCode::VersionUnsupported, "checkpoint version " + std::to_string(v));
  }
  Checkpoint ck;
  ck.header = nlohmann::json::parse(r.str(), nullptr, false);
  if (ck.header.is_discarded()) fail(ErrorCode::SchemaViolation, "checkpoint header is not JSON");
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    r.need(static_cast<std::size_t>(rows) * cols * 4);
    Mat m(rows, cols);
    for (std::uint32_t a = 0; a < rows; ++a) {
      for (std::uint32_t b = 0; b < cols; ++b) m(a, b) = r.f32();
    }
    ck.tensors.emplace_back(std::move(name), std::move(m));
  }
  if (r.remaining() != 32) fail(ErrorCode::SchemaViolation, "unexpected bytes after checkpoint tensors");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  io::write_file(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::MissingCheckpoint, path.string() + " does not exist");
  return decode_checkpoint(io::read_file(path));
}

}  // namespace hm::nn
