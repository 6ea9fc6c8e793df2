#include "handmotion/embed.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "handmotion/binary_io.hpp"
#include "handmotion/error.hpp"

namespace hm::embed {

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c >= 0x80 || std::isalnum(c) || c == '\'') {
      word.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    } else if (std::isspace(c)) {
      flush();
    } else {
      flush();
      out.emplace_back(1, ch);
    }
  }
  flush();
  return out;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::set<std::string> seen;
  for (const std::string& t : texts) {
    for (std::string& tok : tokenize(t)) seen.insert(std::move(tok));
  }
  Vocabulary v;
  for (const std::string& tok : seen) {
    v.ids_[tok] = v.size();
    v.tokens_.push_back(tok);
  }
  return v;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v;
  const auto tokens = j.get<std::vector<std::string>>();
  if (tokens.empty() || tokens.front() != "<unk>") fail(ErrorCode::SchemaViolation, "vocabulary must start with <unk>");
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    v.ids_[tokens[i]] = v.size();
    v.tokens_.push_back(tokens[i]);
  }
  return v;
}

nlohmann::json Vocabulary::to_json() const { return tokens_; }

int Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnknown : it->second;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> out;
  for (const std::string& tok : tokenize(text)) out.push_back(id(tok));
  return out;
}

PrecomputedTexts PrecomputedTexts::load(const std::filesystem::path& path) {
  PrecomputedTexts t;
  for (const auto& j : read_jsonl(path)) {
    try {
      const auto& e = j.at("embedding");
      std::vector<std::vector<double>> rows;
      if (!e.empty() && e.front().is_array()) {
        rows = e.get<std::vector<std::vector<double>>>();
      } else {
        rows.push_back(e.get<std::vector<double>>());
      }
      Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : rows.front().size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != static_cast<std::size_t>(m.cols())) {
          fail(ErrorCode::FeatureWidthMismatch, path.string() + ": ragged embedding rows");
        }
        for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
      }
      t.add(j.at("text").get<std::string>(), std::move(m));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::SchemaViolation, path.string() + ": " + e.what());
    }
  }
  return t;
}

void PrecomputedTexts::add(const std::string& text, Eigen::MatrixXd rows) {
  if (rows.rows() < 1 || rows.cols() < 1) fail(ErrorCode::SchemaViolation, "empty precomputed embedding");
  if (dim_ != 0 && rows.cols() != dim_) fail(ErrorCode::FeatureWidthMismatch, "precomputed embedding width differs");
  dim_ = static_cast<int>(rows.cols());
  table_[text] = std::move(rows);
}

const Eigen::MatrixXd& PrecomputedTexts::lookup(const std::string& text) const {
  if (text.empty()) fail(ErrorCode::EmptyText, "empty text");
  const auto it = table_.find(text);
  if (it == table_.end()) fail(ErrorCode::SchemaViolation, "no precomputed embedding for '" + text + "'");
  return it->second;
}

Embedding PrecomputedTextEmbedder::embed(const std::string& text) const {
  return table_.lookup(text).colwise().mean().transpose();
}

void ThmrConfig::validate() const {
  if (latent_dim < 1) fail(ErrorCode::ConfigError, "latent_dim must be positive");
  if (!(temperature > 0.0)) fail(ErrorCode::ConfigError, "temperature must be positive");
  if (lambda_nce < 0.0) fail(ErrorCode::ConfigError, "lambda_nce must be non-negative");
  if (!(lr > 0.0) || weight_decay < 0.0) fail(ErrorCode::ConfigError, "bad learning rate or weight decay");
  if (batch_size < 2) fail(ErrorCode::ConfigError, "contrastive training needs batch_size >= 2");
  if (epochs < 0) fail(ErrorCode::ConfigError, "epochs must be non-negative");
  if (text_input == TextInput::Precomputed && text_input_dim < 1) {
    fail(ErrorCode::ConfigError, "precomputed text input needs text_input_dim");
  }
  motion_encoder.validate();
  text_encoder.validate();
}

nlohmann::json ThmrConfig::to_json() const {
  return {{"latent_dim", latent_dim},
          {"temperature", temperature},
          {"lambda_nce", lambda_nce},
          {"lr", lr},
          {"weight_decay", weight_decay},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"subset", std::string(to_string(subset))},
          {"motion_encoder", motion_encoder.to_json()},
          {"text_encoder", text_encoder.to_json()},
          {"text_input", text_input == TextInput::Tokens ? "tokens" : "precomputed"},
          {"text_input_dim", text_input_dim}};
}

ThmrConfig ThmrConfig::from_json(const nlohmann::json& j) {
  ThmrConfig c;
  try {
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.temperature = j.value("temperature", c.temperature);
    c.lambda_nce = j.value("lambda_nce", c.lambda_nce);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("subset")) c.subset = parse_feature_subset(j["subset"].get<std::string>());
    if (j.contains("motion_encoder")) c.motion_encoder = nn::EncoderConfig::from_json(j["motion_encoder"]);
    if (j.contains("text_encoder")) c.text_encoder = nn::EncoderConfig::from_json(j["text_encoder"]);
    const std::string input = j.value("text_input", std::string("tokens"));
    if (input != "tokens" && input != "precomputed") fail(ErrorCode::ConfigError, "text_input must be tokens or precomputed");
    c.text_input = input == "tokens" ? TextInput::Tokens : TextInput::Precomputed;
    c.text_input_dim = j.value("text_input_dim", c.text_input_dim);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("THMR config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string ThmrConfig::fingerprint() const { return io::sha256_hex(to_json().dump()); }

ThmrModel::ThmrModel(ThmrConfig cfg, Vocabulary vocab, std::uint64_t seed)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.02);
  auto randn = [&](int rows, int cols) {
    nn::Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
  };
  const int mw = cfg_.motion_encoder.width;
  const int tw = cfg_.text_encoder.width;
  motion_in_ = nn::Linear(params_, "motion.input", subset_width(cfg_.subset), mw, rng);
  motion_cls_ = params_.add("motion.summary", randn(1, mw));
  motion_enc_ = nn::TransformerEncoder(params_, "motion.encoder", cfg_.motion_encoder, rng);
  motion_out_ = nn::Linear(params_, "motion.output", mw, cfg_.latent_dim, rng);
  if (cfg_.text_input == TextInput::Tokens) {
    token_table_ = params_.add("text.tokens", randn(vocab_.size(), tw));
  } else {
    text_in_ = nn::Linear(params_, "text.input", cfg_.text_input_dim, tw, rng);
  }
  text_cls_ = params_.add("text.summary", randn(1, tw));
  text_enc_ = nn::TransformerEncoder(params_, "text.encoder", cfg_.text_encoder, rng);
  text_out_ = nn::Linear(params_, "text.output", tw, cfg_.latent_dim, rng);
  params_.quantize_f32();
}

void ThmrModel::set_precomputed(std::shared_ptr<const PrecomputedTexts> table) {
  if (table && cfg_.text_input == TextInput::Precomputed && table->dim() != cfg_.text_input_dim) {
    fail(ErrorCode::FeatureWidthMismatch, "precomputed text width differs from the model");
  }
  precomputed_ = std::move(table);
}

namespace {

/// Lays out [summary token, items...] per sequence and returns the summary
/// rows after encoding.
nn::Var encode_with_summary(const nn::Var& items, const nn::Var& summary, const std::vector<int>& lengths,
                            const nn::TransformerEncoder& enc, const nn::Linear& out) {
  std::vector<std::pair<int, int>> index;
  std::vector<int> seq_lengths;
  int row = 0;
  for (int len : lengths) {
    index.emplace_back(0, 0);
    for (int i = 0; i < len; ++i) index.emplace_back(1, row++);
    seq_lengths.push_back(len + 1);
  }
  const nn::Segments seg = nn::Segments::from_lengths(seq_lengths);
  const nn::Var h = enc(nn::gather_rows({summary, items}, index), seg);
  std::vector<std::pair<int, int>> heads;
  for (int o : seg.offsets) heads.emplace_back(0, o);
  return out(nn::gather_rows({h}, heads));
}

nn::Mat positions(const std::vector<int>& lengths, int width) {
  std::vector<double> pos;
  for (int len : lengths) {
    for (int i = 0; i < len; ++i) pos.push_back(i);
  }
  return nn::sinusoidal(pos, width);
}

}  // namespace

nn::Var ThmrModel::motion_forward(const std::vector<const FrameMatrix*>& motions) const {
  const int width = subset_width(cfg_.subset);
  std::vector<int> lengths;
  int total = 0;
  for (const FrameMatrix* m : motions) {
    if (m->cols() != width) {
      fail(ErrorCode::FeatureWidthMismatch, "motion has " + std::to_string(m->cols()) + " features, model expects " +
                                                std::to_string(width));
    }
    if (m->rows() < 1) fail(ErrorCode::FrameCountMismatch, "motion has no frames");
    lengths.push_back(static_cast<int>(m->rows()));
    total += lengths.back();
  }
  nn::Mat x(total, width);
  int row = 0;
  for (const FrameMatrix* m : motions) {
    x.middleRows(row, m->rows()) = *m;
    row += static_cast<int>(m->rows());
  }
  const nn::Var proj =
      nn::add(motion_in_(nn::constant(std::move(x))), nn::constant(positions(lengths, cfg_.motion_encoder.width)));
  return encode_with_summary(proj, motion_cls_, lengths, motion_enc_, motion_out_);
}

nn::Var ThmrModel::text_forward(const std::vector<std::string>& texts) const {
  std::vector<int> lengths;
  nn::Var items;
  if (cfg_.text_input == TextInput::Tokens) {
    std::vector<std::pair<int, int>> index;
    for (const std::string& t : texts) {
      const std::vector<int> ids = vocab_.encode(t);
      if (ids.empty()) fail(ErrorCode::EmptyText, "text has no tokens");
      for (int id : ids) index.emplace_back(0, id);
      lengths.push_back(static_cast<int>(ids.size()));
    }
    items = nn::gather_rows({token_table_}, index);
  } else {
    if (!precomputed_) fail(ErrorCode::ConfigError, "model reads precomputed text inputs but none were loaded");
    std::vector<const Eigen::MatrixXd*> rows;
    int total = 0;
    for (const std::string& t : texts) {
      rows.push_back(&precomputed_->lookup(t));
      lengths.push_back(static_cast<int>(rows.back()->rows()));
      total += lengths.back();
    }
    nn::Mat x(total, cfg_.text_input_dim);
    int r = 0;
    for (const auto* m : rows) {
      x.middleRows(r, m->rows()) = *m;
      r += static_cast<int>(m->rows());
    }
    items = text_in_(nn::constant(std::move(x)));
  }
  items = nn::add(items, nn::constant(positions(lengths, cfg_.text_encoder.width)));
  return encode_with_summary(items, text_cls_, lengths, text_enc_, text_out_);
}

Eigen::MatrixXd ThmrModel::encode_motions(const std::vector<const FrameMatrix*>& motions) const {
  if (motions.empty()) return Eigen::MatrixXd(0, cfg_.latent_dim);
  return motion_forward(motions)->value;
}

Eigen::MatrixXd ThmrModel::encode_texts(const std::vector<std::string>& texts) const {
  if (texts.empty()) return Eigen::MatrixXd(0, cfg_.latent_dim);
  return text_forward(texts)->value;
}

Embedding ThmrModel::encode_motion(const FrameMatrix& reduced) const {
  return encode_motions({&reduced}).row(0).transpose();
}

Embedding ThmrModel::encode_text(const std::string& text) const {
  if (text.empty()) fail(ErrorCode::EmptyText, "empty text");
  return encode_texts({text}).row(0).transpose();
}

nn::Checkpoint ThmrModel::to_checkpoint() const {
  nn::Checkpoint ck;
  ck.header = {{"kind", "thmr"},
               {"config", cfg_.to_json()},
               {"fingerprint", cfg_.fingerprint()},
               {"vocabulary", vocab_.to_json()}};
  ck.tensors = params_.snapshot();
  return ck;
}

ThmrModel ThmrModel::from_checkpoint(const nn::Checkpoint& ck) {
  if (ck.header.value("kind", std::string()) != "thmr") fail(ErrorCode::SchemaViolation, "not a THMR checkpoint");
  const ThmrConfig cfg = ThmrConfig::from_json(ck.header.at("config"));
  if (cfg.fingerprint() != ck.header.value("fingerprint", std::string())) {
    fail(ErrorCode::ChecksumMismatch, "THMR config fingerprint does not match");
  }
  ThmrModel m(cfg, Vocabulary::from_json(ck.header.at("vocabulary")), 0);
  m.params_.restore(ck.tensors);
  return m;
}

void ThmrModel::save(const std::filesystem::path& path) const { nn::save_checkpoint(path, to_checkpoint()); }

ThmrModel ThmrModel::load(const std::filesystem::path& path) { return from_checkpoint(nn::load_checkpoint(path)); }

void seeded_shuffle(std::vector<int>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(v[i - 1], v[j]);
  }
}

ThmrTrainResult train_thmr(const std::vector<ThmrPair>& data, const ThmrConfig& cfg, std::uint64_t seed,
                           const std::function<void(int, double)>& on_epoch,
                           std::shared_ptr<const PrecomputedTexts> precomputed) {
  cfg.validate();
  if (data.size() < 2) fail(ErrorCode::EmptyDataset, "contrastive training needs at least two pairs");
  std::vector<std::string> all_texts;
  for (const ThmrPair& p : data) {
    if (p.texts.empty()) fail(ErrorCode::EmptyText, "training pair without text");
    all_texts.insert(all_texts.end(), p.texts.begin(), p.texts.end());
  }
  ThmrTrainResult res;
  res.model = std::make_unique<ThmrModel>(cfg, Vocabulary::build(all_texts), seed);
  ThmrModel& model = *res.model;
  model.set_precomputed(std::move(precomputed));
  nn::AdamWConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  opt_cfg.weight_decay = cfg.weight_decay;
  nn::AdamW opt(model.params(), opt_cfg);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    seeded_shuffle(order, rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start + 1 < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const FrameMatrix*> motions;
      std::vector<std::string> texts;
      for (std::size_t i = start; i < end; ++i) {
        const ThmrPair& p = data[order[i]];
        motions.push_back(&p.motion);
        texts.push_back(p.texts[rng() % p.texts.size()]);
      }
      const nn::Var t = nn::normalize_rows(model.text_forward(texts));
      const nn::Var m = nn::normalize_rows(model.motion_forward(motions));
      const nn::Var loss = nn::scale(nn::infonce(t, m, cfg.temperature), cfg.lambda_nce);
      nn::backward(loss);
      opt.step();
      loss_sum += loss->value(0, 0);
      ++batches;
    }
    res.epoch_losses.push_back(batches ? loss_sum / batches : 0.0);
    if (on_epoch) on_epoch(epoch, res.epoch_losses.back());
  }
  model.params().quantize_f32();
  return res;
}

std::unique_ptr<TextEmbedder> load_text_embedder(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::MissingCheckpoint, path.string() + " does not exist");
  const auto bytes = io::read_file(path);
  if (bytes.size() >= 4 && std::string(bytes.begin(), bytes.begin() + 4) == "HMCK") {
    auto model = std::make_shared<ThmrModel>(ThmrModel::from_checkpoint(nn::decode_checkpoint(bytes)));
    return std::make_unique<ThmrTextEmbedder>(std::move(model));
  }
  return std::make_unique<PrecomputedTextEmbedder>(PrecomputedTexts::load(path));
}

double cosine_similarity(const Embedding& a, const Embedding& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) fail(ErrorCode::ZeroVector, "cosine similarity of a zero vector");
  return a.dot(b) / (na * nb);
}

namespace {

Eigen::MatrixXd unit_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (!(n > 0.0)) fail(ErrorCode::ZeroVector, "row " + std::to_string(r) + " has zero norm");
    out.row(r) = m.row(r) / n;
  }
  return out;
}

}  // namespace

RetrievalResult retrieval(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& gallery,
                          const std::function<bool(int, int)>& correct, const std::vector<int>& ks) {
  if (queries.cols() != gallery.cols()) fail(ErrorCode::FeatureWidthMismatch, "query and gallery widths differ");
  const Eigen::MatrixXd sims = unit_rows(queries) * unit_rows(gallery).transpose();
  RetrievalResult res;
  std::map<int, int> hits;
  for (int k : ks) hits[k] = 0;
  for (Eigen::Index q = 0; q < sims.rows(); ++q) {
    std::vector<int> order(static_cast<std::size_t>(gallery.rows()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sims(q, a) > sims(q, b); });
    for (int k : ks) {
      const int top = std::min<int>(k, static_cast<int>(order.size()));
      for (int i = 0; i < top; ++i) {
        if (correct(static_cast<int>(q), order[i])) {
          ++hits[k];
          break;
        }
      }
    }
    res.ranked.push_back(std::move(order));
  }
  for (auto [k, h] : hits) res.recall[k] = sims.rows() ? 100.0 * h / static_cast<double>(sims.rows()) : 0.0;
  return res;
}

bool text_similarity_correct(const Embedding& a, const Embedding& b, double threshold) {
  return cosine_similarity(a, b) > threshold;
}

namespace {

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, Eigen::RowVectorXd& mean) {
  mean = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - mean;
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& s) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (s + s.transpose()));
  Eigen::VectorXd ev = eig.eigenvalues();
  const double tol = 1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < -tol) {
    fail(ErrorCode::CovarianceSingularBeyondTolerance,
         "covariance has eigenvalue " + std::to_string(ev.minCoeff()));
  }
  ev = ev.cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() < 2 || b.rows() < 2) fail(ErrorCode::InsufficientSamples, "FID needs at least two samples per set");
  if (a.cols() != b.cols()) fail(ErrorCode::FeatureWidthMismatch, "FID sets differ in width");
  Eigen::RowVectorXd mu_a, mu_b;
  const Eigen::MatrixXd sa = covariance(a, mu_a);
  const Eigen::MatrixXd sb = covariance(b, mu_b);
  // Tr((Sa Sb)^1/2) equals the nuclear norm of Sa^1/2 Sb^1/2, which stays
  // accurate when the covariances are rank deficient.
  const Eigen::MatrixXd prod = sqrt_psd(sa) * sqrt_psd(sb);
  const double tr_covmean = Eigen::JacobiSVD<Eigen::MatrixXd>(prod).singularValues().sum();
  return (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_covmean;
}

double diversity(const Eigen::MatrixXd& embeddings, int n_pairs, std::uint64_t seed) {
  if (n_pairs < 1 || 2 * static_cast<Eigen::Index>(n_pairs) > embeddings.rows()) {
    fail(ErrorCode::InsufficientSamples, "diversity needs " + std::to_string(2 * n_pairs) + " samples, got " +
                                             std::to_string(embeddings.rows()));
  }
  std::vector<int> idx(static_cast<std::size_t>(embeddings.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  seeded_shuffle(idx, rng);
  double sum = 0.0;
  for (int p = 0; p < n_pairs; ++p) sum += (embeddings.row(idx[2 * p]) - embeddings.row(idx[2 * p + 1])).norm();
  return sum / n_pairs;
}

double multimodality(const std::vector<Eigen::MatrixXd>& per_text) {
  if (per_text.empty()) fail(ErrorCode::InsufficientSamples, "multimodality needs at least one text");
  double total = 0.0;
  for (const Eigen::MatrixXd& g : per_text) {
    if (g.rows() < 2) fail(ErrorCode::InsufficientSamples, "multimodality needs two generations per text");
    double sum = 0.0;
    int count = 0;
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < g.rows(); ++j, ++count) sum += (g.row(i) - g.row(j)).norm();
    }
    total += sum / count;
  }
  return total / static_cast<double>(per_text.size());
}

}  // namespace hm::embed
