#include "handmotion/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

#include "handmotion/binary_io.hpp"
#include "handmotion/embed.hpp"
#include "handmotion/error.hpp"
#include "handmotion/stages.hpp"

namespace hm::eval {
namespace {

using nlohmann::json;

std::string recall_key(int k) { return "R" + std::to_string(k); }

struct Generated {
  std::vector<std::string> ids;
  std::map<std::string, std::string> path_of;
};

Generated read_generation(const fs::path& dir) {
  Generated g;
  for (const ManifestRecord& r : read_manifest(dir / "manifest.jsonl")) {
    g.ids.push_back(r.id);
    g.path_of[r.id] = r.path;
  }
  return g;
}

}  // namespace

std::string_view to_string(Mode m) { return m == Mode::MotionToMotion ? "m2m" : "m2t"; }

Mode parse_mode(std::string_view s) {
  if (s == "m2m") return Mode::MotionToMotion;
  if (s == "m2t") return Mode::MotionToText;
  fail(ErrorCode::ConfigError, "eval mode must be m2m or m2t, got '" + std::string(s) + "'");
}

json EvalOptions::to_json() const {
  return {{"mode", to_string(mode)},
          {"ks", ks},
          {"text_threshold", text_threshold},
          {"diversity_pairs", diversity_pairs},
          {"seed", seed}};
}

EvalOptions EvalOptions::from_json(const json& j) {
  EvalOptions o;
  try {
    if (j.contains("mode")) o.mode = parse_mode(j["mode"].get<std::string>());
    o.ks = j.value("ks", o.ks);
    o.text_threshold = j.value("text_threshold", o.text_threshold);
    o.diversity_pairs = j.value("diversity_pairs", o.diversity_pairs);
    o.seed = j.value("seed", o.seed);
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("eval options: ") + e.what());
  }
  if (o.ks.empty() || *std::min_element(o.ks.begin(), o.ks.end()) < 1) fail(ErrorCode::ConfigError, "ks must be >= 1");
  if (o.diversity_pairs < 1) fail(ErrorCode::ConfigError, "diversity_pairs must be positive");
  return o;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

json EvalReport::to_json() const {
  json j;
  j["mode"] = to_string(options.mode);
  j["repeats"] = static_cast<int>(repeats.size());
  j["num_queries"] = num_queries;
  json raw = json::object();
  auto put = [&](const std::string& name, const std::string& mean_key, const std::vector<double>& values) {
    const auto [m, s] = mean_std(values);
    j[mean_key] = m;
    j[name + "_std"] = s;
    raw[name] = values;
  };
  for (int k : options.ks) {
    std::vector<double> v;
    for (const auto& r : repeats) v.push_back(r.recall.at(k));
    put(recall_key(k), recall_key(k) + "_mean", v);
  }
  std::vector<double> fids, divs;
  for (const auto& r : repeats) {
    fids.push_back(r.fid);
    divs.push_back(r.diversity);
  }
  put("FID", "FID", fids);
  put("diversity", "diversity", divs);
  j["multimodality"] = multimodality ? json(*multimodality) : json(nullptr);
  j["raw"] = raw;
  j["options"] = options.to_json();
  j["config_fingerprint"] = config_fingerprint;
  j["content_hash"] = content_hash;
  return j;
}

std::string content_hash(const std::vector<fs::path>& inputs) {
  std::string listing;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const fs::path& in = inputs[i];
    if (!fs::exists(in)) fail(ErrorCode::IoError, "missing input " + in.string());
    std::vector<std::pair<std::string, fs::path>> files;
    if (fs::is_directory(in)) {
      for (const auto& e : fs::recursive_directory_iterator(in)) {
        if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), in).generic_string(), e.path());
      }
    } else {
      files.emplace_back(in.filename().generic_string(), in);
    }
    std::sort(files.begin(), files.end());
    for (const auto& [rel, path] : files) {
      const auto bytes = io::read_file(path);
      listing += std::to_string(i) + "/" + rel + '\0' + io::sha256_hex(bytes.data(), bytes.size()) + "\n";
    }
  }
  return io::sha256_hex(listing);
}

EvalReport evaluate(const fs::path& thmr_ckpt, const std::vector<fs::path>& gen_dirs, const fs::path& gt_dir,
                    const EvalOptions& opts) {
  if (gen_dirs.empty()) fail(ErrorCode::ConfigError, "no generation directories");
  const embed::ThmrModel model = embed::ThmrModel::load(thmr_ckpt);
  const auto subset = model.config().subset;
  const stages::Dataset gt = stages::Dataset::load(gt_dir);
  std::map<std::string, const ManifestRecord*> gt_by_id;
  for (const auto& r : gt.records) gt_by_id[r.id] = &r;

  const Generated first = read_generation(gen_dirs.front());
  const std::vector<std::string>& ids = first.ids;
  if (ids.empty()) fail(ErrorCode::EmptyDataset, "generation directory lists no motions");
  std::vector<FrameMatrix> gt_motions;
  std::vector<std::string> gt_texts;
  for (const std::string& id : ids) {
    const auto it = gt_by_id.find(id);
    if (it == gt_by_id.end()) fail(ErrorCode::SchemaViolation, "generated motion " + id + " has no ground truth");
    gt_motions.push_back(select_subset(gt.motion(*it->second), subset));
    const auto texts = gt.texts_of(*it->second);
    if (texts.empty()) fail(ErrorCode::SchemaViolation, "ground-truth motion " + id + " has no text");
    gt_texts.push_back(texts.front());
  }
  std::vector<const FrameMatrix*> gt_ptrs;
  for (const auto& m : gt_motions) gt_ptrs.push_back(&m);
  const Eigen::MatrixXd gt_motion_emb = model.encode_motions(gt_ptrs);
  const Eigen::MatrixXd text_emb = model.encode_texts(gt_texts);
  const Eigen::MatrixXd& gallery = opts.mode == Mode::MotionToMotion ? gt_motion_emb : text_emb;
  const int n = static_cast<int>(ids.size());
  auto correct = [&](int q, int g) {
    return q == g || embed::text_similarity_correct(text_emb.row(q).transpose(), text_emb.row(g).transpose(),
                                                    opts.text_threshold);
  };

  EvalReport report;
  report.options = opts;
  report.num_queries = n;
  std::vector<Eigen::MatrixXd> per_text(n, Eigen::MatrixXd(gen_dirs.size(), gallery.cols()));
  for (std::size_t r = 0; r < gen_dirs.size(); ++r) {
    const Generated gen = read_generation(gen_dirs[r]);
    if (gen.ids != ids) fail(ErrorCode::SchemaViolation, gen_dirs[r].string() + " lists different motions");
    std::vector<FrameMatrix> motions;
    for (const std::string& id : ids) motions.push_back(select_subset(read_motion(gen_dirs[r] / gen.path_of.at(id)), subset));
    std::vector<const FrameMatrix*> ptrs;
    for (const auto& m : motions) ptrs.push_back(&m);
    const Eigen::MatrixXd q = model.encode_motions(ptrs);
    RepeatMetrics metrics;
    metrics.recall = embed::retrieval(q, gallery, correct, opts.ks).recall;
    metrics.fid = embed::fid(q, gt_motion_emb);
    metrics.diversity = embed::diversity(q, std::max(1, std::min(opts.diversity_pairs, n / 2)),
                                         stages::derive_seed(opts.seed, "diversity/" + std::to_string(r)));
    for (int i = 0; i < n; ++i) per_text[i].row(static_cast<Eigen::Index>(r)) = q.row(i);
    report.repeats.push_back(metrics);
    spdlog::info("repeat {}: R@1 {:.2f} FID {:.6g}", r, metrics.recall.begin()->second, metrics.fid);
  }
  if (gen_dirs.size() >= 2) report.multimodality = embed::multimodality(per_text);

  const nn::Checkpoint ck = nn::load_checkpoint(thmr_ckpt);
  report.config_fingerprint =
      io::sha256_hex(json{{"eval", opts.to_json()}, {"thmr", ck.header.value("fingerprint", std::string())}}.dump());
  std::vector<fs::path> inputs{thmr_ckpt, gt_dir};
  inputs.insert(inputs.end(), gen_dirs.begin(), gen_dirs.end());
  report.content_hash = content_hash(inputs);
  return report;
}

void ExperimentConfig::validate() const {
  if (repeats < 1) fail(ErrorCode::ConfigError, "repeats must be positive");
  if (generator != "diffusion" && generator != "identity") {
    fail(ErrorCode::ConfigError, "generator must be diffusion or identity");
  }
  if (out_dir.empty()) fail(ErrorCode::ConfigError, "no output directory");
}

EvalReport evaluate_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (!fs::exists(cfg.thmr_ckpt)) fail(ErrorCode::MissingCheckpoint, cfg.thmr_ckpt.string());
  std::optional<stages::Generator> generator;
  if (cfg.generator == "diffusion") generator = stages::Generator::load(cfg.diffusion_ckpt, cfg.text_encoder);
  const stages::Dataset gt = stages::Dataset::load(cfg.gt_dir);
  const auto test = gt.split(cfg.split);
  if (test.empty()) fail(ErrorCode::EmptyDataset, "no '" + cfg.split + "' motions in " + cfg.gt_dir.string());

  std::vector<fs::path> gen_dirs;
  for (int r = 0; r < cfg.repeats; ++r) {
    const fs::path dir = cfg.out_dir / ("gen_" + std::to_string(r));
    fs::create_directories(dir);
    std::vector<ManifestRecord> records;
    for (const ManifestRecord* rec : test) {
      MotionSequence m;
      if (generator) {
        const int length = std::min(gt.motion(*rec).num_frames(), generator->model->max_length());
        const auto seed = stages::derive_seed(cfg.seed, "generate/" + std::to_string(r) + "/" + rec->id);
        m = generator->generate(gt.texts_of(*rec).front(), length, cfg.guidance, seed, rec->id);
      } else {
        m = gt.motion(*rec);
      }
      write_motion(dir / (rec->id + ".hmf"), m);
      records.push_back({rec->id, rec->id + ".hmf", rec->text_ids, rec->split, json::object()});
    }
    write_manifest(dir / "manifest.jsonl", records);
    gen_dirs.push_back(dir);
  }
  EvalReport report = evaluate(cfg.thmr_ckpt, gen_dirs, cfg.gt_dir, cfg.eval);
  io::write_text(cfg.out_dir / "report.json", report.to_json().dump(2) + "\n");
  return report;
}

}  // namespace hm::eval
