#include "handmotion/stages.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include <spdlog/spdlog.h>

#include "handmotion/binary_io.hpp"
#include "handmotion/error.hpp"
#include "handmotion/parallel.hpp"
#include "handmotion/skeleton.hpp"

namespace hm::stages {
namespace {

using nlohmann::json;

void write_records(const fs::path& out, const std::vector<json>& records) {
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_jsonl(out, records);
}

template <typename T>
T field(const json& j, const char* key, const std::string& what) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaViolation, what + ": " + e.what());
  }
}

Eigen::VectorXd vector_field(const json& j, const std::string& what) {
  const auto v = field<std::vector<double>>(j, "embedding", what);
  if (v.empty()) fail(ErrorCode::SchemaViolation, what + ": empty embedding");
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<std::string> location_anchors(const phon::PhonologyRecord& r) {
  std::vector<std::string> out;
  for (const std::string& token : {r.location_initial, r.location_final}) {
    if (token.empty()) continue;
    for (const std::string& a : hms::anchors_for_location(token)) {
      if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
    }
  }
  return out;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  const auto digest = io::sha256(tag.data(), tag.size());
  std::uint64_t h = 0;
  for (int i = 0; i < 8; ++i) h = (h << 8) | digest[i];
  return seed ^ h;
}

Dataset Dataset::load(const fs::path& dir) {
  Dataset d;
  d.dir = dir;
  d.records = read_manifest(dir / "manifest.jsonl");
  if (fs::exists(dir / "texts.jsonl")) {
    for (const json& j : read_jsonl(dir / "texts.jsonl")) {
      d.texts[field<std::string>(j, "text_id", "texts.jsonl")] = field<std::string>(j, "text", "texts.jsonl");
    }
  }
  return d;
}

MotionSequence Dataset::motion(const ManifestRecord& r) const {
  MotionSequence m = read_motion(dir / r.path);
  m.id = r.id;
  return m;
}

std::vector<std::string> Dataset::texts_of(const ManifestRecord& r) const {
  std::vector<std::string> out;
  for (const std::string& id : r.text_ids) {
    const auto it = texts.find(id);
    if (it == texts.end()) fail(ErrorCode::SchemaViolation, "unknown text id " + id);
    out.push_back(it->second);
  }
  return out;
}

std::vector<const ManifestRecord*> Dataset::split(const std::string& name) const {
  std::vector<const ManifestRecord*> out;
  for (const auto& r : records) {
    if (r.split == name) out.push_back(&r);
  }
  return out;
}

std::vector<json> stitch_dataset(const fs::path& body_dir, const fs::path& hands_dir, const fs::path& out_dir,
                                 const StitchConfig& cfg, int workers) {
  cfg.validate();
  const std::vector<ManifestRecord> records = read_manifest(body_dir / "manifest.jsonl");
  const Skeleton skel = Skeleton::bundled();
  fs::create_directories(out_dir);
  std::vector<json> reports(records.size());
  std::vector<ManifestRecord> out_records(records.size());
  parallel_for(static_cast<int>(records.size()), workers, [&](int i) {
    const ManifestRecord& r = records[i];
    MotionSequence body = read_motion(body_dir / r.path);
    body.id = r.id;
    const HandEstimate hands = read_hand_estimate(hands_dir / (r.id + ".hhe"));
    const MotionSequence merged = merge_hands(body, hands, skel);
    StitchResult res = optimize_arms(build_targets(merged, skel), merged, cfg, skel);
    res.motion.id = r.id;
    write_motion(out_dir / (r.id + ".hmf"), res.motion);
    double mean_residual = 0.0;
    for (double v : res.report.frame_residual) mean_residual += v;
    if (!res.report.frame_residual.empty()) mean_residual /= static_cast<double>(res.report.frame_residual.size());
    reports[i] = {{"motion_id", r.id},
                  {"iterations", res.report.iterations},
                  {"converged", res.report.converged},
                  {"objective_start", res.report.objective.front()},
                  {"objective_end", res.report.objective.back()},
                  {"mean_residual", mean_residual}};
    out_records[i] = r;
    out_records[i].path = r.id + ".hmf";
    spdlog::debug("stitched {} in {} iterations", r.id, res.report.iterations);
  });
  write_manifest(out_dir / "manifest.jsonl", out_records);
  write_jsonl(out_dir / "report.jsonl", reports);
  return reports;
}

std::vector<json> hms_dataset(const fs::path& motions_dir, const fs::path& phonology, const fs::path& out_jsonl,
                              const HmsStageOptions& opts, int workers) {
  std::map<std::string, phon::PhonologyRecord> by_gloss;
  for (auto& r : phon::read_records(phonology)) by_gloss.emplace(r.gloss_id, std::move(r));
  std::vector<ManifestRecord> records = read_manifest(motions_dir / "manifest.jsonl");
  std::erase_if(records, [&](const ManifestRecord& r) {
    return !by_gloss.contains(r.extra.value("gloss_id", std::string()));
  });
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  const Skeleton skel = Skeleton::bundled();
  std::vector<json> out(records.size());
  parallel_for(static_cast<int>(records.size()), workers, [&](int i) {
    const ManifestRecord& r = records[i];
    const phon::PhonologyRecord& p = by_gloss.at(r.extra.at("gloss_id").get<std::string>());
    MotionSequence m = read_motion(motions_dir / r.path);
    const hms::UsedHands used = p.one_handed() ? hms::UsedHands::Dominant : hms::UsedHands::Both;
    const hms::PosecodeTable table =
        hms::postprocess(hms::extract_framecodes(m, skel, location_anchors(p), used, opts.extract), opts.min_run);
    out[i] = {{"motion_id", r.id},
              {"gloss_id", p.gloss_id},
              {"channels", table.processed_json()},
              {"block", hms::render_block(table, m.handedness)}};
  });
  write_records(out_jsonl, out);
  return out;
}

std::string base_gloss(const std::string& variant) {
  std::string s = variant;
  if (s.size() > 1 && std::islower(static_cast<unsigned char>(s.back())) &&
      !std::islower(static_cast<unsigned char>(s[s.size() - 2]))) {
    s.pop_back();
  }
  return s;
}

std::vector<DescribeJob> describe_jobs(const std::vector<phon::PhonologyRecord>& records,
                                       const std::vector<json>& hms_records, const DescribeOptions& opts) {
  const phon::AttributeLexicon lex =
      opts.lexicon.empty() ? phon::AttributeLexicon::bundled() : phon::AttributeLexicon::load(opts.lexicon);
  auto load_template = [&](bool with_hms) {
    return opts.prompt_dir.empty() ? phon::PromptTemplate::bundled(with_hms)
                                   : phon::PromptTemplate::load(opts.prompt_dir, with_hms);
  };
  const phon::PromptTemplate with_tpl = load_template(true), without_tpl = load_template(false);

  std::map<std::string, std::pair<std::string, std::string>> block_of;  // gloss -> (motion id, block)
  for (const json& h : hms_records) {
    const auto gloss = field<std::string>(h, "gloss_id", "hms record");
    const auto motion = field<std::string>(h, "motion_id", "hms record");
    auto it = block_of.find(gloss);
    if (it == block_of.end() || motion < it->second.first) {
      block_of[gloss] = {motion, field<std::string>(h, "block", "hms record")};
    }
  }
  std::vector<DescribeJob> jobs;
  for (const auto& r : records) {
    DescribeJob job;
    job.record = r;
    if (auto it = block_of.find(r.gloss_id); it != block_of.end()) job.hms_block = it->second.second;
    const std::uint64_t seed = derive_seed(opts.seed, "describe/" + r.gloss_id);
    const auto lines = phon::attributes_to_lines(r, lex, seed);
    job.request.prompt = phon::assemble_prompt(lines, job.hms_block, job.hms_block ? with_tpl : without_tpl);
    job.request.model = opts.model;
    job.request.temperature = opts.temperature;
    job.request.seed = seed;
    jobs.push_back(std::move(job));
  }
  return jobs;
}

std::vector<json> describe(const fs::path& phonology, const std::optional<fs::path>& hms_jsonl,
                           const std::string& llm_spec, const fs::path& out_jsonl, const DescribeOptions& opts) {
  const auto records = phon::read_records(phonology);
  const std::vector<json> hms_records = hms_jsonl ? read_jsonl(*hms_jsonl) : std::vector<json>{};
  const auto jobs = describe_jobs(records, hms_records, opts);
  std::vector<llm::Request> requests;
  for (const auto& j : jobs) requests.push_back(j.request);
  const auto responses =
      llm::generate_batch(requests, [&] { return llm::make_client(llm_spec); }, std::max(1, opts.max_in_flight));
  std::vector<json> out;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto texts = phon::postprocess_descriptions(responses[i].descriptions, jobs[i].record);
    out.push_back({{"gloss_id", base_gloss(jobs[i].record.gloss_id)},
                   {"variant", jobs[i].record.gloss_id},
                   {"with_hms", jobs[i].hms_block.has_value()},
                   {"descriptions", json(std::vector<std::string>(texts.begin(), texts.end()))}});
  }
  write_records(out_jsonl, out);
  return out;
}

std::vector<json> segments(const fs::path& labels_jsonl, const assign::SegmentConfig& cfg, const fs::path& out_jsonl) {
  std::vector<json> out;
  for (const json& line : read_jsonl(labels_jsonl)) {
    const auto stream = assign::LabelStream::from_json(line);
    for (const auto& s : assign::extract_segments(stream, cfg)) {
      out.push_back({{"episode_id", stream.episode_id}, {"label", s.label}, {"start", s.start}, {"end", s.end}});
    }
  }
  write_records(out_jsonl, out);
  return out;
}

std::vector<json> assign_dataset(const fs::path& embeddings_dir, const fs::path& dictionary, const fs::path& out_jsonl,
                                 int workers) {
  const auto index = assign::DictionaryIndex::load(dictionary);
  std::map<std::string, Eigen::VectorXd> variants;
  for (const json& j : read_jsonl(embeddings_dir / "variants.jsonl")) {
    variants[field<std::string>(j, "variant_id", "variants.jsonl")] = vector_field(j, "variants.jsonl");
  }
  std::map<std::string, std::vector<std::pair<std::string, Eigen::VectorXd>>> by_word;
  for (const json& j : read_jsonl(embeddings_dir / "samples.jsonl")) {
    by_word[field<std::string>(j, "word", "samples.jsonl")].emplace_back(
        field<std::string>(j, "motion_id", "samples.jsonl"), vector_field(j, "samples.jsonl"));
  }
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, Eigen::VectorXd>>>> words(by_word.begin(),
                                                                                                  by_word.end());
  std::vector<assign::VariantAssignment> results(words.size());
  parallel_for(static_cast<int>(words.size()), workers, [&](int i) {
    const auto& [word, samples] = words[i];
    std::vector<std::pair<std::string, Eigen::VectorXd>> candidates;
    try {
      for (const std::string& v : assign::build_candidate_variants(word, index)) {
        if (auto it = variants.find(v); it != variants.end()) candidates.emplace_back(v, it->second);
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::UnknownWord) throw;
      spdlog::warn("word '{}' is not in the dictionary; its samples are filtered", word);
    }
    if (candidates.empty()) {
      for (const auto& s : samples) results[i][s.first] = assign::kFiltered;
    } else {
      results[i] = assign::assign_variants(samples, candidates);
    }
  });
  std::vector<json> out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    for (const auto& [motion, variant] : results[i]) {
      out.push_back({{"motion_id", motion}, {"word", words[i].first}, {"variant_id", variant}});
    }
  }
  std::sort(out.begin(), out.end(), [](const json& a, const json& b) { return a["motion_id"] < b["motion_id"]; });
  write_records(out_jsonl, out);
  return out;
}

std::vector<ManifestRecord> build_dataset(const fs::path& stitched_dir, const fs::path& segments_jsonl,
                                          const fs::path& assignments_jsonl, const fs::path& descriptions_jsonl,
                                          const fs::path& out_dir) {
  std::map<std::string, std::vector<std::string>> descriptions;  // variant -> texts, HMS prompts preferred
  std::map<std::string, bool> with_hms;
  for (const json& d : read_jsonl(descriptions_jsonl)) {
    const auto variant = field<std::string>(d, "variant", "descriptions");
    const bool hms = d.value("with_hms", false);
    if (descriptions.contains(variant) && with_hms[variant] && !hms) continue;
    descriptions[variant] = field<std::vector<std::string>>(d, "descriptions", "descriptions");
    with_hms[variant] = hms;
  }
  std::map<std::string, std::string> assigned;
  for (const json& a : read_jsonl(assignments_jsonl)) {
    assigned[field<std::string>(a, "motion_id", "assignments")] = field<std::string>(a, "variant_id", "assignments");
  }
  const std::vector<json> kept_segments = read_jsonl(segments_jsonl);
  auto segment_kept = [&](const json& s) {
    const auto episode = field<std::string>(s, "episode_id", "segment");
    const auto label = field<std::string>(s, "label", "segment");
    const int start = field<int>(s, "start", "segment"), end = field<int>(s, "end", "segment");
    for (const json& k : kept_segments) {
      if (k.at("episode_id") != episode || k.at("label") != label) continue;
      const int ks = k.at("start"), ke = k.at("end");
      const int inter = std::min(end, ke) - std::max(start, ks) + 1;
      const int uni = std::max(end, ke) - std::min(start, ks) + 1;
      if (inter > 0 && 2 * inter >= uni) return true;
    }
    return false;
  };

  fs::create_directories(out_dir / "motions");
  std::vector<ManifestRecord> out;
  std::vector<json> texts;
  for (const ManifestRecord& r : read_manifest(stitched_dir / "manifest.jsonl")) {
    std::string variant;
    if (r.extra.value("source", std::string()) == "dictionary") {
      variant = r.extra.value("gloss_id", std::string());
    } else if (r.extra.contains("segment")) {
      if (!segment_kept(r.extra["segment"])) {
        spdlog::info("{}: segment rejected", r.id);
        continue;
      }
      const auto it = assigned.find(r.id);
      if (it == assigned.end() || it->second == assign::kFiltered) {
        spdlog::info("{}: no variant assigned", r.id);
        continue;
      }
      variant = it->second;
    }
    const auto d = descriptions.find(variant);
    if (d == descriptions.end()) {
      spdlog::info("{}: no descriptions for variant '{}'", r.id, variant);
      continue;
    }
    MotionSequence m = read_motion(stitched_dir / r.path);
    m.id = r.id;
    write_motion(out_dir / "motions" / (r.id + ".hmf"), m);
    ManifestRecord rec;
    rec.id = r.id;
    rec.path = "motions/" + r.id + ".hmf";
    rec.split = r.split;
    rec.extra = r.extra;
    rec.extra["variant_id"] = variant;
    for (std::size_t k = 0; k < d->second.size(); ++k) {
      const std::string text_id = r.id + ":" + std::to_string(k);
      rec.text_ids.push_back(text_id);
      texts.push_back({{"text_id", text_id}, {"text", phon::localize_handedness(d->second[k], m.handedness)}});
    }
    out.push_back(std::move(rec));
  }
  if (out.empty()) fail(ErrorCode::EmptyDataset, "no motion has both a variant and descriptions");
  write_manifest(out_dir / "manifest.jsonl", out);
  write_jsonl(out_dir / "texts.jsonl", texts);
  return out;
}

embed::ThmrTrainResult train_thmr(const fs::path& data_dir, const embed::ThmrConfig& cfg, std::uint64_t seed,
                                  const fs::path& out_ckpt, const std::optional<fs::path>& precomputed) {
  cfg.validate();
  const Dataset data = Dataset::load(data_dir);
  std::vector<embed::ThmrPair> pairs;
  for (const ManifestRecord* r : data.split("train")) {
    pairs.push_back({select_subset(data.motion(*r), cfg.subset), data.texts_of(*r)});
  }
  std::shared_ptr<const embed::PrecomputedTexts> table;
  if (cfg.text_input == embed::TextInput::Precomputed) {
    if (!precomputed) fail(ErrorCode::ConfigError, "precomputed text input needs an embedding table");
    table = std::make_shared<embed::PrecomputedTexts>(embed::PrecomputedTexts::load(*precomputed));
  }
  spdlog::info("training THMR on {} pairs for {} epochs", pairs.size(), cfg.epochs);
  auto res = embed::train_thmr(
      pairs, cfg, seed, [](int epoch, double loss) { spdlog::debug("thmr epoch {} loss {:.6f}", epoch, loss); },
      table);
  if (out_ckpt.has_parent_path()) fs::create_directories(out_ckpt.parent_path());
  res.model->save(out_ckpt);
  return res;
}

diffusion::DiffusionTrainResult train_diffusion(const fs::path& data_dir, const fs::path& text_encoder,
                                                diffusion::DiffuserConfig cfg, std::uint64_t seed,
                                                const fs::path& out_ckpt) {
  const auto embedder = embed::load_text_embedder(text_encoder);
  if (cfg.text_dim != embedder->dim()) {
    spdlog::info("text_dim set to the encoder width {}", embedder->dim());
    cfg.text_dim = embedder->dim();
  }
  cfg.validate();
  const Dataset data = Dataset::load(data_dir);
  std::vector<diffusion::TrainItem> items;
  for (const ManifestRecord* r : data.split("train")) {
    diffusion::TrainItem item{data.motion(*r).frames, {}};
    for (const std::string& t : data.texts_of(*r)) item.texts.push_back(embedder->embed(t));
    items.push_back(std::move(item));
  }
  spdlog::info("training the diffuser on {} motions for {} epochs", items.size(), cfg.epochs);
  auto res = diffusion::train_diffusion(
      items, cfg, seed, [](int epoch, double loss) { spdlog::debug("diffusion epoch {} loss {:.6f}", epoch, loss); });
  const auto bytes = io::read_file(text_encoder);
  const json extra = {{"text_encoder",
                       {{"path", fs::absolute(text_encoder).lexically_normal().string()},
                        {"sha256", io::sha256_hex(bytes.data(), bytes.size())}}}};
  if (out_ckpt.has_parent_path()) fs::create_directories(out_ckpt.parent_path());
  nn::save_checkpoint(out_ckpt, res.model->to_checkpoint(extra));
  return res;
}

Generator Generator::load(const fs::path& ckpt, const std::optional<fs::path>& text_encoder) {
  const nn::Checkpoint ck = nn::load_checkpoint(ckpt);
  Generator g;
  g.model = std::make_unique<diffusion::DiffusionModel>(diffusion::DiffusionModel::from_checkpoint(ck));
  fs::path encoder_path;
  if (text_encoder) {
    encoder_path = *text_encoder;
  } else {
    const json rec = ck.header.value("text_encoder", json::object());
    if (!rec.contains("path")) fail(ErrorCode::ConfigError, "checkpoint names no text encoder; pass one explicitly");
    encoder_path = rec.at("path").get<std::string>();
    const auto bytes = io::read_file(encoder_path);
    if (io::sha256_hex(bytes.data(), bytes.size()) != rec.value("sha256", std::string())) {
      fail(ErrorCode::ChecksumMismatch, "text encoder " + encoder_path.string() + " changed since training");
    }
  }
  g.text_encoder = embed::load_text_embedder(encoder_path);
  if (g.text_encoder->dim() != g.model->config().text_dim) {
    fail(ErrorCode::FeatureWidthMismatch, "text encoder width differs from the diffuser's text_dim");
  }
  return g;
}

MotionSequence Generator::generate(const std::string& text, int length, double guidance, std::uint64_t seed,
                                   const std::string& id) const {
  const embed::Embedding e = text_encoder->embed(text);
  const auto schedule = diffusion::NoiseSchedule::build(model->config().steps, model->config().schedule);
  return diffusion::to_motion(diffusion::sample(*model, &e, length, guidance, schedule, seed), id);
}

}  // namespace hm::stages
