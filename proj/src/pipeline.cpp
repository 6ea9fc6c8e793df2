#include "handmotion/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>

#include <spdlog/spdlog.h>

#include "handmotion/binary_io.hpp"
#include "handmotion/diffusion.hpp"
#include "handmotion/embed.hpp"
#include "handmotion/evaluation.hpp"
#include "handmotion/stages.hpp"

namespace hm::pipeline {
namespace {

using nlohmann::json;

constexpr int kManifestVersion = 1;

std::map<std::string, std::string> file_digests(const fs::path& root) {
  std::map<std::string, std::string> out;
  auto add = [&](const fs::path& file, const std::string& rel) {
    const auto bytes = io::read_file(file);
    out[rel] = io::sha256_hex(bytes.data(), bytes.size());
  };
  if (fs::is_directory(root)) {
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      if (e.is_regular_file() && e.path().filename() != "stage.json") {
        add(e.path(), fs::relative(e.path(), root).generic_string());
      }
    }
  } else {
    add(root, root.filename().generic_string());
  }
  return out;
}

fs::path resolve(const fs::path& base, const fs::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return (base / p).lexically_normal();
}

struct StagePlan {
  std::vector<fs::path> inputs;
  json settings;
  std::function<void(const fs::path& out)> run;
};

fs::path llm_fixture_dir(const std::string& spec) {
  constexpr std::string_view prefix = "fixtures:";
  return spec.rfind(prefix, 0) == 0 ? fs::path(spec.substr(prefix.size())) : fs::path();
}

StagePlan plan_stage(const PipelineConfig& cfg, const std::string& name) {
  const fs::path out = cfg.out_dir;
  const json s = cfg.section(name);
  const std::uint64_t seed = stage_seed(cfg, name);
  const int workers = cfg.workers;
  StagePlan p;
  p.settings = s;
  if (name == "stitch") {
    const StitchConfig sc = StitchConfig::from_json(s);
    p.inputs = {cfg.inputs.body, cfg.inputs.hands};
    p.run = [=, &cfg](const fs::path& dir) { stages::stitch_dataset(cfg.inputs.body, cfg.inputs.hands, dir, sc, workers); };
  } else if (name == "hms") {
    stages::HmsStageOptions opts;
    opts.min_run = s.value("min_run", opts.min_run);
    p.inputs = {out / "stitch", cfg.inputs.phonology};
    p.run = [=, &cfg](const fs::path& dir) {
      stages::hms_dataset(out / "stitch", cfg.inputs.phonology, dir / "hms.jsonl", opts, workers);
    };
  } else if (name == "describe") {
    const stages::DescribeOptions opts = describe_options(cfg);
    const bool with_hms = s.value("with_hms", true);
    p.inputs = {cfg.inputs.phonology};
    if (with_hms) p.inputs.push_back(out / "hms");
    // Recorded replies are hashed as content, so their location does not matter.
    const fs::path fixtures = llm_fixture_dir(cfg.inputs.llm);
    if (!fixtures.empty()) p.inputs.push_back(fixtures);
    p.settings["llm"] = fixtures.empty() ? cfg.inputs.llm : std::string("fixtures");
    p.run = [=, &cfg](const fs::path& dir) {
      const std::optional<fs::path> hms = with_hms ? std::optional<fs::path>(out / "hms" / "hms.jsonl") : std::nullopt;
      stages::describe(cfg.inputs.phonology, hms, cfg.inputs.llm, dir / "descriptions.jsonl", opts);
    };
  } else if (name == "segments") {
    assign::SegmentConfig sc;
    sc.min_length = s.value("m", sc.min_length);
    sc.conf_threshold = s.value("conf", sc.conf_threshold);
    sc.merge_gap = s.value("merge_gap", sc.min_length);
    p.inputs = {cfg.inputs.labels};
    p.run = [=, &cfg](const fs::path& dir) { stages::segments(cfg.inputs.labels, sc, dir / "segments.jsonl"); };
  } else if (name == "assign") {
    p.inputs = {cfg.inputs.embeddings, cfg.inputs.dictionary};
    p.run = [=, &cfg](const fs::path& dir) {
      stages::assign_dataset(cfg.inputs.embeddings, cfg.inputs.dictionary, dir / "assignments.jsonl", workers);
    };
  } else if (name == "dataset") {
    p.inputs = {out / "stitch", out / "segments", out / "assign", out / "describe"};
    p.run = [=](const fs::path& dir) {
      stages::build_dataset(out / "stitch", out / "segments" / "segments.jsonl", out / "assign" / "assignments.jsonl",
                            out / "describe" / "descriptions.jsonl", dir);
    };
  } else if (name == "train-thmr") {
    const embed::ThmrConfig tc = embed::ThmrConfig::from_json(s);
    p.inputs = {out / "dataset"};
    p.run = [=](const fs::path& dir) { stages::train_thmr(out / "dataset", tc, seed, dir / "thmr.ckpt"); };
  } else if (name == "train-diffusion") {
    const diffusion::DiffuserConfig dc = diffusion::DiffuserConfig::from_json(s);
    const fs::path encoder = cfg.inputs.text_encoder.empty() ? out / "train-thmr" / "thmr.ckpt" : cfg.inputs.text_encoder;
    p.inputs = {out / "dataset", encoder};
    p.run = [=](const fs::path& dir) { stages::train_diffusion(out / "dataset", encoder, dc, seed, dir / "diffusion.ckpt"); };
  } else if (name == "eval") {
    eval::ExperimentConfig ec;
    ec.gt_dir = out / "dataset";
    ec.split = s.value("split", ec.split);
    ec.thmr_ckpt = out / "train-thmr" / "thmr.ckpt";
    ec.generator = s.value("generator", ec.generator);
    ec.diffusion_ckpt = out / "train-diffusion" / "diffusion.ckpt";
    ec.repeats = s.value("repeats", ec.repeats);
    ec.guidance = s.value("guidance", ec.guidance);
    ec.seed = seed;
    ec.eval = eval::EvalOptions::from_json(s);
    ec.eval.seed = seed;
    ec.out_dir = out / "eval";
    ec.validate();
    p.inputs = {out / "dataset", ec.thmr_ckpt};
    if (ec.generator == "diffusion") p.inputs.push_back(ec.diffusion_ckpt);
    p.run = [=](const fs::path& dir) {
      eval::ExperimentConfig run_cfg = ec;
      run_cfg.out_dir = dir;
      eval::evaluate_experiment(run_cfg);
    };
  }
  return p;
}

}  // namespace

std::uint64_t stage_seed(const PipelineConfig& cfg, const std::string& stage) {
  return stages::derive_seed(cfg.seed, "pipeline/" + stage);
}

stages::DescribeOptions describe_options(const PipelineConfig& cfg) {
  const json s = cfg.section("describe");
  stages::DescribeOptions opts;
  try {
    opts.model = s.value("model", opts.model);
    opts.temperature = s.value("temperature", opts.temperature);
    opts.max_in_flight = s.value("max_in_flight", opts.max_in_flight);
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("describe settings: ") + e.what());
  }
  opts.seed = stage_seed(cfg, "describe");
  return opts;
}

const std::vector<std::string>& stage_order() {
  static const std::vector<std::string> order = {"stitch",  "hms",        "describe",        "segments", "assign",
                                                 "dataset", "train-thmr", "train-diffusion", "eval"};
  return order;
}

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  try {
    c.out_dir = resolve(base_dir, j.at("out").get<std::string>());
    c.stages = j.value("stages", std::vector<std::string>{});
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    const json in = j.value("inputs", json::object());
    auto path = [&](const char* key) { return resolve(base_dir, in.value(key, std::string())); };
    c.inputs.body = path("body");
    c.inputs.hands = path("hands");
    c.inputs.phonology = path("phonology");
    c.inputs.labels = path("labels");
    c.inputs.embeddings = path("embeddings");
    c.inputs.dictionary = path("dictionary");
    c.inputs.text_encoder = path("text_encoder");
    c.inputs.llm = in.value("llm", std::string());
    if (const fs::path fixtures = llm_fixture_dir(c.inputs.llm); !fixtures.empty()) {
      c.inputs.llm = "fixtures:" + resolve(base_dir, fixtures).string();
    }
    for (const std::string& s : stage_order()) {
      const std::string key = s == "train-thmr" ? "thmr" : s == "train-diffusion" ? "diffusion" : s;
      if (j.contains(key)) c.sections[s] = j[key];
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("pipeline config: ") + e.what());
  }
  if (c.workers < 1) fail(ErrorCode::ConfigError, "workers must be positive");
  for (const std::string& s : c.stages) {
    if (std::find(stage_order().begin(), stage_order().end(), s) == stage_order().end()) {
      fail(ErrorCode::ConfigError, "unknown stage '" + s + "'");
    }
  }
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
  return from_json(j, fs::absolute(path).parent_path());
}

json PipelineConfig::section(const std::string& name) const {
  return sections.contains(name) ? sections.at(name) : json::object();
}

std::string tree_hash(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::IoError, "missing input " + path.string());
  std::string listing;
  for (const auto& [rel, digest] : file_digests(path)) listing += rel + '\0' + digest + "\n";
  return io::sha256_hex(listing);
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  PipelineResult result;
  for (const std::string& name : stage_order()) {
    if (std::find(cfg.stages.begin(), cfg.stages.end(), name) == cfg.stages.end()) continue;
    const fs::path dir = cfg.out_dir / name;
    const fs::path manifest_path = dir / "stage.json";
    std::string input_hash;
    StagePlan plan;
    try {
      plan = plan_stage(cfg, name);
      json inputs = json::array();
      for (const fs::path& in : plan.inputs) inputs.push_back(tree_hash(in));
      input_hash = io::sha256_hex(json{{"stage", name},
                                       {"version", kManifestVersion},
                                       {"seed", stage_seed(cfg, name)},
                                       {"settings", plan.settings},
                                       {"inputs", inputs}}
                                      .dump());
    } catch (const Error& e) {
      throw StageFailure(name, e.code(), e.what());
    } catch (const json::exception& e) {
      throw StageFailure(name, ErrorCode::ConfigError, e.what());
    }

    if (fs::exists(manifest_path)) {
      try {
        const json m = json::parse(io::read_text(manifest_path));
        const auto recorded = m.at("outputs").get<std::map<std::string, std::string>>();
        if (m.at("input_hash") == input_hash && recorded == file_digests(dir)) {
          spdlog::info("stage {}: up to date", name);
          result.skipped.push_back(name);
          continue;
        }
      } catch (const std::exception&) {
        // An unreadable manifest means the stage reruns.
      }
    }

    spdlog::info("stage {}: running", name);
    fs::create_directories(dir);
    fs::remove(manifest_path);
    const auto start = std::chrono::steady_clock::now();
    try {
      plan.run(dir);
    } catch (const Error& e) {
      throw StageFailure(name, e.code(), e.what());
    } catch (const std::exception& e) {
      throw StageFailure(name, ErrorCode::IoError, e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const json manifest = {{"stage", name},         {"version", kManifestVersion}, {"input_hash", input_hash},
                           {"settings", plan.settings}, {"seed", stage_seed(cfg, name)}, {"outputs", file_digests(dir)},
                           {"seconds", seconds}};
    io::write_text(manifest_path, manifest.dump(2) + "\n");
    result.executed.push_back(name);
  }
  return result;
}

}  // namespace hm::pipeline
