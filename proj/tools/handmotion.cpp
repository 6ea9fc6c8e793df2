#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "handmotion/binary_io.hpp"
#include "handmotion/error.hpp"
#include "handmotion/evaluation.hpp"
#include "handmotion/pipeline.hpp"
#include "handmotion/render.hpp"
#include "handmotion/stages.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string log_level = "info";
};

int exit_code(hm::ErrorCode code) {
  switch (code) {
    case hm::ErrorCode::ConfigError:
    case hm::ErrorCode::BadScheduleParams:
      return 2;
    case hm::ErrorCode::IoError:
    case hm::ErrorCode::MissingCheckpoint:
      return 4;
    default:
      return 3;
  }
}

void report_error(const json& j) { std::cerr << j.dump() << std::endl; }

json load_config(const Globals& g) {
  if (g.config.empty()) return json::object();
  try {
    return json::parse(hm::io::read_text(g.config));
  } catch (const json::exception& e) {
    hm::fail(hm::ErrorCode::ConfigError, g.config + ": " + e.what());
  }
}

/// The named section of a pipeline-style config, or the whole document.
json section(const json& cfg, const std::string& name) { return cfg.contains(name) ? cfg.at(name) : cfg; }

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hand-motion dataset, retrieval and generation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON configuration file");
  app.add_option("--seed", g.seed, "Global random seed");
  app.add_option("--workers", g.workers, "Worker threads for per-motion work")->check(CLI::PositiveNumber);
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off");

  std::function<json()> action;

  auto* stitch = app.add_subcommand("stitch", "Merge hand estimates into body motions and refine the arms");
  std::string body, hands, out;
  stitch->add_option("--body", body)->required();
  stitch->add_option("--hands", hands)->required();
  stitch->add_option("--out", out)->required();
  stitch->callback([&] {
    action = [&] {
      const auto cfg = hm::StitchConfig::from_json(section(load_config(g), "stitch"));
      const auto reports = hm::stages::stitch_dataset(body, hands, out, cfg, g.workers);
      return json{{"motions", reports.size()}, {"out", out}};
    };
  });

  auto* hms_cmd = app.add_subcommand("hms", "Extract hand-motion codes and prompt blocks");
  std::string motions, phonology;
  int min_run = 4;
  hms_cmd->add_option("--motions", motions)->required();
  hms_cmd->add_option("--phonology", phonology)->required();
  hms_cmd->add_option("--out", out)->required();
  hms_cmd->add_option("--min-run", min_run)->check(CLI::PositiveNumber);
  hms_cmd->callback([&] {
    action = [&] {
      hm::stages::HmsStageOptions opts;
      opts.min_run = min_run;
      const auto records = hm::stages::hms_dataset(motions, phonology, out, opts, g.workers);
      return json{{"records", records.size()}, {"out", out}};
    };
  });

  auto* describe = app.add_subcommand("describe", "Generate descriptions from phonology (and HMS) prompts");
  std::string hms_path, llm_spec, model = "default";
  double temperature = 1.0;
  int in_flight = 4;
  describe->add_option("--phonology", phonology)->required();
  describe->add_option("--hms", hms_path, "HMS JSONL or 'none'")->required();
  describe->add_option("--llm", llm_spec, "Endpoint URL or fixtures:DIR")->required();
  describe->add_option("--out", out)->required();
  describe->add_option("--model", model);
  describe->add_option("--temperature", temperature);
  describe->add_option("--max-in-flight", in_flight)->check(CLI::PositiveNumber);
  describe->callback([&] {
    action = [&] {
      hm::stages::DescribeOptions opts;
      opts.model = model;
      opts.temperature = temperature;
      opts.max_in_flight = in_flight;
      opts.seed = g.seed;
      const std::optional<fs::path> hms = hms_path == "none" ? std::nullopt : std::optional<fs::path>(hms_path);
      const auto records = hm::stages::describe(phonology, hms, llm_spec, out, opts);
      return json{{"records", records.size()}, {"out", out}};
    };
  });

  auto* seg = app.add_subcommand("segments", "Extract sign segments from frame-level labels");
  std::string labels;
  int m = 6;
  double conf = 0.5;
  std::optional<int> merge_gap;
  seg->add_option("--labels", labels)->required();
  seg->add_option("--m", m, "Minimum segment length")->check(CLI::PositiveNumber);
  seg->add_option("--conf", conf, "Confidence threshold");
  seg->add_option("--merge-gap", merge_gap, "Merge same-label runs closer than this (default m)");
  seg->add_option("--out", out)->required();
  seg->callback([&] {
    action = [&] {
      hm::assign::SegmentConfig sc;
      sc.min_length = m;
      sc.conf_threshold = conf;
      sc.merge_gap = merge_gap.value_or(m);
      const auto records = hm::stages::segments(labels, sc, out);
      return json{{"segments", records.size()}, {"out", out}};
    };
  });

  auto* assign = app.add_subcommand("assign", "Assign sign variants to segments by clustering embeddings");
  std::string embeddings, dictionary;
  assign->add_option("--embeddings", embeddings)->required();
  assign->add_option("--dictionary", dictionary)->required();
  assign->add_option("--out", out)->required();
  assign->callback([&] {
    action = [&] {
      const auto records = hm::stages::assign_dataset(embeddings, dictionary, out, g.workers);
      int filtered = 0;
      for (const auto& r : records) filtered += r["variant_id"] == hm::assign::kFiltered;
      return json{{"samples", records.size()}, {"filtered", filtered}, {"out", out}};
    };
  });

  auto* train_thmr = app.add_subcommand("train-thmr", "Train the text-motion retrieval model");
  std::string data, subset, precomputed;
  train_thmr->add_option("--data", data)->required();
  train_thmr->add_option("--subset", subset, "full_274, arms_hands_216 or hands_180");
  train_thmr->add_option("--precomputed", precomputed, "Text embedding table for precomputed text input");
  train_thmr->add_option("--out", out)->required();
  train_thmr->callback([&] {
    action = [&] {
      json c = section(load_config(g), "thmr");
      if (!subset.empty()) c["subset"] = subset;
      const auto cfg = hm::embed::ThmrConfig::from_json(c);
      const auto res = hm::stages::train_thmr(
          data, cfg, g.seed, out, precomputed.empty() ? std::nullopt : std::optional<fs::path>(precomputed));
      return json{{"epochs", res.epoch_losses.size()},
                  {"final_loss", res.epoch_losses.empty() ? json(nullptr) : json(res.epoch_losses.back())},
                  {"out", out}};
    };
  });

  auto* train_diff = app.add_subcommand("train-diffusion", "Train the text-conditioned motion diffuser");
  std::string text_encoder;
  train_diff->add_option("--data", data)->required();
  train_diff->add_option("--text-encoder", text_encoder, "THMR checkpoint or text embedding table")->required();
  train_diff->add_option("--out", out)->required();
  train_diff->callback([&] {
    action = [&] {
      const auto cfg = hm::diffusion::DiffuserConfig::from_json(section(load_config(g), "diffusion"));
      const auto res = hm::stages::train_diffusion(data, text_encoder, cfg, g.seed, out);
      return json{{"epochs", res.epoch_losses.size()},
                  {"final_loss", res.epoch_losses.empty() ? json(nullptr) : json(res.epoch_losses.back())},
                  {"out", out}};
    };
  });

  auto* generate = app.add_subcommand("generate", "Sample a motion for a text");
  std::string ckpt, text;
  int length = 32;
  double guidance = 15.0;
  generate->add_option("--ckpt", ckpt)->required();
  generate->add_option("--text", text)->required();
  generate->add_option("--length", length)->check(CLI::PositiveNumber);
  generate->add_option("--guidance", guidance);
  generate->add_option("--text-encoder", text_encoder, "Override the encoder recorded in the checkpoint");
  generate->add_option("--out", out)->required();
  generate->callback([&] {
    action = [&] {
      const auto gen = hm::stages::Generator::load(
          ckpt, text_encoder.empty() ? std::nullopt : std::optional<fs::path>(text_encoder));
      const auto motion = gen.generate(text, length, guidance, g.seed, fs::path(out).stem().string());
      hm::write_motion(out, motion);
      return json{{"frames", motion.num_frames()}, {"out", out}};
    };
  });

  auto* eval_cmd = app.add_subcommand("eval", "Score generated motions against the ground truth");
  std::string mode = "m2m", gt, report;
  std::vector<std::string> gen_dirs;
  eval_cmd->add_option("--mode", mode)->check(CLI::IsMember({"m2m", "m2t"}));
  eval_cmd->add_option("--ckpt", ckpt, "THMR checkpoint")->required();
  eval_cmd->add_option("--gen", gen_dirs, "Generation directories, one per repeat")->required();
  eval_cmd->add_option("--gt", gt)->required();
  eval_cmd->add_option("--report", report)->required();
  eval_cmd->callback([&] {
    action = [&] {
      auto opts = hm::eval::EvalOptions::from_json(section(load_config(g), "eval"));
      opts.mode = hm::eval::parse_mode(mode);
      opts.seed = g.seed;
      const auto r = hm::eval::evaluate(ckpt, std::vector<fs::path>(gen_dirs.begin(), gen_dirs.end()), gt, opts);
      const json j = r.to_json();
      hm::io::write_text(report, j.dump(2) + "\n");
      return j;
    };
  });

  auto* render = app.add_subcommand("render", "Plot the skeleton at selected frames (PPM)");
  std::string motion_path;
  std::vector<int> frames;
  bool mono = false;
  hm::RenderOptions ropts;
  render->add_option("--motion", motion_path)->required();
  render->add_option("--frames", frames, "Frame indices")->required()->delimiter(',');
  render->add_option("--width", ropts.width);
  render->add_option("--height", ropts.height);
  render->add_flag("--mono", mono, "Black lines instead of temporal colors");
  render->add_option("--out", out)->required();
  render->callback([&] {
    action = [&] {
      ropts.temporal_color = !mono;
      hm::render_skeleton(hm::read_motion(motion_path), frames, out, hm::Skeleton::bundled(), ropts);
      return json{{"frames", frames}, {"out", out}};
    };
  });

  auto* pipeline = app.add_subcommand("pipeline", "Run the configured stages with content-hash skipping");
  std::vector<std::string> only;
  pipeline->add_option("--out", out, "Override the artifact directory");
  pipeline->add_option("--stages", only, "Override the stage list")->delimiter(',');
  pipeline->callback([&] {
    action = [&] {
      if (g.config.empty()) hm::fail(hm::ErrorCode::ConfigError, "pipeline needs --config");
      auto cfg = hm::pipeline::PipelineConfig::load(g.config);
      if (!out.empty()) cfg.out_dir = fs::absolute(out);
      if (!only.empty()) cfg.stages = only;
      if (app.count("--seed")) cfg.seed = g.seed;
      if (app.count("--workers")) cfg.workers = g.workers;
      const auto res = hm::pipeline::run_pipeline(cfg);
      return json{{"executed", res.executed}, {"skipped", res.skipped}, {"out", cfg.out_dir.string()}};
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error({{"error", "ConfigError"}, {"message", e.what()}});
    return 2;
  }

  auto logger = spdlog::stderr_color_mt("handmotion");
  spdlog::set_default_logger(logger);
  const auto level = spdlog::level::from_str(g.log_level);
  if (level == spdlog::level::off && g.log_level != "off") {
    report_error({{"error", "ConfigError"}, {"message", "unknown log level " + g.log_level}});
    return 2;
  }
  spdlog::set_level(level);

  try {
    print(action());
    return 0;
  } catch (const hm::pipeline::StageFailure& e) {
    report_error({{"error", "StageFailure"},
                  {"stage", e.stage()},
                  {"cause", hm::to_string(e.cause())},
                  {"message", e.what()}});
    return 3;
  } catch (const hm::Error& e) {
    report_error({{"error", hm::to_string(e.code())}, {"message", e.what()}});
    return exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    report_error({{"error", "IoError"}, {"message", e.what()}});
    return 4;
  } catch (const std::exception& e) {
    report_error({{"error", "StageFailure"}, {"message", e.what()}});
    return 3;
  }
}
