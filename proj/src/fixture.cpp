#include "handmotion/fixture.hpp"

#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "handmotion/binary_io.hpp"
#include "handmotion/llm.hpp"
#include "handmotion/motion.hpp"
#include "handmotion/pipeline.hpp"
#include "handmotion/rotation.hpp"
#include "handmotion/skeleton.hpp"
#include "handmotion/stitcher.hpp"

namespace hm::fixture {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct MotionSpec {
  std::string id;
  int frames;
  Handedness handedness;
  std::string split;
  json extra;
};

Vec3 random_axis_angle(std::mt19937_64& rng, double max_angle) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, max_angle);
  Vec3 axis(z(rng), z(rng), z(rng));
  return axis.normalized() * u(rng);
}

/// Every rotation block interpolates linearly in axis-angle between two
/// random key poses; face coefficients are small constants.
MotionSequence ground_truth(const MotionSpec& spec, std::mt19937_64& rng) {
  MotionSequence m = MotionSequence::rest(spec.id, spec.frames);
  m.handedness = spec.handedness;
  std::normal_distribution<double> face(0.0, 0.1);
  for (int b = 0; b < kRotationBlockCount; ++b) {
    const double max_angle = b < kBodyJointCount ? 0.5 : 0.8;
    const Vec3 a = random_axis_angle(rng, max_angle), c = random_axis_angle(rng, max_angle);
    for (int t = 0; t < spec.frames; ++t) {
      const double s = spec.frames > 1 ? static_cast<double>(t) / (spec.frames - 1) : 0.0;
      const Vec3 v = (1.0 - s) * a + s * c;
      const Mat3 r = v.norm() > 0.0 ? axis_angle_matrix(v.normalized(), v.norm()) : Mat3::Identity();
      matrix_to_rot6d(r).write_to(m.frame(t).subspan(block_offset(b), 6));
    }
  }
  for (int k = 0; k < kFaceCount; ++k) {
    const double v = face(rng);
    for (int t = 0; t < spec.frames; ++t) m.frames(t, kFaceOffset + k) = v;
  }
  return m;
}

/// Hand reconstruction: exact finger rotations and wrist orientations; the
/// third frame of the non-dominant hand is flagged invalid.
HandEstimate hand_estimate(const MotionSequence& gt, const Skeleton& skel) {
  HandEstimate est;
  est.fps = gt.fps;
  est.handedness = gt.handedness;
  for (int t = 0; t < gt.num_frames(); ++t) {
    std::array<HandFrame, 2> pair;
    for (Side side : {Side::Left, Side::Right}) {
      HandFrame& f = pair[side == Side::Left ? 0 : 1];
      for (int j = 0; j < kHandJointCount; ++j) {
        f.fingers[j] = Rotation6D::from_span(gt.frame(t).subspan(block_offset(hand_block(side, j)), 6));
      }
      f.wrist_global = global_orientation(skel, gt.frame(t), skel.wrist_joint(side));
      const Side nondominant = gt.handedness == Handedness::Right ? Side::Left : Side::Right;
      f.valid = !(t == 2 && side == nondominant);
    }
    est.frames.push_back(pair);
  }
  return est;
}

/// Body-model estimate: arm rotations perturbed, fingers flat.
MotionSequence body_estimate(const MotionSequence& gt, std::mt19937_64& rng) {
  MotionSequence m = gt;
  for (int b : kArmBlocks) {
    const Mat3 noise = [&] {
      const Vec3 v = random_axis_angle(rng, 0.2);
      return v.norm() > 0.0 ? axis_angle_matrix(v.normalized(), v.norm()) : Mat3::Identity();
    }();
    for (int t = 0; t < m.num_frames(); ++t) {
      const Mat3 r = rot6d_to_matrix(m.frame(t).subspan(block_offset(b), 6));
      matrix_to_rot6d(r * noise).write_to(m.frame(t).subspan(block_offset(b), 6));
    }
  }
  for (int t = 0; t < m.num_frames(); ++t) {
    for (int b = kBodyJointCount; b < kRotationBlockCount; ++b) {
      matrix_to_rot6d(Mat3::Identity()).write_to(m.frame(t).subspan(block_offset(b), 6));
    }
  }
  return m;
}

std::string words(std::string token) {
  for (char& c : token) {
    if (c == '_') c = ' ';
  }
  return token;
}

/// Three scripted descriptions built from the record's attributes. The
/// one-handed variants end with a sentence about the idle hand, which the
/// describe stage removes.
std::string scripted_reply(const stages::DescribeJob& job) {
  const phon::PhonologyRecord& r = job.record;
  const std::string hs = words(r.handshape_initial ? r.handshape_initial->dominant : "relaxed");
  const std::string loc = words(r.location_initial.empty() ? "neutral_space" : r.location_initial);
  const std::string end = r.location_final.empty() ? "" : ", then moves towards the " + words(r.location_final);
  std::string d1 = "The dominant hand takes a " + hs + " handshape at the " + loc + end + ".";
  std::string d2 = "Starting near the " + loc + ", the dominant hand is held in a " + hs + " shape";
  if (r.handshape_initial && !r.handshape_initial->nondominant.empty()) {
    d2 += " while the non-dominant hand forms a " + words(r.handshape_initial->nondominant) + " shape";
  }
  d2 += ".";
  std::string d3 = std::string(r.one_handed() ? "A one-handed" : "A two-handed") + " sign for " + r.keywords.front() +
                   ": the dominant hand, shaped " + hs + ", is placed at the " + loc + ".";
  if (job.hms_block) d3 += " The hand stays close to the body.";
  if (r.one_handed()) d3 += " The non-dominant hand remains still.";
  return json{{"Description 1", d1}, {"Description 2", d2}, {"Description 3", d3}}.dump(2);
}

void write_json(const fs::path& p, const json& j) { io::write_text(p, j.dump(2) + "\n"); }

}  // namespace

void write_corpus(const fs::path& dir, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  fs::create_directories(dir / "body");
  fs::create_directories(dir / "hands");
  fs::create_directories(dir / "embeddings");
  const Skeleton skel = Skeleton::bundled();

  const std::vector<json> phonology = {
      json::parse(R"({"gloss_id":"HELLO","keywords":["hello","hi"],"handshape":{"initial":{"dominant":"flat"}},
        "location":{"initial":"forehead","final":"neutral_space"},"facing":{"dominant_to_location":"palm"},
        "tags":["one_handed"]})"),
      json::parse(R"({"gloss_id":"THANKS","keywords":["thanks","grateful"],"handshape":{"initial":{"dominant":"flat"},
        "final":{"dominant":"flat"}},"location":{"initial":"chin"},"facing":{"dominant_to_location":"fingertips"},
        "tags":["one_handed"]})"),
      json::parse(R"({"gloss_id":"THINK","keywords":["think","idea"],"handshape":{"initial":{"dominant":"point"}},
        "location":{"initial":"forehead"},"facing":{"dominant_to_location":"index_fingertip"},
        "tags":["one_handed","forearm_rotation"]})"),
      json::parse(R"({"gloss_id":"THINKb","keywords":["think","consider"],"handshape":{"initial":{"dominant":"point",
        "nondominant":"flat"},"final":{"dominant":"flat","nondominant":"flat"}},"location":{"initial":"upper_face",
        "final":"neutral_space"},"facing":{"dominant_to_nondominant:final":"back"},
        "tags":["two_handed","handshape_change"]})")};
  write_jsonl(dir / "phonology.jsonl", phonology);
  write_json(dir / "dictionary.json",
             {{"glosses",
               {{"HELLO", {{"words", {"hello"}}, {"keywords", {"hi"}}}},
                {"THANKS", {{"words", {"thanks"}}, {"keywords", {"grateful"}}}},
                {"THINK", {{"words", {"think"}}, {"keywords", {"idea"}}}},
                {"THINKb", {{"words", {"think"}}, {"keywords", {"consider"}}}}}}});

  // Episode label streams: runs of 12, 5 (rejected) and 6 + 6 frames split by
  // a 2-frame gap in the first; 10 and 13 frames in the second.
  auto stream = [](const std::string& id, const std::vector<std::pair<std::string, int>>& runs) {
    std::vector<json> labels;
    std::vector<double> conf;
    for (const auto& [label, n] : runs) {
      for (int k = 0; k < n; ++k) {
        labels.push_back(label.empty() ? json(nullptr) : json(label));
        conf.push_back(label.empty() ? 0.2 : 0.9);
      }
    }
    return json{{"episode_id", id}, {"labels", labels}, {"confidences", conf}};
  };
  write_jsonl(dir / "labels.jsonl",
              {stream("ep01", {{"", 3}, {"hello", 12}, {"", 3}, {"thanks", 5}, {"", 2}, {"think", 6}, {"", 2},
                               {"think", 6}, {"", 4}}),
               stream("ep02", {{"think", 10}, {"", 5}, {"thanks", 13}, {"", 2}})});

  auto segment = [](const std::string& ep, const std::string& label, int start, int end) {
    return json{{"source", "episode"},
                {"word", label},
                {"segment", {{"episode_id", ep}, {"label", label}, {"start", start}, {"end", end}}}};
  };
  std::vector<MotionSpec> specs;
  for (const char* g : {"HELLO", "THANKS", "THINK", "THINKb"}) {
    specs.push_back({std::string("dict_") + g, 20, Handedness::Right, "train",
                     {{"source", "dictionary"}, {"gloss_id", g}}});
  }
  specs.push_back({"ep01_000", 12, Handedness::Right, "train", segment("ep01", "hello", 3, 14)});
  specs.push_back({"ep01_001", 14, Handedness::Right, "train", segment("ep01", "think", 25, 38)});
  specs.push_back({"ep02_000", 10, Handedness::Left, "test", segment("ep02", "think", 0, 9)});
  specs.push_back({"ep02_001", 13, Handedness::Left, "test", segment("ep02", "thanks", 15, 27)});

  std::vector<ManifestRecord> manifest;
  for (const MotionSpec& spec : specs) {
    const MotionSequence gt = ground_truth(spec, rng);
    write_motion(dir / "body" / (spec.id + ".hmf"), body_estimate(gt, rng));
    write_hand_estimate(dir / "hands" / (spec.id + ".hhe"), hand_estimate(gt, skel));
    manifest.push_back({spec.id, spec.id + ".hmf", {}, spec.split, spec.extra});
  }
  write_manifest(dir / "body" / "manifest.jsonl", manifest);

  // Sign embeddings: one random direction per variant, samples near the
  // variant they were signed with.
  constexpr int kDim = 16;
  std::normal_distribution<double> z(0.0, 1.0);
  auto random_unit = [&] {
    Eigen::VectorXd v(kDim);
    for (int i = 0; i < kDim; ++i) v(i) = z(rng);
    return Eigen::VectorXd(v.normalized());
  };
  auto to_list = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  std::map<std::string, Eigen::VectorXd> variant_vec;
  std::vector<json> variants;
  for (const char* g : {"HELLO", "THANKS", "THINK", "THINKb"}) {
    variant_vec[g] = random_unit();
    variants.push_back({{"variant_id", g}, {"embedding", to_list(variant_vec[g])}});
  }
  write_jsonl(dir / "embeddings" / "variants.jsonl", variants);
  const std::vector<std::tuple<std::string, std::string, std::string>> samples = {
      {"ep01_000", "hello", "HELLO"}, {"ep01_001", "think", "THINKb"},
      {"ep02_000", "think", "THINK"}, {"ep02_001", "thanks", "THANKS"}};
  std::vector<json> sample_lines;
  for (const auto& [id, word, variant] : samples) {
    const Eigen::VectorXd v = variant_vec[variant] + 0.1 * random_unit();
    sample_lines.push_back({{"motion_id", id}, {"word", word}, {"embedding", to_list(v)}});
  }
  write_jsonl(dir / "embeddings" / "samples.jsonl", sample_lines);

  const json pipeline_cfg = {
      {"out", "artifacts"},
      {"seed", 0},
      {"workers", 2},
      {"stages", pipeline::stage_order()},
      {"inputs",
       {{"body", "body"},
        {"hands", "hands"},
        {"phonology", "phonology.jsonl"},
        {"labels", "labels.jsonl"},
        {"embeddings", "embeddings"},
        {"dictionary", "dictionary.json"},
        {"llm", "fixtures:llm"}}},
      {"stitch", {{"max_iterations", 100}}},
      {"hms", {{"min_run", 4}}},
      {"describe", {{"model", "fixture"}, {"temperature", 1.0}, {"max_in_flight", 2}}},
      {"segments", {{"m", 6}, {"conf", 0.5}}},
      {"thmr",
       {{"latent_dim", 32},
        {"epochs", 30},
        {"batch_size", 8},
        {"lr", 1e-3},
        {"motion_encoder", {{"width", 16}, {"layers", 1}, {"heads", 2}, {"ff", 32}}},
        {"text_encoder", {{"width", 16}, {"layers", 1}, {"heads", 2}, {"ff", 32}}}}},
      {"diffusion",
       {{"encoder", {{"width", 16}, {"layers", 1}, {"heads", 2}, {"ff", 32}}},
        {"steps", 10},
        {"max_length", 32},
        {"epochs", 3},
        {"batch_size", 4},
        {"guidance", 15.0}}},
      {"eval", {{"generator", "identity"}, {"repeats", 4}, {"mode", "m2m"}}}};
  write_json(dir / "pipeline.json", pipeline_cfg);

  // Record a reply for every prompt the describe stage will send. The HMS
  // blocks come from running the first two stages on this corpus.
  const fs::path work = dir / ".work";
  fs::remove_all(work);
  json prep = pipeline_cfg;
  prep["out"] = ".work";
  prep["stages"] = {"stitch", "hms"};
  const pipeline::PipelineConfig cfg = pipeline::PipelineConfig::from_json(prep, dir);
  pipeline::run_pipeline(cfg);
  const auto jobs = stages::describe_jobs(phon::read_records(dir / "phonology.jsonl"),
                                          read_jsonl(work / "hms" / "hms.jsonl"), pipeline::describe_options(cfg));
  fs::remove_all(work);
  fs::remove_all(dir / "llm");
  fs::create_directories(dir / "llm");
  for (const auto& job : jobs) llm::FixtureClient::record(dir / "llm", job.request, scripted_reply(job));
}

}  // namespace hm::fixture
