#include "handmotion/hms.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "handmotion/error.hpp"

namespace hm::hms {

namespace {

constexpr std::array<std::string_view, 5> kDistanceLabels = {"touching", "close", "medium",
                                                             "spread", "wide"};

struct AxisWords {
  std::string_view negative, positive;
};

AxisWords axis_words(Axis axis) {
  switch (axis) {
    case Axis::X: return {"right", "left"};
    case Axis::Y: return {"below", "above"};
    case Axis::Z: return {"behind", "in front"};
  }
  return {"", ""};
}

int bucket(double magnitude, const Thresholds& th) {
  int level = 0;
  while (level < 4 && magnitude >= th.edges[level]) ++level;
  return level;
}

std::string_view kind_prefix(ChannelKind k) {
  switch (k) {
    case ChannelKind::Distance: return "distance";
    case ChannelKind::AxisX: return "axis_x";
    case ChannelKind::AxisY: return "axis_y";
    case ChannelKind::AxisZ: return "axis_z";
    case ChannelKind::Orientation: return "orientation";
  }
  return "";
}

bool is_axis(ChannelKind k) {
  return k == ChannelKind::AxisX || k == ChannelKind::AxisY || k == ChannelKind::AxisZ;
}

std::string side_hand(Side s) { return s == Side::Left ? "left_hand" : "right_hand"; }

Side dominant_side(Handedness h) { return h == Handedness::Right ? Side::Right : Side::Left; }
Side other(Side s) { return s == Side::Left ? Side::Right : Side::Left; }

const Mat3& wrist(const FrameGeometry& g, Side s) { return s == Side::Left ? g.left_wrist : g.right_wrist; }

std::string resolve_anchor(const std::string& anchor, Handedness h) {
  const bool right = h == Handedness::Right;
  if (anchor == "dominant_shoulder") return right ? "right_shoulder" : "left_shoulder";
  if (anchor == "nondominant_shoulder") return right ? "left_shoulder" : "right_shoulder";
  return anchor;
}

}  // namespace

void Thresholds::validate() const {
  for (int i = 0; i < 4; ++i) {
    if (!std::isfinite(edges[i]) || edges[i] <= 0.0 || (i > 0 && edges[i] <= edges[i - 1])) {
      fail(ErrorCode::ConfigError, "distance thresholds must be positive and strictly increasing");
    }
  }
}

std::string_view label(DistanceCode c) { return kDistanceLabels[static_cast<int>(c)]; }

std::string label(AxisCode c) {
  if (c.level == 0) return "touching";
  const AxisWords w = axis_words(c.axis);
  return std::string(kDistanceLabels[std::abs(c.level)]) + "/" +
         std::string(c.level < 0 ? w.negative : w.positive);
}

std::string_view label(Orientation o) {
  switch (o) {
    case Orientation::Sideways: return "sideways";
    case Orientation::Down: return "down";
    case Orientation::Up: return "up";
    case Orientation::In: return "in";
    case Orientation::Out: return "out";
  }
  return "";
}

DistanceCode distance_code(const Vec3& p, const Vec3& q, const Thresholds& th) {
  return static_cast<DistanceCode>(bucket((p - q).norm(), th));
}

AxisCode axis_code(double delta, Axis axis, const Thresholds& th) {
  const int level = bucket(std::abs(delta), th);
  return {axis, delta < 0.0 ? -level : level};
}

std::optional<Orientation> palm_orientation(const Mat3& wrist_global, Side side,
                                            const PalmConfig& cfg) {
  const Vec3 n = wrist_global * (side == Side::Left ? cfg.left_normal : cfg.right_normal);
  int axis = 0;
  n.cwiseAbs().maxCoeff(&axis);
  if (!(std::abs(n[axis]) > cfg.threshold)) return std::nullopt;
  switch (axis) {
    case 0: return Orientation::Sideways;
    case 1: return n[1] < 0.0 ? Orientation::Down : Orientation::Up;
    default: return n[2] < 0.0 ? Orientation::In : Orientation::Out;
  }
}

std::string ChannelKey::name() const {
  std::string out(kind_prefix(kind));
  out += ":" + subject;
  if (!target.empty()) out += "->" + target;
  return out;
}

ChannelKey ChannelKey::parse(std::string_view name) {
  const auto colon = name.find(':');
  if (colon == std::string_view::npos) fail(ErrorCode::SchemaViolation, "bad channel name");
  ChannelKey key;
  const std::string_view prefix = name.substr(0, colon);
  bool found = false;
  for (ChannelKind k : {ChannelKind::Distance, ChannelKind::AxisX, ChannelKind::AxisY,
                        ChannelKind::AxisZ, ChannelKind::Orientation}) {
    if (kind_prefix(k) == prefix) {
      key.kind = k;
      found = true;
    }
  }
  if (!found) fail(ErrorCode::SchemaViolation, "bad channel kind in '" + std::string(name) + "'");
  const std::string_view rest = name.substr(colon + 1);
  const auto arrow = rest.find("->");
  key.subject = std::string(rest.substr(0, arrow));
  if (arrow != std::string_view::npos) key.target = std::string(rest.substr(arrow + 2));
  return key;
}

const Channel* PosecodeTable::find(std::string_view name) const {
  for (const Channel& c : channels) {
    if (c.key.name() == name) return &c;
  }
  return nullptr;
}

nlohmann::json PosecodeTable::processed_json() const {
  nlohmann::json out = nlohmann::json::object();
  for (const Channel& c : channels) {
    if (!c.dropped) out[c.key.name()] = c.processed;
  }
  return out;
}

std::vector<std::string> anchors_for_location(std::string_view token) {
  std::string t(token);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) {
    return c == '_' ? ' ' : static_cast<char>(std::tolower(c));
  });
  static const std::map<std::string, std::vector<std::string>> table = {
      {"neutral space", {"neutral_space"}},
      {"neutral", {"neutral_space"}},
      {"in front of the person", {"neutral_space"}},
      {"chest", {"torso"}},
      {"chest level", {"torso"}},
      {"torso", {"torso"}},
      {"stomach", {"torso"}},
      {"trunk", {"torso"}},
      {"head", {"head"}},
      {"face", {"head"}},
      {"upper face", {"head"}},
      {"lower face", {"chin"}},
      {"forehead", {"head"}},
      {"temple", {"head"}},
      {"cheek", {"head"}},
      {"ear", {"head"}},
      {"nose", {"head"}},
      {"mouth", {"chin"}},
      {"chin", {"chin"}},
      {"neck", {"chin"}},
      {"shoulder", {"nondominant_shoulder", "dominant_shoulder"}},
      {"dominant shoulder", {"dominant_shoulder"}},
      {"non-dominant shoulder", {"nondominant_shoulder"}},
  };
  auto it = table.find(t);
  return it == table.end() ? std::vector<std::string>{} : it->second;
}

std::vector<FrameGeometry> measure(const MotionSequence& motion, const Skeleton& skel,
                                   const std::vector<std::string>& anchor_names,
                                   const RootTransform& root) {
  motion.validate();
  for (const std::string& a : anchor_names) skel.marker(a);  // UnknownAnchor early
  const int lw = skel.wrist_joint(Side::Left), rw = skel.wrist_joint(Side::Right);
  const int lm = skel.hand_joint(Side::Left, 3), rm = skel.hand_joint(Side::Right, 3);  // middle1
  std::vector<FrameGeometry> out(motion.num_frames());
  for (int t = 0; t < motion.num_frames(); ++t) {
    const PoseState pose = pose_from_locals(skel, local_rotations(skel, motion.frame(t)), root);
    FrameGeometry& g = out[t];
    g.left_hand = 0.5 * (pose.positions[lw] + pose.positions[lm]);
    g.right_hand = 0.5 * (pose.positions[rw] + pose.positions[rm]);
    g.left_wrist = pose.global[lw];
    g.right_wrist = pose.global[rw];
    for (const std::string& a : anchor_names) g.anchors.emplace_back(a, marker_position(skel, pose, a));
  }
  return out;
}

namespace {

struct Plan {
  std::vector<std::string> resolved_locations;  // as used for channels
  std::vector<std::string> marker_anchors;       // need FK sampling
};

Plan plan_locations(const std::vector<std::string>& locations, Handedness h) {
  Plan plan;
  for (const std::string& loc : locations) {
    const std::string r = resolve_anchor(loc, h);
    if (std::find(plan.resolved_locations.begin(), plan.resolved_locations.end(), r) !=
        plan.resolved_locations.end()) {
      continue;
    }
    plan.resolved_locations.push_back(r);
    if (r != "neutral_space") plan.marker_anchors.push_back(r);
  }
  return plan;
}

std::vector<Side> used_sides(UsedHands used, Handedness h) {
  const Side dom = dominant_side(h);
  switch (used) {
    case UsedHands::Dominant: return {dom};
    case UsedHands::NonDominant: return {other(dom)};
    case UsedHands::Both: return {Side::Left, Side::Right};
  }
  return {dom};
}

}  // namespace

PosecodeTable framecodes_from_geometry(const std::vector<FrameGeometry>& frames,
                                       Handedness handedness,
                                       const std::vector<std::string>& locations, UsedHands used,
                                       const ExtractOptions& opts) {
  opts.thresholds.validate();
  const Plan plan = plan_locations(locations, handedness);
  const std::vector<Side> sides = used_sides(used, handedness);
  const Side dom = dominant_side(handedness);
  const bool both = sides.size() == 2;

  PosecodeTable table;
  table.num_frames = static_cast<int>(frames.size());
  auto add_distance_channels = [&](const std::string& subject, const std::string& target) {
    for (ChannelKind k : {ChannelKind::Distance, ChannelKind::AxisX, ChannelKind::AxisY,
                          ChannelKind::AxisZ}) {
      table.channels.push_back({{k, subject, target}, {}, {}, false});
    }
  };

  for (const std::string& loc : plan.resolved_locations) {
    if (loc == "neutral_space") {
      // The other hand is the reference; one-handed signs have none.
      if (both) add_distance_channels(side_hand(dom), side_hand(other(dom)));
      continue;
    }
    for (Side s : sides) add_distance_channels(side_hand(s), loc);
  }
  for (Side s : sides) table.channels.push_back({{ChannelKind::Orientation, side_hand(s), ""}, {}, {}, false});

  for (const FrameGeometry& g : frames) {
    auto point_of = [&](const std::string& name) -> Vec3 {
      if (name == "left_hand") return g.left_hand;
      if (name == "right_hand") return g.right_hand;
      for (const auto& [anchor, p] : g.anchors) {
        if (anchor == name) return p;
      }
      fail(ErrorCode::UnknownAnchor, "anchor '" + name + "' was not measured");
    };
    for (Channel& c : table.channels) {
      if (c.key.kind == ChannelKind::Orientation) {
        const Side s = c.key.subject == "left_hand" ? Side::Left : Side::Right;
        const auto o = palm_orientation(wrist(g, s), s, opts.palm);
        c.raw.emplace_back(o ? std::string(label(*o)) : std::string());
        continue;
      }
      const Vec3 p = point_of(c.key.subject);
      const Vec3 q = point_of(c.key.target);
      switch (c.key.kind) {
        case ChannelKind::Distance: c.raw.emplace_back(label(distance_code(p, q, opts.thresholds))); break;
        case ChannelKind::AxisX: c.raw.push_back(label(axis_code(p.x() - q.x(), Axis::X, opts.thresholds))); break;
        case ChannelKind::AxisY: c.raw.push_back(label(axis_code(p.y() - q.y(), Axis::Y, opts.thresholds))); break;
        case ChannelKind::AxisZ: c.raw.push_back(label(axis_code(p.z() - q.z(), Axis::Z, opts.thresholds))); break;
        case ChannelKind::Orientation: break;
      }
    }
  }
  return table;
}

PosecodeTable extract_framecodes(const MotionSequence& motion, const Skeleton& skel,
                                 const std::vector<std::string>& locations, UsedHands used,
                                 const ExtractOptions& opts) {
  for (const std::string& loc : locations) {
    const std::string r = resolve_anchor(loc, motion.handedness);
    if (r != "neutral_space" && !skel.has_marker(r)) {
      fail(ErrorCode::UnknownAnchor, "unknown body anchor '" + loc + "'");
    }
  }
  const Plan plan = plan_locations(locations, motion.handedness);
  return framecodes_from_geometry(measure(motion, skel, plan.marker_anchors), motion.handedness,
                                  locations, used, opts);
}

PosecodeTable postprocess(PosecodeTable table, int min_run) {
  for (Channel& c : table.channels) {
    c.processed.clear();
    c.dropped = false;
    std::size_t i = 0;
    while (i < c.raw.size()) {
      std::size_t j = i;
      while (j < c.raw.size() && c.raw[j] == c.raw[i]) ++j;
      const bool keep = !c.raw[i].empty() && static_cast<int>(j - i) >= min_run;
      if (keep && (c.processed.empty() || c.processed.back() != c.raw[i])) c.processed.push_back(c.raw[i]);
      i = j;
    }
    c.dropped = c.processed.empty();
  }
  // Axis-dependent features go when two or more of their axes still change.
  std::map<std::pair<std::string, std::string>, int> changing;
  for (const Channel& c : table.channels) {
    if (is_axis(c.key.kind) && !c.dropped && c.processed.size() > 1) {
      ++changing[{c.key.subject, c.key.target}];
    }
  }
  for (Channel& c : table.channels) {
    if (is_axis(c.key.kind) && changing[{c.key.subject, c.key.target}] >= 2) c.dropped = true;
  }
  return table;
}

namespace {

std::string hand_words(const std::string& name, Handedness h) {
  const std::string dom = h == Handedness::Right ? "right" : "left";
  if (name == dom + "_hand") return "dominant hand";
  if (name == "left_hand" || name == "right_hand") return "non-dominant hand";
  if (name == dom + "_shoulder") return "dominant shoulder";
  if (name == "left_shoulder" || name == "right_shoulder") return "non-dominant shoulder";
  std::string out = name;
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

std::string render_code(const std::string& code, bool axis) {
  if (axis && code == "touching") return "aligned";
  const auto slash = code.find('/');
  if (slash == std::string::npos) return code;
  return code.substr(0, slash) + " / " + code.substr(slash + 1);
}

std::string render_codes(const std::vector<std::string>& codes, bool axis) {
  std::string out = "[";
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (i) out += ", ";
    out += render_code(codes[i], axis);
  }
  return out + "]";
}

std::string channel_line(const Channel& c, Handedness h) {
  const std::string subject = hand_words(c.key.subject, h);
  switch (c.key.kind) {
    case ChannelKind::Orientation:
      return "- Palm orientation - " + subject + ": " + render_codes(c.processed, false);
    case ChannelKind::Distance:
      return "- Distance from " + subject + " to " + hand_words(c.key.target, h) + ": " +
             render_codes(c.processed, false);
    default: {
      const char* axis = c.key.kind == ChannelKind::AxisX ? "x" : c.key.kind == ChannelKind::AxisY ? "y" : "z";
      return std::string("- Distance along ") + axis + " axis from " + subject + " to " +
             hand_words(c.key.target, h) + ": " + render_codes(c.processed, true);
    }
  }
}

}  // namespace

std::string render_block(const PosecodeTable& table, Handedness handedness) {
  const std::string dom_hand = handedness == Handedness::Right ? "right_hand" : "left_hand";
  auto is_hand = [](const std::string& s) { return s == "left_hand" || s == "right_hand"; };
  std::array<std::vector<std::string>, 4> sections;  // dominant, non-dominant, between, orientation
  for (const Channel& c : table.channels) {
    if (c.dropped) continue;
    int section;
    if (c.key.kind == ChannelKind::Orientation) {
      section = 3;
    } else if (is_hand(c.key.target)) {
      section = 2;
    } else {
      section = c.key.subject == dom_hand ? 0 : 1;
    }
    sections[section].push_back(channel_line(c, handedness));
  }
  static constexpr std::array<std::string_view, 4> kHeaders = {
      "DOMINANT HAND DISTANCES:", "NON-DOMINANT HAND DISTANCES:", "DISTANCE BETWEEN HANDS:",
      "HAND ORIENTATIONS:"};
  std::string out;
  for (int s = 0; s < 4; ++s) {
    if (sections[s].empty()) continue;
    out += kHeaders[s];
    out += '\n';
    for (const std::string& line : sections[s]) out += line + '\n';
  }
  return out;
}

}  // namespace hm::hms
