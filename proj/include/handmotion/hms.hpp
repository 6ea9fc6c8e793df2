#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "handmotion/motion.hpp"
#include "handmotion/skeleton.hpp"

// HandMotionScript: per-frame categorical hand features (distances, per-axis
// distances, palm orientation), their temporal post-processing and the text
// block handed to the description prompt.
namespace hm::hms {

enum class DistanceCode { Touching, Close, Medium, Spread, Wide };
enum class Axis { X, Y, Z };
enum class Orientation { Sideways, Down, Up, In, Out };

/// Bucket edges in meters; buckets are right-open so a value equal to an edge
/// falls into the upper bucket.
struct Thresholds {
  std::array<double, 4> edges{0.02, 0.08, 0.20, 0.40};
  void validate() const;
};

/// Signed per-axis code: level in [-4, 4], 0 = touching, |level| = distance
/// bucket, sign = direction (x: - right / + left, y: - below / + above,
/// z: - behind / + in front) in the body frame.
struct AxisCode {
  Axis axis = Axis::X;
  int level = 0;
  bool operator==(const AxisCode&) const = default;
};

std::string_view label(DistanceCode c);
std::string label(AxisCode c);  // e.g. "close/in front", "touching"
std::string_view label(Orientation o);

DistanceCode distance_code(const Vec3& p, const Vec3& q, const Thresholds& th = {});
AxisCode axis_code(double delta, Axis axis, const Thresholds& th = {});

/// Canonical palm normal in each hand's local frame.
struct PalmConfig {
  Vec3 left_normal = Vec3(0.0, -1.0, 0.0);
  Vec3 right_normal = Vec3(0.0, -1.0, 0.0);
  double threshold = 0.7;
};

/// Rotates the side's canonical normal by the wrist global rotation; returns
/// the label of the dominant coordinate when its magnitude exceeds the
/// threshold, otherwise nothing.
std::optional<Orientation> palm_orientation(const Mat3& wrist_global, Side side,
                                            const PalmConfig& cfg = {});

enum class ChannelKind { Distance, AxisX, AxisY, AxisZ, Orientation };

/// Channel identity in body terms: subject/target are "left_hand",
/// "right_hand" or an anchor name ("torso", "left_shoulder", ...).
struct ChannelKey {
  ChannelKind kind = ChannelKind::Distance;
  std::string subject;
  std::string target;  // empty for orientation channels

  std::string name() const;  // e.g. "axis_x:right_hand->torso"
  static ChannelKey parse(std::string_view name);
  bool operator==(const ChannelKey&) const = default;
};

struct Channel {
  ChannelKey key;
  std::vector<std::string> raw;  // one code per frame, "" = no code that frame
  std::vector<std::string> processed;
  bool dropped = false;  // removed by post-processing
};

struct PosecodeTable {
  std::vector<Channel> channels;
  int num_frames = 0;

  const Channel* find(std::string_view name) const;
  /// Channels that survived post-processing, name -> codes.
  nlohmann::json processed_json() const;
};

enum class UsedHands { Dominant, NonDominant, Both };

/// Anchors the hand distances are measured to, derived from a dictionary
/// location token ("chest" -> torso, "shoulder" -> both shoulders, ...).
/// Unknown tokens map to nothing.
std::vector<std::string> anchors_for_location(std::string_view location_token);

struct ExtractOptions {
  Thresholds thresholds;
  PalmConfig palm;
};

/// Geometry sampled per frame; the code stage only sees these values.
struct FrameGeometry {
  Vec3 left_hand, right_hand;  // palm centers (wrist / middle-knuckle midpoint)
  Mat3 left_wrist, right_wrist;
  std::vector<std::pair<std::string, Vec3>> anchors;
};

std::vector<FrameGeometry> measure(const MotionSequence& motion, const Skeleton& skel,
                                   const std::vector<std::string>& anchor_names,
                                   const RootTransform& root = {});

/// Anchors are skeleton marker names, "dominant_shoulder" /
/// "nondominant_shoulder", or "neutral_space" (mapped to the other hand).
/// Throws UnknownAnchor for anything else.
PosecodeTable extract_framecodes(const MotionSequence& motion, const Skeleton& skel,
                                 const std::vector<std::string>& locations, UsedHands used,
                                 const ExtractOptions& opts = {});

PosecodeTable framecodes_from_geometry(const std::vector<FrameGeometry>& frames,
                                       Handedness handedness,
                                       const std::vector<std::string>& locations, UsedHands used,
                                       const ExtractOptions& opts = {});

/// Deletes runs shorter than `min_run` (and frames without a code), collapses
/// repeats, removes empty channels, and drops all three axis channels of a
/// distance feature when two or more of them still change over time.
/// Reads only the raw lists, so applying it twice gives the same table.
PosecodeTable postprocess(PosecodeTable table, int min_run = 4);

/// Prompt text for a post-processed table; hand words are rewritten as
/// dominant/non-dominant according to the signer's handedness.
std::string render_block(const PosecodeTable& table, Handedness handedness);

}  // namespace hm::hms
