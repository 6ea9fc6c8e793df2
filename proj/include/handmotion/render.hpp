#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "handmotion/motion.hpp"
#include "handmotion/skeleton.hpp"

namespace hm {

struct RenderOptions {
  int width = 256;
  int height = 256;
  int margin = 12;  // pixels kept free around the fitted skeleton
  /// Blue (first requested frame) to red (last); black otherwise.
  bool temporal_color = true;
};

/// Front view (x to the right, y up) of the skeleton bones at the requested
/// frames, fitted to the image with one scale for both axes. Returns a
/// binary PPM (P6). Throws BadFrameIndex.
std::vector<std::uint8_t> render_skeleton(const MotionSequence& motion, const std::vector<int>& frames,
                                          const Skeleton& skel, const RenderOptions& opts = {});

void render_skeleton(const MotionSequence& motion, const std::vector<int>& frames,
                     const std::filesystem::path& out, const Skeleton& skel, const RenderOptions& opts = {});

}  // namespace hm
