#include "handmotion/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "handmotion/binary_io.hpp"
#include "handmotion/error.hpp"

namespace hm {
namespace {

using Rgb = std::array<std::uint8_t, 3>;

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w) * h * 3, 255) {}

  void set(int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    const std::size_t i = (static_cast<std::size_t>(y) * w_ + x) * 3;
    px_[i] = c[0];
    px_[i + 1] = c[1];
    px_[i + 2] = c[2];
  }

  /// Bresenham over integer endpoints.
  void line(int x0, int y0, int x1, int y1, const Rgb& c) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  std::vector<std::uint8_t> ppm() const {
    const std::string header = "P6\n" + std::to_string(w_) + " " + std::to_string(h_) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), px_.begin(), px_.end());
    return out;
  }

 private:
  int w_, h_;
  std::vector<std::uint8_t> px_;
};

Rgb frame_color(int k, int count, bool temporal) {
  if (!temporal || count < 2) return {0, 0, 0};
  const double a = static_cast<double>(k) / (count - 1);
  return {static_cast<std::uint8_t>(std::lround(255 * a)), 0, static_cast<std::uint8_t>(std::lround(255 * (1 - a)))};
}

}  // namespace

std::vector<std::uint8_t> render_skeleton(const MotionSequence& motion, const std::vector<int>& frames,
                                          const Skeleton& skel, const RenderOptions& opts) {
  motion.validate();
  if (frames.empty()) fail(ErrorCode::BadFrameIndex, "no frames requested");
  if (opts.width < 8 || opts.height < 8 || opts.margin < 0 || 2 * opts.margin >= std::min(opts.width, opts.height)) {
    fail(ErrorCode::ConfigError, "bad image size");
  }
  std::vector<std::vector<Vec3>> poses;
  for (int f : frames) {
    if (f < 0 || f >= motion.num_frames()) {
      fail(ErrorCode::BadFrameIndex, "frame " + std::to_string(f) + " outside [0, " +
                                         std::to_string(motion.num_frames()) + ")");
    }
    poses.push_back(forward_kinematics(skel, motion.frame(f)));
  }
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& pose : poses) {
    for (const Vec3& p : pose) {
      xmin = std::min(xmin, p.x());
      xmax = std::max(xmax, p.x());
      ymin = std::min(ymin, p.y());
      ymax = std::max(ymax, p.y());
    }
  }
  const double span = std::max({xmax - xmin, ymax - ymin, 1e-9});
  const double scale = std::min(opts.width, opts.height) - 2.0 * opts.margin;
  const double cx = 0.5 * (xmin + xmax), cy = 0.5 * (ymin + ymax);
  auto col = [&](const Vec3& p) { return static_cast<int>(std::lround(0.5 * opts.width + (p.x() - cx) / span * scale)); };
  auto row = [&](const Vec3& p) { return static_cast<int>(std::lround(0.5 * opts.height - (p.y() - cy) / span * scale)); };

  Canvas canvas(opts.width, opts.height);
  const auto& joints = skel.joints();
  for (std::size_t k = 0; k < poses.size(); ++k) {
    const Rgb c = frame_color(static_cast<int>(k), static_cast<int>(poses.size()), opts.temporal_color);
    for (std::size_t j = 0; j < joints.size(); ++j) {
      const int parent = joints[j].parent;
      if (parent < 0) continue;
      canvas.line(col(poses[k][parent]), row(poses[k][parent]), col(poses[k][j]), row(poses[k][j]), c);
    }
  }
  return canvas.ppm();
}

void render_skeleton(const MotionSequence& motion, const std::vector<int>& frames,
                     const std::filesystem::path& out, const Skeleton& skel, const RenderOptions& opts) {
  io::write_file(out, render_skeleton(motion, frames, skel, opts));
}

}  // namespace hm
