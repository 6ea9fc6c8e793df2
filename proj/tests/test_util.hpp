#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "handmotion/motion.hpp"
#include "handmotion/rotation.hpp"

namespace hm::test {

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Vec3(n(rng), n(rng), n(rng)).normalized();
}

inline Mat3 random_rotation(std::mt19937_64& rng, double max_angle = 3.14159) {
  std::uniform_real_distribution<double> u(0.0, max_angle);
  return axis_angle_matrix(random_unit(rng), u(rng));
}

/// Raw (non-orthonormal) 6D vector with well-separated columns.
inline Rotation6D random_raw6d(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Rotation6D r;
  for (double& v : r.r) v = n(rng);
  return r;
}

inline MotionSequence random_motion(std::mt19937_64& rng, int frames, double max_angle = 1.0,
                                    std::string id = "random") {
  MotionSequence m = MotionSequence::rest(std::move(id), frames);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < frames; ++t) {
    for (int b = 0; b < 43; ++b) {
      matrix_to_rot6d(random_rotation(rng, max_angle)).write_to(m.frame(t).subspan(6 * b, 6));
    }
    for (int c = 258; c < 274; ++c) m.frames(t, c) = n(rng);
  }
  return m;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("handmotion_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace hm::test
