#pragma once

#include <array>
#include <span>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace hm {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Continuous rotation parameterization: the first two columns of a rotation
/// matrix, stored column after column ([c0x c0y c0z c1x c1y c1z]).
struct Rotation6D {
  std::array<double, 6> r{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};

  static Rotation6D from_span(std::span<const double> values);
  void write_to(std::span<double> out) const;
  bool operator==(const Rotation6D&) const = default;
};

/// Gram-Schmidt on the two stored columns, third column by cross product.
/// Throws DegenerateRotation when a column is zero or the pair is colinear
/// (within 1e-12).
Mat3 rot6d_to_matrix(const Rotation6D& rot);
Mat3 rot6d_to_matrix(std::span<const double> six);

/// Throws NotARotation unless `m` is orthonormal within 1e-6 with det > 0.
Rotation6D matrix_to_rot6d(const Mat3& m);

/// Max-abs deviation of MᵀM from identity.
double orthonormality_error(const Mat3& m);

/// Geodesic angle of a rotation matrix in [0, pi].
double rotation_angle(const Mat3& m);

Mat3 axis_angle_matrix(const Vec3& axis, double angle);

/// Reverse-mode step through rot6d_to_matrix: given dL/dR, returns dL/dr.
std::array<double, 6> rot6d_backward(std::span<const double> six, const Mat3& grad_matrix);

}  // namespace hm
