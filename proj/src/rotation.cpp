#include "handmotion/rotation.hpp"

#include <algorithm>
#include <cmath>

#include "handmotion/error.hpp"

namespace hm {

namespace {

constexpr double kDegenerateTol = 1e-12;
constexpr double kOrthonormalTol = 1e-6;

struct GramSchmidt {
  Vec3 a1, a2, b1, b2, b3, u;
  double n1 = 0.0, nu = 0.0;
};

GramSchmidt gram_schmidt(std::span<const double> six) {
  GramSchmidt gs;
  gs.a1 = Vec3(six[0], six[1], six[2]);
  gs.a2 = Vec3(six[3], six[4], six[5]);
  if (!gs.a1.allFinite() || !gs.a2.allFinite()) {
    fail(ErrorCode::DegenerateRotation, "non-finite 6D input");
  }
  gs.n1 = gs.a1.norm();
  if (gs.n1 < kDegenerateTol) {
    fail(ErrorCode::DegenerateRotation, "first column is the zero vector");
  }
  gs.b1 = gs.a1 / gs.n1;
  gs.u = gs.a2 - gs.b1.dot(gs.a2) * gs.b1;
  gs.nu = gs.u.norm();
  if (gs.nu < kDegenerateTol * std::max(1.0, gs.a2.norm())) {
    fail(ErrorCode::DegenerateRotation, "columns are zero or colinear");
  }
  gs.b2 = gs.u / gs.nu;
  gs.b3 = gs.b1.cross(gs.b2);
  return gs;
}

}  // namespace

Rotation6D Rotation6D::from_span(std::span<const double> values) {
  Rotation6D out;
  std::copy_n(values.begin(), 6, out.r.begin());
  return out;
}

void Rotation6D::write_to(std::span<double> out) const {
  std::copy(r.begin(), r.end(), out.begin());
}

Mat3 rot6d_to_matrix(std::span<const double> six) {
  const GramSchmidt gs = gram_schmidt(six);
  Mat3 m;
  m.col(0) = gs.b1;
  m.col(1) = gs.b2;
  m.col(2) = gs.b3;
  return m;
}

Mat3 rot6d_to_matrix(const Rotation6D& rot) {
  return rot6d_to_matrix(std::span<const double>(rot.r));
}

double orthonormality_error(const Mat3& m) {
  return (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
}

Rotation6D matrix_to_rot6d(const Mat3& m) {
  if (!m.allFinite() || orthonormality_error(m) > kOrthonormalTol || m.determinant() <= 0.0) {
    fail(ErrorCode::NotARotation, "matrix is not orthonormal with positive determinant");
  }
  Rotation6D out;
  out.r = {m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1)};
  return out;
}

double rotation_angle(const Mat3& m) {
  const double c = std::clamp((m.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

Mat3 axis_angle_matrix(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

std::array<double, 6> rot6d_backward(std::span<const double> six, const Mat3& grad_matrix) {
  const GramSchmidt gs = gram_schmidt(six);
  Vec3 g_b1 = grad_matrix.col(0);
  Vec3 g_b2 = grad_matrix.col(1);
  const Vec3 g_b3 = grad_matrix.col(2);

  // b3 = b1 x b2
  g_b1 += gs.b2.cross(g_b3);
  g_b2 += g_b3.cross(gs.b1);

  // b2 = u / |u|
  const Vec3 g_u = (g_b2 - gs.b2 * gs.b2.dot(g_b2)) / gs.nu;

  // u = a2 - (b1 . a2) b1
  const double proj = gs.b1.dot(gs.a2);
  const Vec3 g_a2 = g_u - gs.b1 * gs.b1.dot(g_u);
  g_b1 -= proj * g_u + gs.b1.dot(g_u) * gs.a2;

  // b1 = a1 / |a1|
  const Vec3 g_a1 = (g_b1 - gs.b1 * gs.b1.dot(g_b1)) / gs.n1;

  return {g_a1.x(), g_a1.y(), g_a1.z(), g_a2.x(), g_a2.y(), g_a2.z()};
}

}  // namespace hm
