#pragma once

// Lie-group helpers for SO(3) and grasp poses in SO(3) x R^3.

#include <array>
#include <cmath>
#include <numbers>
#include <string_view>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "graspgen/error.hpp"
#include "graspgen/random.hpp"

namespace graspgen {

using Rotation = Eigen::Matrix3d;
using RotVec = Eigen::Vector3d;

struct GraspPose {
  Rotation rotation = Rotation::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  GraspPose() = default;
  GraspPose(const Rotation& r, const Eigen::Vector3d& t) : rotation(r), translation(t) {}

  /// Maps a point from the gripper frame to the object frame.
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }
};

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

inline bool is_rotation(const Eigen::Matrix3d& r, double tol = 1e-9) {
  if (!r.allFinite()) return false;
  const double orth = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return orth <= tol && std::abs(r.determinant() - 1.0) <= tol;
}

inline Rotation exp_map_so3(const RotVec& omega) {
  if (!omega.allFinite()) throw InvalidInput("exp_map_so3: non-finite rotation vector");
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Eigen::Matrix3d k = skew(omega);
  double a, b;
  if (theta < 1e-6) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Eigen::Matrix3d::Identity() + a * k + b * k * k;
}

/// Inverse of exp_map_so3 with ||result|| <= pi. At exactly pi the axis sign
/// is chosen so that its largest-magnitude component is positive.
inline RotVec log_map_so3(const Rotation& r) {
  if (!is_rotation(r, 1e-6)) throw InvalidInput("log_map_so3: matrix is not a rotation");
  const Eigen::Vector3d vee(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double trace = r.trace();
  const double s = 0.5 * vee.norm();  // sin(theta)
  const double c = 0.5 * (trace - 1.0);  // cos(theta)
  const double theta = std::atan2(s, c);

  if (trace > -1.0 + 1e-6) {
    if (theta < 1e-6) return 0.5 * (1.0 + theta * theta / 6.0) * vee;
    return (0.5 * theta / s) * vee;
  }

  // Near pi the antisymmetric part vanishes; recover the axis from the
  // symmetric part, (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) n n^T.
  const Eigen::Matrix3d sym =
      0.5 * (r + r.transpose()) - c * Eigen::Matrix3d::Identity();
  int col = 0;
  sym.diagonal().maxCoeff(&col);
  Eigen::Vector3d axis = sym.col(col);
  axis.normalize();
  if (vee.norm() > 1e-12) {
    if (axis.dot(vee) < 0.0) axis = -axis;
  } else {
    int big = 0;
    axis.cwiseAbs().maxCoeff(&big);
    if (axis[big] < 0.0) axis = -axis;
  }
  return theta * axis;
}

/// Geodesic angle between two rotations, ||log(a^T b)||.
inline double rotation_angle(const Rotation& a, const Rotation& b) {
  return log_map_so3(a.transpose() * b).norm();
}

/// d(a, b) = ||t_a - t_b|| + ||log(R_a^T R_b)||.
inline double pose_distance(const GraspPose& a, const GraspPose& b) {
  return (a.translation - b.translation).norm() + rotation_angle(a.rotation, b.rotation);
}

inline Rotation rot_x(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitX()).toRotationMatrix(); }
inline Rotation rot_y(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitY()).toRotationMatrix(); }
inline Rotation rot_z(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()).toRotationMatrix(); }

/// Haar-uniform rotation from a normalized Gaussian quaternion.
inline Rotation random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

/// Projects an arbitrary 3x3 matrix onto SO(3) via SVD.
inline Rotation project_to_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

// ---------------------------------------------------------------------------
// Rotation representations fed to the networks. Every component lies in
// [-1, 1]: LieAlgebra and Euler are divided by pi, SixD is passed unscaled.

enum class RotationReprKind { LieAlgebra, Euler, SixD };

inline int repr_width(RotationReprKind kind) { return kind == RotationReprKind::SixD ? 6 : 3; }

inline std::string_view repr_name(RotationReprKind kind) {
  switch (kind) {
    case RotationReprKind::LieAlgebra: return "lie";
    case RotationReprKind::Euler: return "euler";
    case RotationReprKind::SixD: return "6d";
  }
  return "?";
}

inline RotationReprKind parse_repr(std::string_view s) {
  if (s == "lie" || s == "lie_algebra") return RotationReprKind::LieAlgebra;
  if (s == "euler") return RotationReprKind::Euler;
  if (s == "6d" || s == "sixd") return RotationReprKind::SixD;
  throw InvalidInput("unknown rotation representation '" + std::string(s) + "'");
}

struct RotationRepr {
  RotationReprKind kind = RotationReprKind::LieAlgebra;
  Eigen::VectorXd values;
};

/// Intrinsic ZYX angles (yaw, pitch, roll) with R = Rz(yaw) Ry(pitch) Rx(roll).
/// At gimbal lock (|pitch| = pi/2) roll is set to 0; the encoding is valid
/// but not unique.
inline Eigen::Vector3d rotation_to_euler_zyx(const Rotation& r) {
  const double sp = std::clamp(-r(2, 0), -1.0, 1.0);
  const double pitch = std::asin(sp);
  if (std::abs(sp) > 1.0 - 1e-12) {
    const double yaw = std::atan2(-r(0, 1), r(1, 1));
    return {yaw, sp > 0 ? std::numbers::pi / 2 : -std::numbers::pi / 2, 0.0};
  }
  return {std::atan2(r(1, 0), r(0, 0)), pitch, std::atan2(r(2, 1), r(2, 2))};
}

inline Rotation euler_zyx_to_rotation(const Eigen::Vector3d& ypr) {
  return rot_z(ypr[0]) * rot_y(ypr[1]) * rot_x(ypr[2]);
}

/// Gram-Schmidt decoding of two (possibly perturbed) columns.
inline Rotation sixd_to_rotation(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double an = a.norm();
  if (!(an > 1e-12) || !a.allFinite() || !b.allFinite())
    throw InvalidInput("6d decode: degenerate first column");
  const Eigen::Vector3d c0 = a / an;
  Eigen::Vector3d c1 = b - c0.dot(b) * c0;
  double bn = c1.norm();
  if (!(bn > 1e-12)) {
    // b parallel to a: pick any orthogonal direction.
    c1 = c0.unitOrthogonal();
    bn = 1.0;
  }
  c1 /= bn;
  Rotation r;
  r.col(0) = c0;
  r.col(1) = c1;
  r.col(2) = c0.cross(c1);
  return r;
}

inline RotationRepr rotation_to_repr(const Rotation& r, RotationReprKind kind) {
  RotationRepr out{kind, Eigen::VectorXd(repr_width(kind))};
  switch (kind) {
    case RotationReprKind::LieAlgebra:
      out.values = log_map_so3(r) / std::numbers::pi;
      break;
    case RotationReprKind::Euler:
      out.values = rotation_to_euler_zyx(r) / std::numbers::pi;
      break;
    case RotationReprKind::SixD:
      out.values << r.col(0), r.col(1);
      break;
  }
  return out;
}

inline Rotation repr_to_rotation(const RotationRepr& repr) {
  if (repr.values.size() != repr_width(repr.kind))
    throw InvalidInput("repr_to_rotation: wrong value count for representation");
  if (!repr.values.allFinite()) throw InvalidInput("repr_to_rotation: non-finite values");
  switch (repr.kind) {
    case RotationReprKind::LieAlgebra:
      return exp_map_so3(repr.values.head<3>() * std::numbers::pi);
    case RotationReprKind::Euler:
      return euler_zyx_to_rotation(repr.values.head<3>() * std::numbers::pi);
    case RotationReprKind::SixD:
      return sixd_to_rotation(repr.values.head<3>(), repr.values.tail<3>());
  }
  throw InvalidInput("repr_to_rotation: unknown kind");
}

// ---------------------------------------------------------------------------
// Serialization form: translation + unit quaternion (w, x, y, z) with w >= 0.

inline std::array<double, 4> to_quat_wxyz(const Rotation& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  return {q.w(), q.x(), q.y(), q.z()};
}

inline Rotation from_quat_wxyz(const std::array<double, 4>& wxyz) {
  Eigen::Quaterniond q(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
  const double n = q.norm();
  if (!(n > 1e-12) || !std::isfinite(n)) throw InvalidInput("quaternion has zero norm");
  q.coeffs() /= n;
  return q.toRotationMatrix();
}

}  // namespace graspgen
