#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "tpose/error.hpp"

namespace tpose {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// A proper rotation. Object axes are the columns: x = col 0, y = col 1,
/// z = col 2.
class RotationMatrix {
 public:
  RotationMatrix() : m_(Mat3::Identity()) {}

  /// Throws InvalidArgument unless RᵀR = I and det R = +1 within `tol`.
  static RotationMatrix from_matrix(const Mat3& m, double tol = 1e-9);

  /// Re-orthonormalizes (nearest rotation via SVD) before wrapping.
  static RotationMatrix nearest(const Mat3& m);

  static RotationMatrix about_axis(const Vec3& axis, double angle);
  static RotationMatrix about_z(double angle) { return about_axis(Vec3::UnitZ(), angle); }

  const Mat3& matrix() const { return m_; }
  Vec3 x_axis() const { return m_.col(0); }
  Vec3 y_axis() const { return m_.col(1); }
  Vec3 z_axis() const { return m_.col(2); }

  RotationMatrix operator*(const RotationMatrix& o) const { return RotationMatrix(m_ * o.m_); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  RotationMatrix transpose() const { return RotationMatrix(m_.transpose()); }

 private:
  explicit RotationMatrix(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

struct Pose {
  RotationMatrix rotation;
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  /// Row-major homogeneous 4×4.
  Mat4 homogeneous() const;
  static Pose from_homogeneous(const Mat4& m, double tol = 1e-6);
};

/// Full box extents along the object x/y/z axes, meters.
class Scale {
 public:
  Scale() : e_(1.0, 1.0, 1.0) {}
  /// Throws NonPositiveScale on any component <= 0 or non-finite.
  explicit Scale(const Vec3& extents);
  Scale(double sx, double sy, double sz) : Scale(Vec3(sx, sy, sz)) {}

  const Vec3& extents() const { return e_; }
  double volume() const { return e_.prod(); }

 private:
  Vec3 e_;
};

enum class SymmetryKind { None, Axial, Planar };

class SymmetryClass {
 public:
  static SymmetryClass none() { return SymmetryClass(SymmetryKind::None, {}); }
  static SymmetryClass axial() { return SymmetryClass(SymmetryKind::Axial, {}); }
  /// Candidate rotations of the x-axis about z, radians. Must be non-empty
  /// and contain 0.
  static SymmetryClass planar(std::vector<double> angles);

  SymmetryKind kind() const { return kind_; }
  const std::vector<double>& angles() const { return angles_; }

  std::string to_string() const;
  /// Accepts "none", "axial", "planar" (= [0, pi]) or "planar:a0,a1,..." in radians.
  static SymmetryClass parse(std::string_view text);

  bool operator==(const SymmetryClass&) const = default;

 private:
  SymmetryClass(SymmetryKind k, std::vector<double> a) : kind_(k), angles_(std::move(a)) {}
  SymmetryKind kind_;
  std::vector<double> angles_;
};

inline constexpr int kNumCategories = 6;

class CategoryLabel {
 public:
  explicit CategoryLabel(int id);
  static CategoryLabel from_name(std::string_view name);

  int id() const { return id_; }
  std::string_view name() const;
  std::array<double, kNumCategories> one_hot() const;

  bool operator==(const CategoryLabel&) const = default;

 private:
  int id_;
};

const std::array<std::string_view, kNumCategories>& category_names();

/// Default category symmetry: bottle, bowl, water cup, wine cup are axial;
/// container and tableware are planar with candidates {0, pi}.
SymmetryClass default_symmetry(const CategoryLabel& category);

struct OrientedBox {
  Pose pose;
  Scale scale;
};

/// Corner i has sign pattern (bit0 ? + : -, bit1 ? + : -, bit2 ? + : -)
/// on the object x, y, z half-extents.
std::array<Vec3, 8> box_corners(const OrientedBox& box);

/// Builds R = [a_x, a_z × a_x, a_z]. Throws NonUnitAxis / NonOrthogonalAxes
/// when the inputs are off by more than 1e-6.
RotationMatrix rotation_from_axes(const Vec3& a_x, const Vec3& a_z);

struct SymmetryCandidates {
  /// Set for axial symmetry: any rotation about z is equivalent, the x-axis
  /// carries no information. `poses` then holds only the input pose.
  bool x_unconstrained = false;
  std::vector<Pose> poses;
};

/// Each planar candidate rotates the pose about its own z-axis: R · Rz(angle).
SymmetryCandidates symmetry_candidates(const SymmetryClass& symmetry, const Pose& pose);

}  // namespace tpose
