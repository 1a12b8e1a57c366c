#include "tpose/pose_core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/SVD>

namespace tpose {

RotationMatrix RotationMatrix::from_matrix(const Mat3& m, double tol) {
  if (!m.allFinite()) throw Error(ErrorCode::InvalidArgument, "rotation has non-finite entries");
  const double ortho = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = m.determinant();
  if (ortho > tol || std::abs(det - 1.0) > tol) {
    std::ostringstream os;
    os << "not a rotation (orthogonality error " << ortho << ", det " << det << ")";
    throw Error(ErrorCode::InvalidArgument, os.str());
  }
  return RotationMatrix(m);
}

RotationMatrix RotationMatrix::nearest(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2, 2) = -1.0;
  return RotationMatrix(svd.matrixU() * d * svd.matrixV().transpose());
}

RotationMatrix RotationMatrix::about_axis(const Vec3& axis, double angle) {
  return RotationMatrix(Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix());
}

Mat4 Pose::homogeneous() const {
  Mat4 h = Mat4::Identity();
  h.topLeftCorner<3, 3>() = rotation.matrix();
  h.topRightCorner<3, 1>() = translation;
  return h;
}

Pose Pose::from_homogeneous(const Mat4& m, double tol) {
  Pose p;
  p.rotation = RotationMatrix::from_matrix(m.topLeftCorner<3, 3>(), tol);
  p.translation = m.topRightCorner<3, 1>();
  if (!p.translation.allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite translation");
  return p;
}

Scale::Scale(const Vec3& extents) : e_(extents) {
  for (int i = 0; i < 3; ++i) {
    if (!(e_[i] > 0.0) || !std::isfinite(e_[i])) {
      std::ostringstream os;
      os << "scale component " << i << " = " << e_[i];
      throw Error(ErrorCode::NonPositiveScale, os.str());
    }
  }
}

SymmetryClass SymmetryClass::planar(std::vector<double> angles) {
  if (angles.empty()) throw Error(ErrorCode::InvalidArgument, "planar symmetry needs candidates");
  if (std::find(angles.begin(), angles.end(), 0.0) == angles.end())
    throw Error(ErrorCode::InvalidArgument, "planar candidates must contain 0");
  return SymmetryClass(SymmetryKind::Planar, std::move(angles));
}

std::string SymmetryClass::to_string() const {
  switch (kind_) {
    case SymmetryKind::None: return "none";
    case SymmetryKind::Axial: return "axial";
    case SymmetryKind::Planar: break;
  }
  std::ostringstream os;
  os.precision(17);
  os << "planar:";
  for (std::size_t i = 0; i < angles_.size(); ++i) os << (i ? "," : "") << angles_[i];
  return os.str();
}

SymmetryClass SymmetryClass::parse(std::string_view text) {
  if (text == "none") return none();
  if (text == "axial") return axial();
  if (text == "planar") return planar({0.0, std::numbers::pi});
  if (text.starts_with("planar:")) {
    std::vector<double> angles;
    std::string rest(text.substr(7));
    std::stringstream ss(rest);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        angles.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw Error(ErrorCode::SchemaMismatch, "bad planar angle '" + item + "'");
      }
    }
    return planar(std::move(angles));
  }
  throw Error(ErrorCode::SchemaMismatch, "unknown symmetry '" + std::string(text) + "'");
}

const std::array<std::string_view, kNumCategories>& category_names() {
  static const std::array<std::string_view, kNumCategories> names = {
      "bottle", "bowl", "container", "tableware", "water cup", "wine cup"};
  return names;
}

CategoryLabel::CategoryLabel(int id) : id_(id) {
  if (id < 0 || id >= kNumCategories)
    throw Error(ErrorCode::InvalidArgument, "category id out of range: " + std::to_string(id));
}

CategoryLabel CategoryLabel::from_name(std::string_view name) {
  const auto& names = category_names();
  for (int i = 0; i < kNumCategories; ++i)
    if (names[i] == name) return CategoryLabel(i);
  throw Error(ErrorCode::SchemaMismatch, "unknown category '" + std::string(name) + "'");
}

std::string_view CategoryLabel::name() const { return category_names()[id_]; }

std::array<double, kNumCategories> CategoryLabel::one_hot() const {
  std::array<double, kNumCategories> h{};
  h[id_] = 1.0;
  return h;
}

SymmetryClass default_symmetry(const CategoryLabel& category) {
  const auto name = category.name();
  if (name == "container" || name == "tableware") return SymmetryClass::planar({0.0, std::numbers::pi});
  return SymmetryClass::axial();
}

std::array<Vec3, 8> box_corners(const OrientedBox& box) {
  const Vec3 half = box.scale.extents() * 0.5;
  std::array<Vec3, 8> corners;
  for (int i = 0; i < 8; ++i) {
    const Vec3 local((i & 1) ? half.x() : -half.x(), (i & 2) ? half.y() : -half.y(),
                     (i & 4) ? half.z() : -half.z());
    corners[i] = box.pose.apply(local);
  }
  return corners;
}

RotationMatrix rotation_from_axes(const Vec3& a_x, const Vec3& a_z) {
  constexpr double kTol = 1e-6;
  if (std::abs(a_x.norm() - 1.0) > kTol || std::abs(a_z.norm() - 1.0) > kTol)
    throw Error(ErrorCode::NonUnitAxis, "axes must be unit length");
  if (std::abs(a_x.dot(a_z)) > kTol) throw Error(ErrorCode::NonOrthogonalAxes, "axes must be orthogonal");
  // Inputs are only orthonormal to 1e-6; Gram-Schmidt keeps a_x and fixes z.
  const Vec3 x = a_x.normalized();
  const Vec3 z = (a_z - a_z.dot(x) * x).normalized();
  Mat3 m;
  m.col(0) = x;
  m.col(1) = z.cross(x);
  m.col(2) = z;
  return RotationMatrix::from_matrix(m);
}

SymmetryCandidates symmetry_candidates(const SymmetryClass& symmetry, const Pose& pose) {
  SymmetryCandidates out;
  switch (symmetry.kind()) {
    case SymmetryKind::None:
      out.poses.push_back(pose);
      break;
    case SymmetryKind::Axial:
      out.x_unconstrained = true;
      out.poses.push_back(pose);
      break;
    case SymmetryKind::Planar:
      for (double angle : symmetry.angles()) {
        Pose p = pose;
        if (angle != 0.0) p.rotation = pose.rotation * RotationMatrix::about_z(angle);
        out.poses.push_back(p);
      }
      break;
  }
  return out;
}

}  // namespace tpose
