#include "tpose/pose_recovery.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <json.hpp>

namespace tpose {

AxisPrediction::AxisPrediction(const Vec3& ax, double cx, const Vec3& az, double cz) : c_x(cx), c_z(cz) {
  const double nx = ax.norm();
  const double nz = az.norm();
  if (!(nx > 0.0) || !(nz > 0.0) || !std::isfinite(nx) || !std::isfinite(nz))
    throw Error(ErrorCode::InvalidArgument, "axis predictions must be finite and non-zero");
  if (!(cx >= 0.0) || !(cz >= 0.0)) throw Error(ErrorCode::InvalidArgument, "confidences must be >= 0");
  a_x = ax / nx;
  a_z = az / nz;
}

OrthogonalAxes orthogonalize_axes(const AxisPrediction& pred) {
  const Vec3& ax = pred.a_x;
  const Vec3& az = pred.a_z;
  if (std::abs(ax.dot(az)) >= 1.0 - 1e-9) throw Error(ErrorCode::DegenerateAxes, "axes are (nearly) parallel");

  double cx = pred.c_x;
  double cz = pred.c_z;
  if (cx + cz <= 0.0) cx = cz = 0.5;

  // In-plane frame: e1 along a_x, e2 toward a_z. a_x sits at angle 0 and
  // a_z at angle θ.
  const Vec3 e1 = ax;
  const Vec3 e2 = (az - az.dot(e1) * e1).normalized();
  const double theta = std::atan2(az.dot(e2), az.dot(e1));
  const double excess = theta - std::numbers::pi / 2.0;

  OrthogonalAxes out;
  out.theta = theta;
  out.theta_x = cz / (cx + cz) * excess;
  out.theta_z = cx / (cx + cz) * excess;
  const double phi_z = theta - out.theta_z;
  out.a_x = std::cos(out.theta_x) * e1 + std::sin(out.theta_x) * e2;
  out.a_z = std::cos(phi_z) * e1 + std::sin(phi_z) * e2;
  return out;
}

Vec3 translation_prior(const GeneralizedPointCloud& cloud, const Intrinsics& K) {
  if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "translation prior of an empty cloud");
  Vec3 sum = Vec3::Zero();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& px = cloud.source_pixels[i];
    sum += backproject(K, px[0], px[1], cloud.depth(i));
  }
  return sum / static_cast<double>(cloud.size());
}

void CategoryPriors::set(const CategoryLabel& c, const Vec3& extents) {
  (void)Scale(extents);
  prior_[c.id()] = extents;
  set_[c.id()] = true;
}

const Vec3& CategoryPriors::get(const CategoryLabel& c) const {
  if (!set_[c.id()]) throw Error(ErrorCode::InvalidArgument, "no scale prior for " + std::string(c.name()));
  return prior_[c.id()];
}

std::string CategoryPriors::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (int i = 0; i < kNumCategories; ++i)
    if (set_[i]) j[std::string(category_names()[i])] = {prior_[i].x(), prior_[i].y(), prior_[i].z()};
  return j.dump(2);
}

CategoryPriors CategoryPriors::from_json(const std::string& text) {
  CategoryPriors p;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& [name, v] : j.items()) {
      if (!v.is_array() || v.size() != 3) throw Error(ErrorCode::SchemaMismatch, "prior '" + name + "' must be [sx, sy, sz]");
      p.set(CategoryLabel::from_name(name), Vec3(v[0].get<double>(), v[1].get<double>(), v[2].get<double>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("priors json: ") + e.what());
  }
  return p;
}

CategoryPriors CategoryPriors::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void CategoryPriors::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path);
  out << to_json() << '\n';
}

Scale apply_scale_residual(const CategoryPriors& priors, const CategoryLabel& category, const Vec3& residual) {
  return Scale(priors.get(category) + residual);
}

SimilarityFit umeyama_fit(std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size()) throw Error(ErrorCode::LengthMismatch, "source and target sizes differ");
  const std::size_t n = source.size();
  if (n < 3) throw Error(ErrorCode::DegenerateConfiguration, "need at least 3 correspondences");

  Vec3 mu_s = Vec3::Zero(), mu_t = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_s += source[i];
    mu_t += target[i];
  }
  mu_s /= static_cast<double>(n);
  mu_t /= static_cast<double>(n);

  Mat3 cov = Mat3::Zero();
  Mat3 scatter = Mat3::Zero();
  double var_s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 ds = source[i] - mu_s;
    cov += (target[i] - mu_t) * ds.transpose();
    scatter += ds * ds.transpose();
    var_s += ds.squaredNorm();
  }
  cov /= static_cast<double>(n);
  var_s /= static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  const Vec3 ev = eig.eigenvalues();  // ascending
  if (!(ev[2] > 0.0) || ev[1] <= 1e-12 * ev[2])
    throw Error(ErrorCode::DegenerateConfiguration, "source points are collinear or coincident");

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 S = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) S(2, 2) = -1.0;
  const Mat3 R = svd.matrixU() * S * svd.matrixV().transpose();
  const double c = svd.singularValues().dot(S.diagonal()) / var_s;

  SimilarityFit fit;
  fit.pose.rotation = RotationMatrix::nearest(R);
  fit.scale = c;
  fit.pose.translation = mu_t - c * (fit.pose.rotation * mu_s);
  return fit;
}

}  // namespace tpose
