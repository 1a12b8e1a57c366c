#include "tpose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "tpose/kernels/kernels.hpp"

namespace tpose {

namespace {

using Polygon = std::vector<Vec3>;
using Polytope = std::vector<Polygon>;

struct Plane {
  Vec3 n;  // outward; inside is n·x <= d
  double d;
};

Polytope box_polytope(const OrientedBox& box) {
  const auto c = box_corners(box);
  // Faces by fixed axis bit and side; corners listed around the face.
  static constexpr int kFaces[6][4] = {
      {0, 2, 6, 4}, {1, 3, 7, 5},  // x-, x+
      {0, 1, 5, 4}, {2, 3, 7, 6},  // y-, y+
      {0, 1, 3, 2}, {4, 5, 7, 6},  // z-, z+
  };
  const Vec3 center = box.pose.translation;
  Polytope faces;
  for (const auto& f : kFaces) {
    Polygon poly = {c[f[0]], c[f[1]], c[f[2]], c[f[3]]};
    const Vec3 normal = (poly[1] - poly[0]).cross(poly[2] - poly[0]);
    if (normal.dot(poly[0] - center) < 0.0) std::reverse(poly.begin(), poly.end());
    faces.push_back(std::move(poly));
  }
  return faces;
}

std::array<Plane, 6> box_planes(const OrientedBox& box) {
  std::array<Plane, 6> planes;
  const Vec3 half = box.scale.extents() * 0.5;
  for (int axis = 0; axis < 3; ++axis) {
    const Vec3 n = box.pose.rotation.matrix().col(axis);
    const double c = n.dot(box.pose.translation);
    planes[2 * axis] = {n, c + half[axis]};
    planes[2 * axis + 1] = {-n, -c + half[axis]};
  }
  return planes;
}

void push_unique(Polygon& pts, const Vec3& p, double tol) {
  for (const Vec3& q : pts)
    if ((q - p).squaredNorm() <= tol * tol) return;
  pts.push_back(p);
}

Polytope clip(const Polytope& poly, const Plane& plane, double eps) {
  double max_d = -std::numeric_limits<double>::infinity();
  double min_d = std::numeric_limits<double>::infinity();
  for (const auto& face : poly)
    for (const Vec3& p : face) {
      const double d = plane.n.dot(p) - plane.d;
      max_d = std::max(max_d, d);
      min_d = std::min(min_d, d);
    }
  if (max_d <= eps) return poly;       // entirely inside
  if (min_d >= -eps) return {};        // nothing strictly inside

  Polytope out;
  Polygon cap;
  for (const auto& face : poly) {
    Polygon kept;
    const std::size_t m = face.size();
    for (std::size_t i = 0; i < m; ++i) {
      const Vec3& a = face[i];
      const Vec3& b = face[(i + 1) % m];
      const double da = plane.n.dot(a) - plane.d;
      const double db = plane.n.dot(b) - plane.d;
      const bool a_in = da <= eps;
      const bool b_in = db <= eps;
      if (a_in) {
        kept.push_back(a);
        if (std::abs(da) <= eps) push_unique(cap, a, eps);
      }
      if (a_in != b_in && std::abs(da - db) > 0.0) {
        const double t = da / (da - db);
        const Vec3 p = a + t * (b - a);
        if ((p - a).norm() > eps && (p - b).norm() > eps) kept.push_back(p);
        else if (!a_in) kept.push_back(b_in ? b : a);
        push_unique(cap, p, eps);
      }
    }
    Polygon clean;
    for (const Vec3& p : kept)
      if (clean.empty() || (clean.back() - p).norm() > eps) clean.push_back(p);
    while (clean.size() > 1 && (clean.front() - clean.back()).norm() <= eps) clean.pop_back();
    if (clean.size() >= 3) out.push_back(std::move(clean));
  }

  if (cap.size() >= 3) {
    Vec3 centroid = Vec3::Zero();
    for (const Vec3& p : cap) centroid += p;
    centroid /= static_cast<double>(cap.size());
    const Vec3 e1 = (plane.n.unitOrthogonal()).normalized();
    const Vec3 e2 = plane.n.cross(e1);
    std::sort(cap.begin(), cap.end(), [&](const Vec3& p, const Vec3& q) {
      return std::atan2(e2.dot(p - centroid), e1.dot(p - centroid)) <
             std::atan2(e2.dot(q - centroid), e1.dot(q - centroid));
    });
    out.push_back(std::move(cap));
  }
  return out;
}

double polytope_volume(const Polytope& poly) {
  if (poly.empty()) return 0.0;
  const Vec3 o = poly.front().front();
  double v = 0.0;
  for (const auto& face : poly)
    for (std::size_t i = 1; i + 1 < face.size(); ++i)
      v += (face[0] - o).dot((face[i] - o).cross(face[i + 1] - o));
  return std::max(0.0, v / 6.0);
}

double length_scale(const OrientedBox& a, const OrientedBox& b) {
  return std::max({a.scale.extents().maxCoeff(), b.scale.extents().maxCoeff(), a.pose.translation.cwiseAbs().maxCoeff(),
                   b.pose.translation.cwiseAbs().maxCoeff(), 1e-300});
}

std::string fmt(double x, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, x);
  return buf;
}

}  // namespace

double intersection_volume(const OrientedBox& a, const OrientedBox& b) {
  const double eps = 1e-12 * length_scale(a, b);
  Polytope poly = box_polytope(a);
  for (const Plane& plane : box_planes(b)) {
    poly = clip(poly, plane, eps);
    if (poly.empty()) return 0.0;
  }
  return std::min({polytope_volume(poly), a.scale.volume(), b.scale.volume()});
}

double oriented_iou(const OrientedBox& a, const OrientedBox& b) {
  const double inter = intersection_volume(a, b);
  const double uni = a.scale.volume() + b.scale.volume() - inter;
  if (!(uni > 0.0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double geodesic_degrees(const RotationMatrix& a, const RotationMatrix& b) {
  const Mat3 m = a.matrix() * b.matrix().transpose();
  const Vec3 axis(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
  const double s = 0.5 * axis.norm();
  const double c = 0.5 * (m.trace() - 1.0);
  return std::atan2(s, c) * 180.0 / std::numbers::pi;
}

double rotation_error(const RotationMatrix& estimate, const RotationMatrix& truth, const SymmetryClass& symmetry) {
  switch (symmetry.kind()) {
    case SymmetryKind::None:
      return geodesic_degrees(estimate, truth);
    case SymmetryKind::Axial: {
      const Vec3 a = estimate.z_axis();
      const Vec3 b = truth.z_axis();
      return std::atan2(a.cross(b).norm(), a.dot(b)) * 180.0 / std::numbers::pi;
    }
    case SymmetryKind::Planar: {
      Pose p;
      p.rotation = truth;
      double best = std::numeric_limits<double>::infinity();
      for (const Pose& cand : symmetry_candidates(symmetry, p).poses)
        best = std::min(best, geodesic_degrees(estimate, cand.rotation));
      return best;
    }
  }
  return 0.0;
}

const std::array<std::string_view, kNumPoseMetrics>& pose_metric_names() {
  static const std::array<std::string_view, kNumPoseMetrics> names = {
      "3D25", "3D50", "3D75", "5deg2cm", "5deg5cm", "10deg5cm", "10deg10cm", "5deg", "10deg", "2cm", "5cm", "10cm"};
  return names;
}

double symmetric_iou(const InstanceEstimate& est, const InstanceTruth& truth, bool symmetry_aware) {
  const OrientedBox gt_box{truth.pose, truth.scale};
  OrientedBox est_box{est.pose, est.scale};
  if (!symmetry_aware || truth.symmetry.kind() == SymmetryKind::None) return oriented_iou(est_box, gt_box);
  if (truth.symmetry.kind() == SymmetryKind::Axial) {
    const Vec3 z = est.pose.rotation.z_axis();
    const Vec3 gx = truth.pose.rotation.x_axis();
    const Vec3 x = gx - gx.dot(z) * z;
    if (x.norm() > 1e-9) {
      const Vec3 xn = x.normalized();
      Mat3 m;
      m.col(0) = xn;
      m.col(1) = z.cross(xn);
      m.col(2) = z;
      est_box.pose.rotation = RotationMatrix::nearest(m);
    }
    return oriented_iou(est_box, gt_box);
  }
  double best = 0.0;
  for (const Pose& cand : symmetry_candidates(truth.symmetry, truth.pose).poses)
    best = std::max(best, oriented_iou(est_box, OrientedBox{cand, truth.scale}));
  return best;
}

PoseMetricsReport pose_metrics(std::span<const std::optional<InstanceEstimate>> estimates,
                               std::span<const InstanceTruth> truths, const PoseMetricOptions& options) {
  if (estimates.size() != truths.size())
    throw Error(ErrorCode::LengthMismatch, "estimates and ground truth differ in length");

  std::array<std::array<std::size_t, kNumPoseMetrics>, kNumCategories> hits{};
  std::array<std::size_t, kNumCategories> counts{};
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const InstanceTruth& gt = truths[i];
    const int c = gt.category.id();
    ++counts[c];
    if (!estimates[i]) continue;
    const InstanceEstimate& est = *estimates[i];
    const SymmetryClass sym = options.symmetry_aware ? gt.symmetry : SymmetryClass::none();
    const double deg = rotation_error(est.pose.rotation, gt.pose.rotation, sym);
    const double cm = (est.pose.translation - gt.pose.translation).norm() * 100.0;
    const double iou = symmetric_iou(est, gt, options.symmetry_aware);

    std::array<bool, kNumPoseMetrics> ok{};
    ok[kIou25] = iou > 0.25;
    ok[kIou50] = iou > 0.50;
    ok[kIou75] = iou > 0.75;
    ok[k5deg2cm] = deg < 5.0 && cm < 2.0;
    ok[k5deg5cm] = deg < 5.0 && cm < 5.0;
    ok[k10deg5cm] = deg < 10.0 && cm < 5.0;
    ok[k10deg10cm] = deg < 10.0 && cm < 10.0;
    ok[k5deg] = deg < 5.0;
    ok[k10deg] = deg < 10.0;
    ok[k2cm] = cm < 2.0;
    ok[k5cm] = cm < 5.0;
    ok[k10cm] = cm < 10.0;
    for (int m = 0; m < kNumPoseMetrics; ++m) hits[c][m] += ok[m] ? 1 : 0;
  }

  PoseMetricsReport report;
  report.mean.name = "mean";
  for (int c = 0; c < kNumCategories; ++c) {
    if (counts[c] == 0) continue;
    PoseMetricRow row;
    row.name = std::string(category_names()[c]);
    row.instances = counts[c];
    for (int m = 0; m < kNumPoseMetrics; ++m)
      row.percent[m] = 100.0 * static_cast<double>(hits[c][m]) / static_cast<double>(counts[c]);
    report.mean.instances += counts[c];
    for (int m = 0; m < kNumPoseMetrics; ++m) report.mean.percent[m] += row.percent[m];
    report.categories.push_back(std::move(row));
  }
  if (!report.categories.empty())
    for (double& v : report.mean.percent) v /= static_cast<double>(report.categories.size());
  report.check_invariants();
  return report;
}

void PoseMetricsReport::check_invariants() const {
  auto check_row = [](const PoseMetricRow& r) {
    for (double v : r.percent)
      if (!(v >= 0.0 && v <= 100.0)) throw Error(ErrorCode::InvalidArgument, "percentage out of range in " + r.name);
    const auto& p = r.percent;
    const bool mono = p[kIou25] >= p[kIou50] && p[kIou50] >= p[kIou75] && p[k5deg2cm] <= p[k5deg5cm] &&
                      p[k5deg5cm] <= p[k10deg5cm] && p[k10deg5cm] <= p[k10deg10cm] && p[k5deg] <= p[k10deg] &&
                      p[k2cm] <= p[k5cm] && p[k5cm] <= p[k10cm];
    if (!mono) throw Error(ErrorCode::InvalidArgument, "non-monotone thresholds in " + r.name);
  };
  for (const auto& r : categories) check_row(r);
  check_row(mean);
}

std::string PoseMetricsReport::to_csv() const {
  std::ostringstream os;
  os << "category,instances";
  for (auto n : pose_metric_names()) os << ',' << n;
  os << '\n';
  auto row = [&os](const PoseMetricRow& r) {
    os << r.name << ',' << r.instances;
    for (double v : r.percent) os << ',' << fmt(v, 4);
    os << '\n';
  };
  for (const auto& r : categories) row(r);
  row(mean);
  return os.str();
}

std::string PoseMetricsReport::to_markdown() const {
  static const std::array<const char*, kNumPoseMetrics> heads = {
      "3D<sub>25</sub>", "3D<sub>50</sub>", "3D<sub>75</sub>", "5°2cm", "5°5cm", "10°5cm",
      "10°10cm",         "5°",              "10°",             "2cm",   "5cm",   "10cm"};
  std::ostringstream os;
  os << "| Category | N |";
  for (auto h : heads) os << ' ' << h << " |";
  os << "\n|---|---|";
  for (std::size_t i = 0; i < heads.size(); ++i) os << "---|";
  os << '\n';
  auto row = [&os](const PoseMetricRow& r, bool bold) {
    os << "| " << (bold ? "**" + r.name + "**" : r.name) << " | " << r.instances << " |";
    for (double v : r.percent) os << ' ' << fmt(v, 1) << " |";
    os << '\n';
  };
  for (const auto& r : categories) row(r, false);
  row(mean, true);
  return os.str();
}

void DepthMetricsAccumulator::add(const DepthMap& pred, const DepthMap& gt, const Mask& mask) {
  if (pred.width != gt.width || pred.height != gt.height || mask.width != gt.width || mask.height != gt.height)
    throw Error(ErrorCode::ShapeMismatch, "depth metric inputs differ in size");
  const auto s = kernels::active().depth_error_sums(pred.depth.data(), gt.depth.data(), mask.bits.data(), gt.size());
  count_ += s.count;
  squared_ += s.squared;
  absolute_ += s.absolute;
  relative_ += s.relative;
  for (int k = 0; k < 3; ++k) within_[k] += s.within[k];
}

void DepthMetricsAccumulator::merge(const DepthMetricsAccumulator& o) {
  count_ += o.count_;
  squared_ += o.squared_;
  absolute_ += o.absolute_;
  relative_ += o.relative_;
  for (int k = 0; k < 3; ++k) within_[k] += o.within_[k];
}

DepthMetricsReport DepthMetricsAccumulator::report() const {
  if (count_ == 0) throw Error(ErrorCode::EmptyMask, "no masked pixel with valid ground truth");
  const double n = static_cast<double>(count_);
  DepthMetricsReport r;
  r.pixels = count_;
  r.rmse = std::sqrt(squared_ / n);
  r.mae = absolute_ / n;
  r.rel = relative_ / n;
  for (int k = 0; k < 3; ++k) r.delta[k] = 100.0 * static_cast<double>(within_[k]) / n;
  return r;
}

DepthMetricsReport depth_metrics(const DepthMap& pred, const DepthMap& gt, const Mask& mask) {
  DepthMetricsAccumulator acc;
  acc.add(pred, gt, mask);
  return acc.report();
}

std::string DepthMetricsReport::to_csv() const {
  std::ostringstream os;
  os << "pixels,rmse,rel,mae,delta_1.05,delta_1.10,delta_1.25\n"
     << pixels << ',' << fmt(rmse, 6) << ',' << fmt(rel, 6) << ',' << fmt(mae, 6) << ',' << fmt(delta[0], 4) << ','
     << fmt(delta[1], 4) << ',' << fmt(delta[2], 4) << '\n';
  return os.str();
}

std::string DepthMetricsReport::to_markdown() const {
  std::ostringstream os;
  os << "| Metric | RMSE | REL | MAE | δ<sub>1.05</sub> | δ<sub>1.10</sub> | δ<sub>1.25</sub> |\n"
     << "|---|---|---|---|---|---|---|\n"
     << "| Value | " << fmt(rmse, 3) << " | " << fmt(rel, 3) << " | " << fmt(mae, 3) << " | " << fmt(delta[0], 2)
     << " | " << fmt(delta[1], 2) << " | " << fmt(delta[2], 2) << " |\n";
  return os.str();
}

void NormalMetricsAccumulator::add(const NormalMap& pred, const NormalMap& gt, const Mask& region) {
  if (pred.width != gt.width || pred.height != gt.height || region.width != gt.width || region.height != gt.height)
    throw Error(ErrorCode::ShapeMismatch, "normal metric inputs differ in size");
  std::vector<double> dots(gt.size());
  kernels::active().normal_dots(pred.raw(), gt.raw(), dots.data(), gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!region.bits[i] || pred.normals[i].isZero(0.0) || gt.normals[i].isZero(0.0)) continue;
    const double angle = std::acos(std::clamp(dots[i], -1.0, 1.0));
    ++count_;
    sum_ += angle;
    sum_sq_ += angle * angle;
    const double deg = angle * 180.0 / std::numbers::pi;
    for (int k = 0; k < 3; ++k)
      if (deg < kNormalThresholdsDeg[k]) ++within_[k];
  }
}

void NormalMetricsAccumulator::merge(const NormalMetricsAccumulator& o) {
  count_ += o.count_;
  sum_ += o.sum_;
  sum_sq_ += o.sum_sq_;
  for (int k = 0; k < 3; ++k) within_[k] += o.within_[k];
}

NormalMetricsReport NormalMetricsAccumulator::report() const {
  if (count_ == 0) throw Error(ErrorCode::EmptyRegion, "no valid normals in the region");
  const double n = static_cast<double>(count_);
  NormalMetricsReport r;
  r.pixels = count_;
  r.mae = sum_ / n;
  r.rmse = std::sqrt(sum_sq_ / n);
  for (int k = 0; k < 3; ++k) r.within[k] = 100.0 * static_cast<double>(within_[k]) / n;
  return r;
}

NormalMetricsReport normal_metrics(const NormalMap& pred, const NormalMap& gt, const Mask& region) {
  NormalMetricsAccumulator acc;
  acc.add(pred, gt, region);
  return acc.report();
}

std::string NormalMetricsReport::to_csv() const {
  std::ostringstream os;
  os << "pixels,rmse_rad,mae_rad,within_11.25,within_22.5,within_30\n"
     << pixels << ',' << fmt(rmse, 6) << ',' << fmt(mae, 6) << ',' << fmt(within[0], 4) << ',' << fmt(within[1], 4)
     << ',' << fmt(within[2], 4) << '\n';
  return os.str();
}

std::string NormalMetricsReport::to_markdown() const {
  std::ostringstream os;
  os << "| Metric | RMSE | MAE | 11.25° | 22.5° | 30° |\n"
     << "|---|---|---|---|---|---|\n"
     << "| Value | " << fmt(rmse, 4) << " | " << fmt(mae, 4) << " | " << fmt(within[0], 2) << " | "
     << fmt(within[1], 2) << " | " << fmt(within[2], 2) << " |\n";
  return os.str();
}

}  // namespace tpose
