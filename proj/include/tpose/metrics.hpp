#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tpose/camera.hpp"

namespace tpose {

/// Exact 3D IoU of two oriented boxes. Box a is clipped against the six face
/// halfspaces of box b (polygon clipping per face plus a cap polygon on
/// every cutting plane); the intersection volume comes from the divergence
/// theorem over the clipped faces.
double oriented_iou(const OrientedBox& a, const OrientedBox& b);

/// Volume of the intersection of two oriented boxes.
double intersection_volume(const OrientedBox& a, const OrientedBox& b);

/// Geodesic angle between two rotations, degrees, via atan2 (accurate near
/// 0 and 180).
double geodesic_degrees(const RotationMatrix& a, const RotationMatrix& b);

/// None: geodesic angle. Axial: angle between the z-axes. Planar: minimum
/// geodesic angle over the symmetry candidates of `truth`.
double rotation_error(const RotationMatrix& estimate, const RotationMatrix& truth, const SymmetryClass& symmetry);

struct InstanceTruth {
  CategoryLabel category{0};
  Pose pose;
  Scale scale;
  SymmetryClass symmetry = SymmetryClass::none();
};

struct InstanceEstimate {
  Pose pose;
  Scale scale;
};

struct PoseMetricOptions {
  /// Symmetry-aware rotation error and IoU. When off, every instance is
  /// scored as if it had no symmetry.
  bool symmetry_aware = true;
};

enum PoseMetric : int {
  kIou25 = 0,
  kIou50,
  kIou75,
  k5deg2cm,
  k5deg5cm,
  k10deg5cm,
  k10deg10cm,
  k5deg,
  k10deg,
  k2cm,
  k5cm,
  k10cm,
  kNumPoseMetrics
};

const std::array<std::string_view, kNumPoseMetrics>& pose_metric_names();

struct PoseMetricRow {
  std::string name;
  std::size_t instances = 0;
  std::array<double, kNumPoseMetrics> percent{};  // each in [0, 100]
};

struct PoseMetricsReport {
  std::vector<PoseMetricRow> categories;  // categories with at least one instance
  PoseMetricRow mean;                     // mean over those categories

  std::string to_csv() const;
  std::string to_markdown() const;
  /// Throws InvalidArgument if a percentage leaves [0, 100] or a threshold
  /// family is not monotone.
  void check_invariants() const;
};

/// Per-instance scoring. An instance counts for X°Ycm iff rotation error < X
/// degrees and translation error < Y cm; decoupled metrics test one
/// condition; 3D_n tests IoU > n/100. Missing estimates fail everything.
/// Per-category percentages are averaged with equal category weight.
/// Throws LengthMismatch.
PoseMetricsReport pose_metrics(std::span<const std::optional<InstanceEstimate>> estimates,
                               std::span<const InstanceTruth> truths, const PoseMetricOptions& options = {});

/// IoU used by pose_metrics; with symmetry awareness an axial estimate is
/// first spun about its own z-axis to line up with the ground-truth x-axis
/// and planar candidates take the maximum.
double symmetric_iou(const InstanceEstimate& est, const InstanceTruth& truth, bool symmetry_aware);

struct DepthMetricsReport {
  double rmse = 0.0;
  double rel = 0.0;
  double mae = 0.0;
  std::array<double, 3> delta{};  // δ_1.05, δ_1.10, δ_1.25, percent
  std::size_t pixels = 0;

  std::string to_csv() const;
  std::string to_markdown() const;
};

/// Errors over masked pixels with valid ground truth; δ_n counts
/// max(pred/gt, gt/pred) < n (strict). Throws EmptyMask.
DepthMetricsReport depth_metrics(const DepthMap& pred, const DepthMap& gt, const Mask& mask);

/// Pools depth errors over many frames; report() equals depth_metrics over
/// the concatenation of everything added.
class DepthMetricsAccumulator {
 public:
  /// Throws ShapeMismatch.
  void add(const DepthMap& pred, const DepthMap& gt, const Mask& mask);
  void merge(const DepthMetricsAccumulator& other);
  /// Throws EmptyMask if no pixel was counted.
  DepthMetricsReport report() const;

 private:
  std::uint64_t count_ = 0;
  double squared_ = 0.0, absolute_ = 0.0, relative_ = 0.0;
  std::array<std::uint64_t, 3> within_{};
};

inline constexpr std::array<double, 3> kNormalThresholdsDeg = {11.25, 22.5, 30.0};

struct NormalMetricsReport {
  double rmse = 0.0;  // radians
  double mae = 0.0;   // radians
  std::array<double, 3> within{};  // percent below 11.25°, 22.5°, 30°
  std::size_t pixels = 0;

  std::string to_csv() const;
  std::string to_markdown() const;
};

/// Angular error arccos<pred, gt> (clamped) over region pixels where both
/// normals are valid. Throws EmptyRegion.
NormalMetricsReport normal_metrics(const NormalMap& pred, const NormalMap& gt, const Mask& region);

class NormalMetricsAccumulator {
 public:
  /// Throws ShapeMismatch.
  void add(const NormalMap& pred, const NormalMap& gt, const Mask& region);
  void merge(const NormalMetricsAccumulator& other);
  /// Throws EmptyRegion if no pixel was counted.
  NormalMetricsReport report() const;

 private:
  std::uint64_t count_ = 0;
  double sum_ = 0.0, sum_sq_ = 0.0;
  std::array<std::uint64_t, 3> within_{};
};

}  // namespace tpose
