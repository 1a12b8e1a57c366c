#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tpose/camera.hpp"

namespace tpose {

/// Loss weights. The pose weights default to {λ_rx, λ_rz, λ_ra, λ_t, λ_s,
/// λ_conx, λ_conz} = {8, 8, 4, 8, 8, 1, 1} × 1e-4.
struct LossConfig {
  double smooth_weight = 0.001;
  double scale_weight = 8e-4;
  double translation_weight = 8e-4;
  double axis_x_weight = 8e-4;
  double axis_z_weight = 8e-4;
  double angular_weight = 4e-4;
  double conf_x_weight = 1e-4;
  double conf_z_weight = 1e-4;
  /// Confidence target is exp(alpha · ‖â - a*‖₂); must be negative.
  double alpha = -5.0;

  /// Throws InvalidArgument on negative weights or alpha >= 0.
  void validate() const;
  LossConfig scaled(double k) const;
};

struct VectorLoss {
  double value = 0.0;
  Vec3 grad = Vec3::Zero();
};

/// |t̂ - t*|₁ with subgradient sign(t̂ - t*), 0 at ties.
VectorLoss translation_loss(const Vec3& pred, const Vec3& gt);

/// |ŝ - s*|₁, same subgradient convention.
VectorLoss scale_loss(const Vec3& pred, const Vec3& gt);

/// |â - a*|₁ + 1 - <â, a*>; gradient sign(â - a*) - a*.
VectorLoss axis_loss(const Vec3& pred, const Vec3& gt);

struct AngularLoss {
  double value = 0.0;
  Vec3 grad_x = Vec3::Zero();
  Vec3 grad_z = Vec3::Zero();
};

/// Signed <â_x, â_z>.
AngularLoss angular_loss(const Vec3& axis_x, const Vec3& axis_z);

struct ConfidenceLoss {
  double value = 0.0;
  double grad_conf = 0.0;
  Vec3 grad_axis = Vec3::Zero();
};

/// |c - exp(alpha · ‖â - a*‖₂)|.
ConfidenceLoss confidence_loss(double conf, const Vec3& pred, const Vec3& gt, double alpha);

struct DepthLoss {
  double total = 0.0;   // depth_term + smooth_weight · smooth_term
  double depth_term = 0.0;   // L_d
  double smooth_term = 0.0;  // L_s_normal
  std::size_t depth_pixels = 0;
  std::size_t smooth_pixels = 0;
  /// d total / d pred, same layout as the depth map.
  std::vector<double> gradient;
};

/// Depth-completion loss over `mask`. L_d is the mean squared error over
/// masked pixels with valid ground truth; L_s is the mean of
/// 1 - <N(pred), N(gt)> over masked pixels where both stencil normals exist
/// (0 if there are none). The gradient of L_s flows through the normal
/// stencil into the four neighbors of each pixel. Throws EmptyMask.
DepthLoss depth_completion_loss(const DepthMap& pred, const DepthMap& gt, const Mask& mask, const Intrinsics& K,
                                double smooth_weight);

struct NormalLoss {
  double value = 0.0;
  std::size_t pixels = 0;
  /// Gradient w.r.t. the predicted normals, projected on the tangent plane of
  /// each prediction (zero outside the region).
  std::vector<Vec3> gradient;
};

/// Mean 1 - cos<Ŝ, S*> over region pixels where both normals are valid.
/// Throws EmptyRegion.
NormalLoss normal_loss(const NormalMap& pred, const NormalMap& gt, const Mask& region);

/// Decoder outputs after the priors have been added; axes already unit length.
struct PosePrediction {
  Vec3 translation = Vec3::Zero();
  Vec3 axis_x = Vec3::UnitX();
  double conf_x = 1.0;
  Vec3 axis_z = Vec3::UnitZ();
  double conf_z = 1.0;
  Vec3 scale = Vec3::Ones();
};

struct PoseTarget {
  Pose pose;
  Vec3 scale = Vec3::Ones();
  SymmetryClass symmetry = SymmetryClass::none();
};

struct PoseLossGradient {
  Vec3 translation = Vec3::Zero();
  Vec3 axis_x = Vec3::Zero();
  double conf_x = 0.0;
  Vec3 axis_z = Vec3::Zero();
  double conf_z = 0.0;
  Vec3 scale = Vec3::Zero();
};

struct LossReport {
  // Stage-one terms; zero unless attach_depth_loss() was called.
  double depth = 0.0;
  double normal_smooth = 0.0;

  double translation = 0.0;
  double axis_x = 0.0;
  double axis_z = 0.0;
  double angular = 0.0;
  double conf_x = 0.0;
  double conf_z = 0.0;
  double scale = 0.0;
  double total = 0.0;

  bool x_ignored = false;     // axial symmetry
  std::size_t x_candidate = 0;  // planar candidate picked by the minimum

  std::optional<PoseLossGradient> gradient;

  std::string to_json() const;
};

/// Weighted pose loss. Axial targets drop the x-axis and x-confidence terms.
/// Planar targets evaluate the x-axis loss for every candidate x-axis and keep
/// the minimum; the same candidate feeds the x-confidence loss.
LossReport total_pose_loss(const PosePrediction& pred, const PoseTarget& target, const LossConfig& config,
                           bool with_gradient = true);

/// Adds depth_term + smooth_weight · smooth_term to the report.
void attach_depth_loss(LossReport& report, const DepthLoss& depth, const LossConfig& config);

}  // namespace tpose
