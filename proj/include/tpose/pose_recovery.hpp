#pragma once

#include <array>
#include <map>
#include <span>
#include <string>

#include "tpose/camera.hpp"
#include "tpose/feature_fusion.hpp"

namespace tpose {

/// Raw decoder axes with confidences. Axes are renormalized on construction.
struct AxisPrediction {
  Vec3 a_x = Vec3::UnitX();
  double c_x = 0.5;
  Vec3 a_z = Vec3::UnitZ();
  double c_z = 0.5;

  AxisPrediction() = default;
  /// Throws InvalidArgument on zero-length or non-finite axes, or negative
  /// confidences.
  AxisPrediction(const Vec3& ax, double cx, const Vec3& az, double cz);
};

struct OrthogonalAxes {
  Vec3 a_x;
  Vec3 a_z;
  double theta = 0.0;    // angle between the input axes
  double theta_x = 0.0;  // rotation applied to a_x, toward a_z when positive
  double theta_z = 0.0;  // rotation applied to a_z, toward a_x when positive
};

/// Confidence-weighted orthogonalization. With θ the angle between the axes,
/// θ_x = c_z/(c_x+c_z)·(θ - π/2) and θ_z = c_x/(c_x+c_z)·(θ - π/2); both axes
/// turn inside their common plane so the result is exactly perpendicular.
/// The more confident axis moves less. c_x = c_z = 0 is treated as an even
/// split. Throws DegenerateAxes when |<a_x, a_z>| >= 1 - 1e-9.
OrthogonalAxes orthogonalize_axes(const AxisPrediction& pred);

/// Mean of the backprojected sample points, summed in row order.
/// Throws EmptyCloud.
Vec3 translation_prior(const GeneralizedPointCloud& cloud, const Intrinsics& K);

inline Vec3 apply_translation_residual(const Vec3& prior, const Vec3& residual) { return prior + residual; }

class CategoryPriors {
 public:
  CategoryPriors() = default;
  void set(const CategoryLabel& c, const Vec3& extents);
  bool has(const CategoryLabel& c) const { return set_[c.id()]; }
  /// Throws InvalidArgument if the category has no prior.
  const Vec3& get(const CategoryLabel& c) const;

  /// {"bottle": [sx, sy, sz], ...}
  std::string to_json() const;
  static CategoryPriors from_json(const std::string& text);
  static CategoryPriors load(const std::string& path);
  void save(const std::string& path) const;

 private:
  std::array<Vec3, kNumCategories> prior_{};
  std::array<bool, kNumCategories> set_{};
};

/// prior + residual; throws NonPositiveScale if a component ends up <= 0.
Scale apply_scale_residual(const CategoryPriors& priors, const CategoryLabel& category, const Vec3& residual);

struct SimilarityFit {
  Pose pose;
  double scale = 1.0;
};

/// Least-squares similarity transform target ≈ s·R·source + t (Umeyama),
/// with the reflection case corrected so R is proper. Throws LengthMismatch
/// and DegenerateConfiguration (fewer than 3 points or collinear source).
SimilarityFit umeyama_fit(std::span<const Vec3> source, std::span<const Vec3> target);

}  // namespace tpose
