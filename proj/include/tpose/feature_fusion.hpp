#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "tpose/camera.hpp"

namespace tpose {

struct PixelRect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  bool empty() const { return width <= 0 || height <= 0; }
  bool operator==(const PixelRect&) const = default;
};

/// Row-major RGB in [0, 1].
struct ColorImage {
  int width = 0;
  int height = 0;
  std::vector<Vec3> rgb;

  ColorImage() = default;
  ColorImage(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h, Vec3::Zero()) {}
  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
  const Vec3& at(int u, int v) const { return rgb[index(u, v)]; }
  Vec3& at(int u, int v) { return rgb[index(u, v)]; }
};

/// Per-pixel instance ids, 0 = background.
struct InstanceMap {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> ids;

  InstanceMap() = default;
  InstanceMap(int w, int h) : width(w), height(h), ids(static_cast<std::size_t>(w) * h, 0) {}
  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
  std::uint16_t at(int u, int v) const { return ids[index(u, v)]; }
};

/// One object's crop, resampled (nearest neighbor) to a square patch.
/// `source_u` / `source_v` give the full-image pixel every patch pixel was
/// taken from, so rays and backprojection stay exact after the rescale.
struct PatchBundle {
  PixelRect box;
  int size = 0;
  ColorImage rgb;
  DepthMap raw_depth;
  DepthMap completed_depth;  // filled by a DepthCompleter
  NormalMap normals;         // filled by a NormalEstimator
  RayMap rays;
  Mask instance_mask;
  Mask transparency_mask;
  std::vector<int> source_u;
  std::vector<int> source_v;
  CategoryLabel category{0};

  /// Pixels eligible for sampling: instance ∩ transparency.
  Mask sample_mask() const;
};

struct PatchSource {
  const Intrinsics* K = nullptr;
  const ColorImage* rgb = nullptr;
  const DepthMap* raw_depth = nullptr;
  const InstanceMap* instances = nullptr;
  const Mask* transparency = nullptr;
  /// Optional precomputed unit rays (ray_map); used when ray_exponent == 1.
  const RayMap* rays = nullptr;
};

/// Crops `box` out of the frame and rescales it to size × size. The ray
/// patch uses `ray_exponent` (see ray_direction). Completed depth and normals
/// are left empty.
PatchBundle extract_patch(const PatchSource& src, int instance_id, const PixelRect& box,
                          const CategoryLabel& category, int size, double ray_exponent = 1.0);

inline constexpr int kFeatureWidth = 10;

/// Channel layout of a feature row.
enum FeatureChannel : int { kRgb = 0, kDepth = 3, kNormal = 4, kRay = 7 };

struct FeaturePatch {
  int width = 0;
  int height = 0;
  std::vector<std::array<double, kFeatureWidth>> features;
  std::vector<int> source_u;
  std::vector<int> source_v;
};

/// Concatenates [rgb, completed depth, normal, ray] per pixel. Throws
/// ShapeMismatch when any patch differs from the bundle size.
FeaturePatch assemble_features(const PatchBundle& bundle);

struct GeneralizedPointCloud {
  std::vector<std::array<double, kFeatureWidth>> rows;
  /// Full-image (u, v) of every row.
  std::vector<std::array<int, 2>> source_pixels;
  /// Patch pixel index of every row.
  std::vector<std::uint32_t> patch_indices;

  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }
  double depth(std::size_t i) const { return rows[i][kDepth]; }
};

/// Draws `count` pixels of `mask` uniformly: without replacement (partial
/// Fisher-Yates) when the mask holds at least `count` pixels, with
/// replacement otherwise. Uses Rng(seed). Throws EmptyMask.
GeneralizedPointCloud sample_points(const FeaturePatch& patch, const Mask& mask, std::size_t count,
                                    std::uint64_t seed);

/// One row per point: u, v, then the ten features at full precision.
void write_cloud_csv(std::ostream& os, const GeneralizedPointCloud& cloud);
GeneralizedPointCloud read_cloud_csv(std::istream& is);

}  // namespace tpose
