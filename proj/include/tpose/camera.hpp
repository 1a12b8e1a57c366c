#pragma once

#include <cstdint>
#include <vector>

#include "tpose/pose_core.hpp"

namespace tpose {

/// Pinhole intrinsics; pixel (u, v) has its center at integer coordinates.
struct Intrinsics {
  double fx = 500.0;
  double fy = 500.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  /// Throws InvalidArgument on fx, fy <= 0 or a principal point outside the image.
  void validate() const;
  bool contains(double u, double v) const { return u >= 0.0 && v >= 0.0 && u < width && v < height; }
  bool operator==(const Intrinsics&) const = default;
};

/// Row-major grid of z-depths in meters. A value of 0 (or anything not
/// strictly positive and finite) marks a missing reading.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> depth;

  DepthMap() = default;
  DepthMap(int w, int h, double fill = 0.0) : width(w), height(h), depth(static_cast<std::size_t>(w) * h, fill) {}

  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
  double at(int u, int v) const { return depth[index(u, v)]; }
  double& at(int u, int v) { return depth[index(u, v)]; }
  bool valid(int u, int v) const { return is_valid_depth(at(u, v)); }
  static bool is_valid_depth(double d) { return d > 0.0 && d < 1e30; }
  std::size_t size() const { return depth.size(); }
};

/// Row-major grid of unit vectors; the zero vector marks an invalid pixel.
struct NormalMap {
  int width = 0;
  int height = 0;
  std::vector<Vec3> normals;

  NormalMap() = default;
  NormalMap(int w, int h) : width(w), height(h), normals(static_cast<std::size_t>(w) * h, Vec3::Zero()) {}

  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
  const Vec3& at(int u, int v) const { return normals[index(u, v)]; }
  Vec3& at(int u, int v) { return normals[index(u, v)]; }
  bool valid(int u, int v) const { return !at(u, v).isZero(0.0); }
  std::size_t size() const { return normals.size(); }
  /// Interleaved xyz view for the kernels.
  const double* raw() const { return normals.empty() ? nullptr : normals.front().data(); }
};

/// Same layout as NormalMap; every entry is a unit ray.
using RayMap = NormalMap;

/// Binary mask, row-major, 0 or 1.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int w, int h, std::uint8_t fill = 0) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill) {}

  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
  bool at(int u, int v) const { return bits[index(u, v)] != 0; }
  void set(int u, int v, bool on) { bits[index(u, v)] = on ? 1 : 0; }
  std::size_t count() const;
  std::size_t size() const { return bits.size(); }
};

/// K⁻¹[u, v, 1]ᵀ divided by ‖K⁻¹[u, v, 1]ᵀ‖^exponent. exponent = 1 gives a
/// unit direction; exponent = 2 is the squared-norm variant kept for
/// comparison. Throws OutOfBounds outside the image.
Vec3 ray_direction(const Intrinsics& K, double u, double v, double exponent = 1.0);

/// K⁻¹[u, v, 1]ᵀ · depth; the returned z equals depth. Throws NonPositiveDepth.
Vec3 backproject(const Intrinsics& K, double u, double v, double depth);

/// Unit rays for every pixel of the image.
RayMap ray_map(const Intrinsics& K);

/// Surface normals from depth with a radius-1 central-difference stencil.
///
/// For pixel p the four neighbors are backprojected, t_u = P(u+1,v) - P(u-1,v),
/// t_v = P(u,v+1) - P(u,v-1) and n = normalize(t_u × t_v), flipped to face
/// the camera. Pixels whose own depth or any neighbor is invalid, image
/// borders included, come out invalid.
NormalMap normals_from_depth(const Intrinsics& K, const DepthMap& depth);

/// The stencil for one pixel; false if it cannot be evaluated.
bool normal_at(const Intrinsics& K, const DepthMap& depth, int u, int v, Vec3& normal);

}  // namespace tpose
