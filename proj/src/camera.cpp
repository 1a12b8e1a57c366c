#include "tpose/camera.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tpose/kernels/kernels.hpp"

namespace tpose {

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "image size must be positive");
  if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height))
    throw Error(ErrorCode::InvalidArgument, "principal point outside the image");
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

Vec3 ray_direction(const Intrinsics& K, double u, double v, double exponent) {
  if (!K.contains(u, v)) {
    std::ostringstream os;
    os << "pixel (" << u << ", " << v << ") outside " << K.width << "x" << K.height;
    throw Error(ErrorCode::OutOfBounds, os.str());
  }
  const Vec3 r((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
  return r / std::pow(r.norm(), exponent);
}

Vec3 backproject(const Intrinsics& K, double u, double v, double depth) {
  if (!(depth > 0.0)) throw Error(ErrorCode::NonPositiveDepth, "depth must be positive");
  return Vec3((u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth);
}

RayMap ray_map(const Intrinsics& K) {
  RayMap rays(K.width, K.height);
  const auto& kt = kernels::active();
  for (int v = 0; v < K.height; ++v)
    kt.unit_ray_row(K.fx, K.fy, K.cx, K.cy, static_cast<double>(v), K.width, rays.at(0, v).data());
  return rays;
}

bool normal_at(const Intrinsics& K, const DepthMap& depth, int u, int v, Vec3& normal) {
  if (u < 1 || v < 1 || u + 1 >= depth.width || v + 1 >= depth.height) return false;
  if (!depth.valid(u, v) || !depth.valid(u - 1, v) || !depth.valid(u + 1, v) || !depth.valid(u, v - 1) ||
      !depth.valid(u, v + 1))
    return false;
  const Vec3 tu = backproject(K, u + 1, v, depth.at(u + 1, v)) - backproject(K, u - 1, v, depth.at(u - 1, v));
  const Vec3 tv = backproject(K, u, v + 1, depth.at(u, v + 1)) - backproject(K, u, v - 1, depth.at(u, v - 1));
  const Vec3 c = tu.cross(tv);
  const double len = c.norm();
  if (!(len > 0.0) || !std::isfinite(len)) return false;
  normal = c / len;
  const Vec3 ray((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
  if (normal.dot(ray) > 0.0) normal = -normal;
  return true;
}

NormalMap normals_from_depth(const Intrinsics& K, const DepthMap& depth) {
  NormalMap out(depth.width, depth.height);
  for (int v = 1; v + 1 < depth.height; ++v)
    for (int u = 1; u + 1 < depth.width; ++u) {
      Vec3 n;
      if (normal_at(K, depth, u, v, n)) out.at(u, v) = n;
    }
  return out;
}

}  // namespace tpose
