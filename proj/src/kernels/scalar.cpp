#include <algorithm>
#include <cmath>

#include "tpose/kernels/kernels.hpp"

namespace tpose::kernels::scalar {

DepthErrorSums depth_error_sums(const double* pred, const double* gt, const std::uint8_t* mask, std::size_t n) {
  DepthErrorSums s;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i] || !(gt[i] > 0.0)) continue;
    const double e = pred[i] - gt[i];
    const double ae = std::abs(e);
    ++s.count;
    s.squared += e * e;
    s.absolute += ae;
    s.relative += ae / gt[i];
    if (pred[i] > 0.0) {
      const double ratio = std::max(pred[i] / gt[i], gt[i] / pred[i]);
      for (std::size_t k = 0; k < kDeltaThresholds.size(); ++k)
        if (ratio < kDeltaThresholds[k]) ++s.within[k];
    }
  }
  return s;
}

void normal_dots(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = a + 3 * i;
    const double* q = b + 3 * i;
    out[i] = p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
  }
}

void unit_ray_row(double fx, double fy, double cx, double cy, double v, int width, double* out) {
  const double y = (v - cy) / fy;
  for (int u = 0; u < width; ++u) {
    const double x = (static_cast<double>(u) - cx) / fx;
    const double inv = 1.0 / std::sqrt(x * x + y * y + 1.0);
    out[3 * u + 0] = x * inv;
    out[3 * u + 1] = y * inv;
    out[3 * u + 2] = inv;
  }
}

}  // namespace tpose::kernels::scalar
