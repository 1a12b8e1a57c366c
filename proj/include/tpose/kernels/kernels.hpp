#pragma once

// Data-parallel inner loops with a scalar reference and SIMD variants.
// The variant is picked once at startup from the CPU's capabilities and can
// be pinned with set_active_isa() or the TPOSE_ISA environment variable
// ("scalar" or "avx2").

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace tpose::kernels {

enum class Isa { Scalar, Avx2 };

inline constexpr std::array<double, 3> kDeltaThresholds = {1.05, 1.10, 1.25};

/// Sums over entries with mask != 0 and gt > 0. `within[k]` counts entries
/// where pred > 0 and max(pred/gt, gt/pred) < kDeltaThresholds[k].
struct DepthErrorSums {
  std::uint64_t count = 0;
  double squared = 0.0;
  double absolute = 0.0;
  double relative = 0.0;
  std::array<std::uint64_t, 3> within{};
};

struct KernelTable {
  DepthErrorSums (*depth_error_sums)(const double* pred, const double* gt, const std::uint8_t* mask,
                                     std::size_t n);
  /// out[i] = <a[i], b[i]> for interleaved xyz triples.
  void (*normal_dots)(const double* a, const double* b, double* out, std::size_t n);
  /// Unit ray directions K⁻¹[u, v, 1]ᵀ / ‖·‖ for u = 0..width-1 of row v,
  /// written as interleaved xyz.
  void (*unit_ray_row)(double fx, double fy, double cx, double cy, double v, int width, double* out);
};

bool isa_supported(Isa isa);
const KernelTable& table(Isa isa);

Isa active_isa();
/// Throws std::invalid_argument if the CPU lacks the instruction set.
void set_active_isa(Isa isa);
std::string_view isa_name(Isa isa);

inline const KernelTable& active() { return table(active_isa()); }

namespace scalar {
DepthErrorSums depth_error_sums(const double* pred, const double* gt, const std::uint8_t* mask, std::size_t n);
void normal_dots(const double* a, const double* b, double* out, std::size_t n);
void unit_ray_row(double fx, double fy, double cx, double cy, double v, int width, double* out);
}  // namespace scalar

#if defined(TPOSE_HAVE_AVX2)
namespace avx2 {
DepthErrorSums depth_error_sums(const double* pred, const double* gt, const std::uint8_t* mask, std::size_t n);
void normal_dots(const double* a, const double* b, double* out, std::size_t n);
void unit_ray_row(double fx, double fy, double cx, double cy, double v, int width, double* out);
}  // namespace avx2
#endif

}  // namespace tpose::kernels
