#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "tpose/kernels/kernels.hpp"

namespace tpose::kernels {

namespace {

constexpr KernelTable kScalar{scalar::depth_error_sums, scalar::normal_dots, scalar::unit_ray_row};
#if defined(TPOSE_HAVE_AVX2)
constexpr KernelTable kAvx2{avx2::depth_error_sums, avx2::normal_dots, avx2::unit_ray_row};
#endif

Isa detect() {
  if (const char* env = std::getenv("TPOSE_ISA")) {
    const std::string want(env);
    if (want == "scalar") return Isa::Scalar;
    if (want == "avx2" && isa_supported(Isa::Avx2)) return Isa::Avx2;
  }
  return isa_supported(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return true;
    case Isa::Avx2:
#if defined(TPOSE_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Isa isa) {
#if defined(TPOSE_HAVE_AVX2)
  if (isa == Isa::Avx2) return kAvx2;
#endif
  (void)isa;
  return kScalar;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) throw std::invalid_argument("instruction set not supported: " + std::string(isa_name(isa)));
  current().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

}  // namespace tpose::kernels
