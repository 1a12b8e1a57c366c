// Built with -mavx2 -mfma -ffp-contract=off. Only reached through the
// dispatch table after a CPU check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>

#include "tpose/kernels/kernels.hpp"

namespace tpose::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline std::uint64_t hcount(__m256i v) {
  alignas(32) std::int64_t lanes[4];
  _mm256_store_si256(reinterpret_cast<__m256i*>(lanes), v);
  return static_cast<std::uint64_t>(lanes[0] + lanes[1] + lanes[2] + lanes[3]);
}

}  // namespace

DepthErrorSums depth_error_sums(const double* pred, const double* gt, const std::uint8_t* mask, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d sign = _mm256_set1_pd(-0.0);
  __m256d sq = zero, ab = zero, rel = zero;
  __m256i count = _mm256_setzero_si256();
  __m256i within[3] = {count, count, count};
  __m256d thr[3];
  for (int k = 0; k < 3; ++k) thr[k] = _mm256_set1_pd(kDeltaThresholds[k]);

  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    std::int32_t m4;
    std::copy_n(mask + i, 4, reinterpret_cast<std::uint8_t*>(&m4));
    const __m128i mb = _mm_cvtepu8_epi32(_mm_cvtsi32_si128(m4));
    const __m256d m_on = _mm256_castsi256_pd(
        _mm256_cmpgt_epi64(_mm256_cvtepi32_epi64(mb), _mm256_setzero_si256()));
    const __m256d p = _mm256_loadu_pd(pred + i);
    const __m256d g = _mm256_loadu_pd(gt + i);
    const __m256d valid = _mm256_and_pd(m_on, _mm256_cmp_pd(g, zero, _CMP_GT_OQ));
    if (_mm256_movemask_pd(valid) == 0) continue;

    const __m256d e = _mm256_sub_pd(p, g);
    const __m256d ae = _mm256_andnot_pd(sign, e);
    sq = _mm256_add_pd(sq, _mm256_and_pd(valid, _mm256_mul_pd(e, e)));
    ab = _mm256_add_pd(ab, _mm256_and_pd(valid, ae));
    rel = _mm256_add_pd(rel, _mm256_and_pd(valid, _mm256_div_pd(ae, g)));
    count = _mm256_sub_epi64(count, _mm256_castpd_si256(valid));

    const __m256d pos = _mm256_and_pd(valid, _mm256_cmp_pd(p, zero, _CMP_GT_OQ));
    const __m256d ratio = _mm256_max_pd(_mm256_div_pd(p, g), _mm256_div_pd(g, p));
    for (int k = 0; k < 3; ++k) {
      const __m256d ok = _mm256_and_pd(pos, _mm256_cmp_pd(ratio, thr[k], _CMP_LT_OQ));
      within[k] = _mm256_sub_epi64(within[k], _mm256_castpd_si256(ok));
    }
  }

  DepthErrorSums s;
  s.count = hcount(count);
  s.squared = hsum(sq);
  s.absolute = hsum(ab);
  s.relative = hsum(rel);
  for (int k = 0; k < 3; ++k) s.within[k] = hcount(within[k]);

  const DepthErrorSums tail = scalar::depth_error_sums(pred + i, gt + i, mask + i, n - i);
  s.count += tail.count;
  s.squared += tail.squared;
  s.absolute += tail.absolute;
  s.relative += tail.relative;
  for (int k = 0; k < 3; ++k) s.within[k] += tail.within[k];
  return s;
}

void normal_dots(const double* a, const double* b, double* out, std::size_t n) {
  const __m256i idx = _mm256_setr_epi64x(0, 3, 6, 9);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const double* pa = a + 3 * i;
    const double* pb = b + 3 * i;
    __m256d acc = _mm256_mul_pd(_mm256_i64gather_pd(pa, idx, 8), _mm256_i64gather_pd(pb, idx, 8));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_i64gather_pd(pa + 1, idx, 8), _mm256_i64gather_pd(pb + 1, idx, 8)));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_i64gather_pd(pa + 2, idx, 8), _mm256_i64gather_pd(pb + 2, idx, 8)));
    _mm256_storeu_pd(out + i, acc);
  }
  scalar::normal_dots(a + 3 * i, b + 3 * i, out + i, n - i);
}

void unit_ray_row(double fx, double fy, double cx, double cy, double v, int width, double* out) {
  const double y = (v - cy) / fy;
  const __m256d vy2 = _mm256_set1_pd(y * y);
  const __m256d vcx = _mm256_set1_pd(cx);
  const __m256d vfx = _mm256_set1_pd(fx);
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d step = _mm256_set1_pd(4.0);
  __m256d u = _mm256_setr_pd(0.0, 1.0, 2.0, 3.0);
  int k = 0;
  alignas(32) double xs[4], invs[4];
  for (; k + 4 <= width; k += 4) {
    const __m256d x = _mm256_div_pd(_mm256_sub_pd(u, vcx), vfx);
    const __m256d r2 = _mm256_add_pd(_mm256_add_pd(_mm256_mul_pd(x, x), vy2), one);
    const __m256d inv = _mm256_div_pd(one, _mm256_sqrt_pd(r2));
    _mm256_store_pd(xs, _mm256_mul_pd(x, inv));
    _mm256_store_pd(invs, inv);
    for (int j = 0; j < 4; ++j) {
      double* o = out + 3 * (k + j);
      o[0] = xs[j];
      o[1] = y * invs[j];
      o[2] = invs[j];
    }
    u = _mm256_add_pd(u, step);
  }
  for (; k < width; ++k) {
    const double x = (static_cast<double>(k) - cx) / fx;
    const double inv = 1.0 / std::sqrt(x * x + y * y + 1.0);
    out[3 * k + 0] = x * inv;
    out[3 * k + 1] = y * inv;
    out[3 * k + 2] = inv;
  }
}

}  // namespace tpose::kernels::avx2
