// AVX2+FMA backend. This TU is built with -mavx2 -mfma; the dispatcher only
// routes here after a runtime CPUID check.

#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "nmem/simd/batch.hpp"

namespace nmem::simd::detail {

namespace {

constexpr double kThird12 = 1.0 / 12.0;
constexpr double kC240 = 7.0 / 240.0;
constexpr double kInv24 = 1.0 / 24.0;

inline double k2_scalar(double t) {
  const double a = t - 0.5;
  return 0.5 * (a * a - kThird12);
}

inline double k4_scalar(double t) {
  const double a = t - 0.5;
  const double a2 = a * a;
  return (a2 * a2 - 0.5 * a2 + kC240) * kInv24;
}

// R1(s, t_j) = k2(s) k2(t_j) - k4(|s - t_j|), four lanes at a time.
void r1_row_avx2(double s, const double* t, std::size_t n, double* out) {
  const __m256d vs = _mm256_set1_pd(s);
  const __m256d vk2s = _mm256_set1_pd(k2_scalar(s));
  const __m256d vhalf = _mm256_set1_pd(0.5);
  const __m256d vneg12 = _mm256_set1_pd(-kThird12);
  const __m256d vneghalf = _mm256_set1_pd(-0.5);
  const __m256d vc240 = _mm256_set1_pd(kC240);
  const __m256d vinv24 = _mm256_set1_pd(kInv24);
  const __m256d abs_mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));

  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const __m256d vt = _mm256_loadu_pd(t + j);
    // k2(t)
    const __m256d b = _mm256_sub_pd(vt, vhalf);
    const __m256d k2t = _mm256_mul_pd(vhalf, _mm256_fmadd_pd(b, b, vneg12));
    // k4(|s - t|)
    const __m256d u = _mm256_and_pd(_mm256_sub_pd(vs, vt), abs_mask);
    const __m256d a = _mm256_sub_pd(u, vhalf);
    const __m256d a2 = _mm256_mul_pd(a, a);
    const __m256d poly = _mm256_fmadd_pd(a2, a2, _mm256_fmadd_pd(a2, vneghalf, vc240));
    const __m256d k4u = _mm256_mul_pd(poly, vinv24);
    _mm256_storeu_pd(out + j, _mm256_fmsub_pd(vk2s, k2t, k4u));
  }
  const double k2s = k2_scalar(s);
  for (; j < n; ++j) out[j] = k2s * k2_scalar(t[j]) - k4_scalar(std::fabs(s - t[j]));
}

void cov_fill_avx2(const double* t, std::size_t n, double v_inter, double v_is,
                   double v_slope, double v_non, double v_err, const double* gram,
                   double* out) {
  // Lower triangle only, then mirror: the row-factored arithmetic rounds
  // (i,j) and (j,i) differently, and callers rely on exact symmetry.
  for (std::size_t i = 0; i < n; ++i) {
    const double a = v_inter + v_is * t[i];
    const double b = v_is + v_slope * t[i];
    const __m256d va = _mm256_set1_pd(a);
    const __m256d vb = _mm256_set1_pd(b);
    double* row = out + i * n;
    const std::size_t len = i + 1;
    std::size_t j = 0;
    if (v_non != 0.0) {
      const __m256d vnon = _mm256_set1_pd(v_non);
      const double* grow = gram + i * n;
      for (; j + 4 <= len; j += 4) {
        const __m256d vt = _mm256_loadu_pd(t + j);
        const __m256d vg = _mm256_loadu_pd(grow + j);
        _mm256_storeu_pd(row + j, _mm256_fmadd_pd(vnon, vg, _mm256_fmadd_pd(vb, vt, va)));
      }
      for (; j < len; ++j) row[j] = a + b * t[j] + v_non * grow[j];
    } else {
      for (; j + 4 <= len; j += 4) {
        const __m256d vt = _mm256_loadu_pd(t + j);
        _mm256_storeu_pd(row + j, _mm256_fmadd_pd(vb, vt, va));
      }
      for (; j < len; ++j) row[j] = a + b * t[j];
    }
    row[i] += v_err;
    for (std::size_t c = 0; c < i; ++c) out[c * n + i] = row[c];
  }
}

}  // namespace

const Ops avx2_ops = {&r1_row_avx2, &cov_fill_avx2};

}  // namespace nmem::simd::detail
