// Scalar reference backend. Kept deliberately plain: this is the ground truth
// the vector backends are equivalence-tested against.

#include <cmath>
#include <cstddef>

#include "nmem/simd/batch.hpp"

namespace nmem::simd::detail {

namespace {

inline double k2_scalar(double t) {
  const double a = t - 0.5;
  return 0.5 * (a * a - 1.0 / 12.0);
}

inline double k4_scalar(double t) {
  const double a = t - 0.5;
  const double a2 = a * a;
  return (a2 * a2 - 0.5 * a2 + 7.0 / 240.0) / 24.0;
}

void r1_row_scalar(double s, const double* t, std::size_t n, double* out) {
  const double k2s = k2_scalar(s);
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = k2s * k2_scalar(t[j]) - k4_scalar(std::fabs(s - t[j]));
  }
}

void cov_fill_scalar(const double* t, std::size_t n, double v_inter, double v_is,
                     double v_slope, double v_non, double v_err,
                     const double* gram, double* out) {
  // Lower triangle only, then mirror: the row-factored arithmetic rounds
  // (i,j) and (j,i) differently, and callers rely on exact symmetry.
  for (std::size_t i = 0; i < n; ++i) {
    const double a = v_inter + v_is * t[i];
    const double b = v_is + v_slope * t[i];
    double* row = out + i * n;
    if (v_non != 0.0) {
      const double* grow = gram + i * n;
      for (std::size_t j = 0; j <= i; ++j) row[j] = a + b * t[j] + v_non * grow[j];
    } else {
      for (std::size_t j = 0; j <= i; ++j) row[j] = a + b * t[j];
    }
    row[i] += v_err;
    for (std::size_t j = 0; j < i; ++j) out[j * n + i] = row[j];
  }
}

}  // namespace

const Ops scalar_ops = {&r1_row_scalar, &cov_fill_scalar};

}  // namespace nmem::simd::detail
