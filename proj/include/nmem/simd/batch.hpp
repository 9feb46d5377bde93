#pragma once

#include <cstddef>
#include <cstdint>

// Batch arithmetic kernels behind a runtime-dispatched backend. These are the
// data-parallel inner loops of the fitter: Sobolev reproducing-kernel
// evaluation over vectors of time points, and assembly of the structured
// per-subject covariance V = a*11' + b*(1t' + t1') + c*tt' + d*K + e*I.
// A scalar reference implementation always exists; an AVX2+FMA variant is
// selected at startup when the CPU supports it. Both are equivalence-tested.

namespace nmem::simd {

enum class Backend { scalar, avx2 };

// Backend active for all batch calls. set_backend returns false (and leaves
// the active backend unchanged) if the requested one is unsupported here.
Backend active_backend();
bool set_backend(Backend b);
bool backend_supported(Backend b);
const char* backend_name(Backend b);

// out[j] = R1(s, t[j]) for j < n.
void r1_row(double s, const double* t, std::size_t n, double* out);

// out (row-major, ns x nt): out[i*nt + j] = R1(s[i], t[j]).
void r1_cross(const double* s, std::size_t ns, const double* t, std::size_t nt,
              double* out);

// Symmetric covariance fill, row-major n x n:
//   out[i,j] = v_inter + v_is*(t[i]+t[j]) + v_slope*t[i]*t[j]
//              + v_non*gram[i,j] + (i==j ? v_err : 0)
// gram may be null only when v_non == 0; it is never read in that case.
void cov_fill(const double* t, std::size_t n, double v_inter, double v_is,
              double v_slope, double v_non, double v_err, const double* gram,
              double* out);

// Number of scalar R1 evaluations performed through the batch entry points
// since the last reset. Used by tests to prove kernel-free degenerate paths.
std::uint64_t r1_eval_count();
void reset_r1_eval_count();

namespace detail {

struct Ops {
  void (*r1_row)(double, const double*, std::size_t, double*);
  void (*cov_fill)(const double*, std::size_t, double, double, double, double,
                   double, const double*, double*);
};

extern const Ops scalar_ops;
#ifdef NMEM_HAVE_AVX2_TU
extern const Ops avx2_ops;
#endif

}  // namespace detail

}  // namespace nmem::simd
