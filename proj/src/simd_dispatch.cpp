#include "nmem/simd/batch.hpp"

#include <atomic>

namespace nmem::simd {

namespace {

std::atomic<std::uint64_t> g_r1_evals{0};

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const detail::Ops* ops_for(Backend b) {
  switch (b) {
    case Backend::scalar:
      return &detail::scalar_ops;
    case Backend::avx2:
#ifdef NMEM_HAVE_AVX2_TU
      return &detail::avx2_ops;
#else
      return nullptr;
#endif
  }
  return nullptr;
}

Backend pick_default() {
#ifdef NMEM_HAVE_AVX2_TU
  if (cpu_has_avx2_fma()) return Backend::avx2;
#endif
  return Backend::scalar;
}

std::atomic<Backend> g_active{pick_default()};

}  // namespace

Backend active_backend() { return g_active.load(std::memory_order_relaxed); }

bool backend_supported(Backend b) {
  if (b == Backend::scalar) return true;
#ifdef NMEM_HAVE_AVX2_TU
  if (b == Backend::avx2) return cpu_has_avx2_fma();
#endif
  return false;
}

bool set_backend(Backend b) {
  if (!backend_supported(b)) return false;
  g_active.store(b, std::memory_order_relaxed);
  return true;
}

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
  }
  return "?";
}

std::uint64_t r1_eval_count() { return g_r1_evals.load(std::memory_order_relaxed); }
void reset_r1_eval_count() { g_r1_evals.store(0, std::memory_order_relaxed); }

void r1_row(double s, const double* t, std::size_t n, double* out) {
  g_r1_evals.fetch_add(n, std::memory_order_relaxed);
  ops_for(active_backend())->r1_row(s, t, n, out);
}

void r1_cross(const double* s, std::size_t ns, const double* t, std::size_t nt,
              double* out) {
  g_r1_evals.fetch_add(ns * nt, std::memory_order_relaxed);
  const detail::Ops* ops = ops_for(active_backend());
  for (std::size_t i = 0; i < ns; ++i) ops->r1_row(s[i], t, nt, out + i * nt);
}

void cov_fill(const double* t, std::size_t n, double v_inter, double v_is,
              double v_slope, double v_non, double v_err, const double* gram,
              double* out) {
  ops_for(active_backend())
      ->cov_fill(t, n, v_inter, v_is, v_slope, v_non, v_err, gram, out);
}

}  // namespace nmem::simd
