#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "doctest.h"
#include "nmem/kernels.hpp"
#include "nmem/simd/batch.hpp"

using nmem::simd::Backend;

namespace {

// Restores whatever backend was active when the test started.
struct BackendGuard {
  Backend saved = nmem::simd::active_backend();
  ~BackendGuard() { nmem::simd::set_backend(saved); }
};

std::vector<double> random_times(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> t(n);
  for (auto& v : t) v = u(rng);
  return t;
}

}  // namespace

TEST_CASE("backend dispatch reports consistent support") {
  BackendGuard guard;
  CHECK(nmem::simd::backend_supported(Backend::scalar));
  CHECK(nmem::simd::set_backend(Backend::scalar));
  CHECK(nmem::simd::active_backend() == Backend::scalar);

  const bool have_avx2 = nmem::simd::backend_supported(Backend::avx2);
  CHECK(nmem::simd::set_backend(Backend::avx2) == have_avx2);
  if (!have_avx2) {
    // A rejected request must leave the active backend untouched.
    CHECK(nmem::simd::active_backend() == Backend::scalar);
  }
  CHECK(std::strlen(nmem::simd::backend_name(Backend::scalar)) > 0);
  CHECK(std::strlen(nmem::simd::backend_name(Backend::avx2)) > 0);
}

TEST_CASE("r1_row matches scalar kernel evaluation on every backend") {
  BackendGuard guard;
  const auto t = random_times(11, 37);
  for (const Backend b : {Backend::scalar, Backend::avx2}) {
    if (!nmem::simd::backend_supported(b)) continue;
    REQUIRE(nmem::simd::set_backend(b));
    for (const double s : {0.0, 0.31, 0.5, 1.0}) {
      std::vector<double> out(t.size());
      nmem::simd::r1_row(s, t.data(), t.size(), out.data());
      for (std::size_t j = 0; j < t.size(); ++j)
        CHECK(std::abs(out[j] - nmem::kernel_r1(s, t[j])) < 1e-14);
    }
  }
}

TEST_CASE("r1_cross matches elementwise evaluation on every backend") {
  BackendGuard guard;
  const auto s = random_times(21, 9);
  const auto t = random_times(22, 14);
  for (const Backend b : {Backend::scalar, Backend::avx2}) {
    if (!nmem::simd::backend_supported(b)) continue;
    REQUIRE(nmem::simd::set_backend(b));
    std::vector<double> out(s.size() * t.size());
    nmem::simd::r1_cross(s.data(), s.size(), t.data(), t.size(), out.data());
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = 0; j < t.size(); ++j)
        CHECK(std::abs(out[i * t.size() + j] - nmem::kernel_r1(s[i], t[j])) < 1e-14);
  }
}

TEST_CASE("cov_fill matches the structured formula on every backend") {
  BackendGuard guard;
  const std::size_t n = 17;
  const auto t = random_times(31, n);
  std::vector<double> gram(n * n);
  nmem::simd::set_backend(Backend::scalar);
  nmem::simd::r1_cross(t.data(), n, t.data(), n, gram.data());

  const double v_inter = 0.7, v_is = -0.12, v_slope = 0.45, v_non = 2.3, v_err = 0.41;
  for (const Backend b : {Backend::scalar, Backend::avx2}) {
    if (!nmem::simd::backend_supported(b)) continue;
    REQUIRE(nmem::simd::set_backend(b));
    std::vector<double> out(n * n);
    nmem::simd::cov_fill(t.data(), n, v_inter, v_is, v_slope, v_non, v_err,
                         gram.data(), out.data());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double want = v_inter + v_is * (t[i] + t[j]) + v_slope * t[i] * t[j] +
                            v_non * gram[i * n + j] + (i == j ? v_err : 0.0);
        CHECK(std::abs(out[i * n + j] - want) < 1e-13);
        CHECK(out[i * n + j] == out[j * n + i]);  // exact symmetry
      }
    }
  }
}

TEST_CASE("cov_fill with v_non == 0 never touches the gram pointer") {
  BackendGuard guard;
  const std::size_t n = 8;
  const auto t = random_times(41, n);
  for (const Backend b : {Backend::scalar, Backend::avx2}) {
    if (!nmem::simd::backend_supported(b)) continue;
    REQUIRE(nmem::simd::set_backend(b));
    std::vector<double> out(n * n, -1.0);
    nmem::simd::cov_fill(t.data(), n, 1.0, 0.2, 0.3, 0.0, 0.5, nullptr, out.data());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double want =
            1.0 + 0.2 * (t[i] + t[j]) + 0.3 * t[i] * t[j] + (i == j ? 0.5 : 0.0);
        CHECK(std::abs(out[i * n + j] - want) < 1e-13);
      }
  }
}

TEST_CASE("scalar and vector backends agree on uneven tail lengths") {
  BackendGuard guard;
  if (!nmem::simd::backend_supported(Backend::avx2)) return;
  // Lengths around the vector width exercise the remainder loops.
  for (const std::size_t n : {1u, 2u, 3u, 4u, 5u, 7u, 8u, 9u, 15u, 16u, 17u, 31u}) {
    const auto t = random_times(1000 + n, n);
    std::vector<double> a(n), b(n);
    nmem::simd::set_backend(Backend::scalar);
    nmem::simd::r1_row(0.37, t.data(), n, a.data());
    nmem::simd::set_backend(Backend::avx2);
    nmem::simd::r1_row(0.37, t.data(), n, b.data());
    for (std::size_t j = 0; j < n; ++j) CHECK(std::abs(a[j] - b[j]) < 1e-14);

    std::vector<double> ga(n * n), gb(n * n);
    std::vector<double> va(n * n), vb(n * n);
    nmem::simd::set_backend(Backend::scalar);
    nmem::simd::r1_cross(t.data(), n, t.data(), n, ga.data());
    nmem::simd::cov_fill(t.data(), n, 0.3, 0.05, 0.6, 1.7, 0.4, ga.data(), va.data());
    nmem::simd::set_backend(Backend::avx2);
    nmem::simd::r1_cross(t.data(), n, t.data(), n, gb.data());
    nmem::simd::cov_fill(t.data(), n, 0.3, 0.05, 0.6, 1.7, 0.4, gb.data(), vb.data());
    for (std::size_t j = 0; j < n * n; ++j) {
      CHECK(std::abs(ga[j] - gb[j]) < 1e-14);
      CHECK(std::abs(va[j] - vb[j]) < 1e-13);
    }
  }
}

TEST_CASE("kernel evaluation counter tracks batch calls") {
  BackendGuard guard;
  nmem::simd::reset_r1_eval_count();
  CHECK(nmem::simd::r1_eval_count() == 0);

  const auto t = random_times(51, 13);
  std::vector<double> out(13);
  nmem::simd::r1_row(0.5, t.data(), t.size(), out.data());
  CHECK(nmem::simd::r1_eval_count() >= 13);

  nmem::simd::reset_r1_eval_count();
  std::vector<double> cross(5 * 13);
  nmem::simd::r1_cross(t.data(), 5, t.data(), 13, cross.data());
  CHECK(nmem::simd::r1_eval_count() >= 5 * 13);

  // cov_fill consumes a precomputed gram; it must not evaluate the kernel.
  std::vector<double> gram(13 * 13);
  nmem::simd::r1_cross(t.data(), 13, t.data(), 13, gram.data());
  nmem::simd::reset_r1_eval_count();
  std::vector<double> v(13 * 13);
  nmem::simd::cov_fill(t.data(), 13, 1.0, 0.0, 1.0, 2.0, 0.1, gram.data(), v.data());
  CHECK(nmem::simd::r1_eval_count() == 0);
}
