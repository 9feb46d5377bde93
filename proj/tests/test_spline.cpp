#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "nmem/covariance.hpp"
#include "nmem/spline.hpp"

namespace {

// One weighted generalized-least-squares problem with a dense verification
// route: explicit V^-1 per subject, no whitening, no accumulation.
struct GlsInstance {
  nmem::LongitudinalDataset data;
  nmem::SplineBasis basis;
  std::vector<nmem::GroupVariances> comps;
  std::vector<double> weights;
  double sigma2 = 0.41;

  Eigen::MatrixXd subject_x(Eigen::Index i) const {
    const Eigen::Index off = basis.subject_offsets[static_cast<std::size_t>(i)];
    const Eigen::Index n = data.subjects[static_cast<std::size_t>(i)].n();
    Eigen::MatrixXd x(n, 2 + basis.n_knots());
    x.leftCols(2) = basis.S.middleRows(off, n);
    x.rightCols(basis.n_knots()) = basis.R.middleRows(off, n);
    return x;
  }
};

GlsInstance make_instance(std::uint64_t seed, int m, int n_min, int n_max,
                          int knot_cap) {
  GlsInstance inst;
  inst.data = testutil::random_dataset(seed, m, n_min, n_max);
  inst.basis = nmem::build_basis(inst.data, knot_cap);
  std::mt19937_64 rng(seed ^ 0xabcdef);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < m; ++i) {
    nmem::GroupVariances g;
    g.v_inter = 0.1 + u(rng);
    g.v_slope = 0.1 + u(rng);
    g.cov_is = (u(rng) - 0.5) * 0.5 * std::sqrt(g.v_inter * g.v_slope);
    g.v_non = 0.2 + 2.0 * u(rng);
    inst.comps.push_back(g);
    inst.weights.push_back(0.05 + 0.9 * u(rng));
  }
  return inst;
}

// Feed the accumulating solver through the whitening route.
nmem::SplineSolver fill_solver(const GlsInstance& inst) {
  nmem::SplineSolver solver(inst.basis);
  for (Eigen::Index i = 0; i < inst.data.n_subjects(); ++i) {
    const auto& subj = inst.data.subjects[static_cast<std::size_t>(i)];
    const Eigen::MatrixXd gram = nmem::r1_gram(subj.times_scaled);
    nmem::SubjectCovariance cov(subj.times_scaled, &gram,
                                inst.comps[static_cast<std::size_t>(i)], inst.sigma2,
                                inst.weights[static_cast<std::size_t>(i)]);
    solver.add_block(cov.whiten(inst.subject_x(i)), cov.whiten(subj.responses));
  }
  return solver;
}

// Identity-weight fill, no whitening: responses straight into the solver.
nmem::SplineSolver fill_plain(const nmem::LongitudinalDataset& data,
                              const nmem::SplineBasis& basis) {
  nmem::SplineSolver solver(basis);
  Eigen::Index off = 0;
  for (const auto& subj : data.subjects) {
    Eigen::MatrixXd x(subj.n(), 2 + basis.n_knots());
    x.leftCols(2) = basis.S.middleRows(off, subj.n());
    x.rightCols(basis.n_knots()) = basis.R.middleRows(off, subj.n());
    solver.add_block(x, subj.responses);
    off += subj.n();
  }
  return solver;
}

// Dense route: normal equations with explicit inverses, stacked once.
Eigen::VectorXd dense_solution(const GlsInstance& inst, double lambda) {
  const Eigen::Index e = inst.basis.n_knots();
  const Eigen::Index dim = 2 + e;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
  Eigen::Index n_total = 0;
  for (Eigen::Index i = 0; i < inst.data.n_subjects(); ++i) {
    const auto& subj = inst.data.subjects[static_cast<std::size_t>(i)];
    const Eigen::MatrixXd gram = nmem::r1_gram(subj.times_scaled);
    const Eigen::MatrixXd v = nmem::assemble_v(
        subj.times_scaled, &gram, inst.comps[static_cast<std::size_t>(i)], inst.sigma2);
    const Eigen::MatrixXd vinv = v.inverse();
    const Eigen::MatrixXd x = inst.subject_x(i);
    const double w = inst.weights[static_cast<std::size_t>(i)];
    h += w * x.transpose() * vinv * x;
    b += w * x.transpose() * vinv * subj.responses;
    n_total += subj.n();
  }
  Eigen::MatrixXd k = h;
  k.bottomRightCorner(e, e) +=
      static_cast<double>(n_total) * lambda * inst.basis.Q;
  return k.ldlt().solve(b);
}

}  // namespace

TEST_CASE("whitened accumulation matches dense normal equations") {
  for (const std::uint64_t seed : {11u, 12u, 13u, 14u}) {
    const auto inst = make_instance(seed, 5, 3, 8, 8);
    auto solver = fill_solver(inst);
    // Penalty levels spanning the smoothing search range log10(N lambda) in
    // [0, 8]; far below it the two routes' exact solutions drift apart
    // through the unregularized kernel directions and the comparison stops
    // measuring the solver.
    for (const double nlambda : {1e2, 1e4, 1e6}) {
      const double lambda = nlambda / static_cast<double>(inst.data.total_obs);
      const nmem::SplineFit fit = solver.solve(lambda);
      Eigen::VectorXd theta(2 + fit.c.size());
      theta << fit.d, fit.c;
      const Eigen::VectorXd ref = dense_solution(inst, lambda);
      CHECK((theta - ref).norm() <= 1e-8 * std::max(1.0, ref.norm()));
    }
  }
}

TEST_CASE("huge penalty collapses the fit to a weighted line") {
  auto inst = make_instance(7, 6, 3, 6, 6);
  // Responses exactly on a line: the penalized fit must recover it.
  for (auto& subj : inst.data.subjects)
    subj.responses = 2.0 - 1.5 * subj.times_scaled.array();
  auto solver = fill_solver(inst);
  const double n = static_cast<double>(inst.data.total_obs);
  const nmem::SplineFit fit = solver.solve(1e12 / n);
  CHECK(fit.d[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(fit.d[1] == doctest::Approx(-1.5).epsilon(1e-8));
  CHECK(fit.c.cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("penalized solve with identity weights reproduces ridge algebra") {
  // Small handmade system where the normal equations can be solved directly.
  const auto data = testutil::random_dataset(29, 3, 3, 5);
  const auto basis = nmem::build_basis(data, 4);
  const Eigen::Index e = basis.n_knots();
  Eigen::MatrixXd x(basis.n_obs(), 2 + e);
  x << basis.S, basis.R;
  Eigen::VectorXd y(basis.n_obs());
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = gauss(rng);

  // Penalty at the middle of the smoothing search range; far below it the
  // system is singular up to rounding and a coefficient-level comparison
  // measures the factorization, not the algebra.
  const double lambda = 1e4 / static_cast<double>(basis.n_obs());
  const Eigen::VectorXd theta = nmem::solve_penalized(
      x.transpose() * x, x.transpose() * y, basis.Q, basis.n_obs(), lambda);

  Eigen::MatrixXd k = x.transpose() * x;
  k.bottomRightCorner(e, e) += static_cast<double>(basis.n_obs()) * lambda * basis.Q;
  const Eigen::VectorXd ref = k.inverse() * (x.transpose() * y);
  CHECK((theta - ref).norm() <= 1e-9 * std::max(1.0, ref.norm()));
}

TEST_CASE("evaluate_spline is the kernel expansion") {
  Eigen::VectorXd knots(3);
  knots << 0.0, 0.5, 1.0;
  Eigen::Vector2d d(0.7, -0.3);
  Eigen::VectorXd c(3);
  c << 1.0, -2.0, 0.5;
  Eigen::VectorXd t(4);
  t << 0.0, 0.25, 0.5, 1.0;
  const Eigen::VectorXd vals = nmem::evaluate_spline(knots, d, c, t);
  for (int j = 0; j < t.size(); ++j) {
    double want = d[0] + d[1] * t[j];
    for (int l = 0; l < 3; ++l) want += c[l] * nmem::kernel_r1(t[j], knots[l]);
    CHECK(vals[j] == doctest::Approx(want).epsilon(1e-13));
  }
}

TEST_CASE("gml log score matches a dense hat-matrix evaluation") {
  const auto inst = make_instance(42, 4, 4, 7, 6);
  auto solver = fill_solver(inst);

  // Dense route: stack the whitened blocks, form A = W (W'W + N l Q~)^-1 W',
  // and evaluate log z'(I-A)z - log det+(I-A)/(N-2) via an eigendecomposition.
  const Eigen::Index e = inst.basis.n_knots();
  const Eigen::Index dim = 2 + e;
  Eigen::Index n_total = inst.data.total_obs;
  Eigen::MatrixXd w_all(n_total, dim);
  Eigen::VectorXd z_all(n_total);
  Eigen::Index row = 0;
  for (Eigen::Index i = 0; i < inst.data.n_subjects(); ++i) {
    const auto& subj = inst.data.subjects[static_cast<std::size_t>(i)];
    const Eigen::MatrixXd gram = nmem::r1_gram(subj.times_scaled);
    nmem::SubjectCovariance cov(subj.times_scaled, &gram,
                                inst.comps[static_cast<std::size_t>(i)], inst.sigma2,
                                inst.weights[static_cast<std::size_t>(i)]);
    w_all.middleRows(row, subj.n()) = cov.whiten(inst.subject_x(i));
    z_all.segment(row, subj.n()) = cov.whiten(subj.responses);
    row += subj.n();
  }

  for (const double lambda : {1e-3, 1e-1, 10.0}) {
    Eigen::MatrixXd k = w_all.transpose() * w_all;
    k.bottomRightCorner(e, e) += static_cast<double>(n_total) * lambda * inst.basis.Q;
    const Eigen::MatrixXd a = w_all * k.inverse() * w_all.transpose();
    const Eigen::MatrixXd ima =
        Eigen::MatrixXd::Identity(n_total, n_total) - 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(ima);
    const Eigen::VectorXd ev = eig.eigenvalues();  // ascending
    // Exactly two structural zeros from the unpenalized {1, t} span.
    CHECK(std::abs(ev[0]) < 1e-8);
    CHECK(std::abs(ev[1]) < 1e-8);
    CHECK(ev[2] > 1e-8);
    double logdet_plus = 0.0;
    for (Eigen::Index j = 2; j < ev.size(); ++j) logdet_plus += std::log(ev[j]);
    const double quad = z_all.dot(ima * z_all);
    const double dense_score =
        std::log(quad) - logdet_plus / static_cast<double>(n_total - 2);

    CHECK(solver.gml_log_score(lambda) == doctest::Approx(dense_score).epsilon(1e-8));
  }
}

TEST_CASE("gml smoothing selection reacts to the signal shape") {
  // Pure noise: the criterion mostly pushes the smoothing to the top of the
  // search range (a straight line explains as much as any wiggle). A minority
  // of replicates stop at the rough end instead - ML-type selection puts
  // O(1) boundary mass there, and a fine-grid scan of the exact score shows
  // the same splits - so the assertion is a calibrated majority, not 20/20.
  // Measured for this construction: 18/20 at the top decile, median 7.84.
  std::vector<double> picks;
  const int reps = 20;
  for (int rep = 0; rep < reps; ++rep) {
    auto data = testutil::random_dataset(500 + rep, 200, 16, 31);
    std::mt19937_64 rng(900 + rep);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& subj : data.subjects)
      for (Eigen::Index j = 0; j < subj.n(); ++j) subj.responses[j] = gauss(rng);
    const auto basis = nmem::build_basis(data, 10);
    auto solver = fill_plain(data, basis);
    const nmem::SplineFit fit = solver.solve_gml();
    picks.push_back(std::log10(fit.lambda * static_cast<double>(data.total_obs)));
  }
  std::sort(picks.begin(), picks.end());
  int top = 0;
  for (const double g : picks)
    if (g >= 7.2) ++top;  // top decile of the [0, 8] search range
  CHECK(top >= 16);
  CHECK(picks[reps / 2] >= 7.2);  // median replicate in the top decile

  // Smooth curved signal in noise: selection drops to the rough end and the
  // fit tracks the curve. Curvature must be gentle on the scaled interval
  // for the search floor log10(N lambda) = 0 to admit it at this N.
  auto data = testutil::random_dataset(22, 100, 16, 31);
  std::mt19937_64 rng(3022);
  std::normal_distribution<double> gauss(0.0, 0.1);
  auto curve = [](double t) { return t * t; };
  for (auto& subj : data.subjects)
    for (Eigen::Index j = 0; j < subj.n(); ++j)
      subj.responses[j] = curve(subj.times_scaled[j]) + gauss(rng);
  const auto basis = nmem::build_basis(data, 32);
  auto solver = fill_plain(data, basis);
  const nmem::SplineFit fit = solver.solve_gml();
  CHECK(std::log10(fit.lambda * static_cast<double>(data.total_obs)) < 1.0);
  double mse = 0.0;
  for (const auto& subj : data.subjects) {
    const Eigen::VectorXd yhat =
        nmem::evaluate_spline(basis.knots, fit.d, fit.c, subj.times_scaled);
    for (Eigen::Index j = 0; j < subj.n(); ++j)
      mse += std::pow(yhat[j] - curve(subj.times_scaled[j]), 2);
  }
  mse /= static_cast<double>(data.total_obs);
  CHECK(mse < 1e-3);  // measured 2.4e-4; noise floor sigma^2 tr(A)/N ~ 1e-5
}

TEST_CASE("selected smoothing is a local minimum of the score") {
  // Probe 5% to each side of the selected value, skipping probes that would
  // leave the search range: a selection pinned at the floor only has to beat
  // its upward neighbor.
  auto check_local_min = [](nmem::SplineSolver& solver, const nmem::SplineFit& fit,
                            double n_obs) {
    const double here = solver.gml_log_score(fit.lambda);
    CHECK(fit.gml_log == doctest::Approx(here).epsilon(1e-12));
    const double g = std::log10(fit.lambda * n_obs);
    if (g + 0.022 <= 8.0) CHECK(here <= solver.gml_log_score(fit.lambda * 1.05) + 1e-10);
    if (g - 0.022 >= 0.0) CHECK(here <= solver.gml_log_score(fit.lambda / 1.05) + 1e-10);
  };

  // Weighted instance: the strong penalty floor wins, upward probe only.
  const auto inst = make_instance(213, 5, 5, 9, 8);
  auto solver = fill_solver(inst);
  const nmem::SplineFit fit = solver.solve_gml();
  check_local_min(solver, fit, static_cast<double>(inst.data.total_obs));

  // Pure-noise instance: selection lands in the interior near the smooth end
  // (measured log10(N lambda) = 7.83), so both probes are exercised.
  auto data = testutil::random_dataset(500, 200, 16, 31);
  std::mt19937_64 rng(900);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& subj : data.subjects)
    for (Eigen::Index j = 0; j < subj.n(); ++j) subj.responses[j] = gauss(rng);
  const auto basis = nmem::build_basis(data, 10);
  auto noise_solver = fill_plain(data, basis);
  const nmem::SplineFit noise_fit = noise_solver.solve_gml();
  const double g = std::log10(noise_fit.lambda * static_cast<double>(data.total_obs));
  CHECK(g > 0.5);
  CHECK(g < 7.98);
  check_local_min(noise_solver, noise_fit, static_cast<double>(data.total_obs));
}

TEST_CASE("degenerate one-point search grid pins the smoothing parameter") {
  const auto inst = make_instance(31, 3, 3, 5, 4);
  auto solver = fill_solver(inst);
  nmem::GmlConfig cfg;
  cfg.log10_nlambda_min = 3.0;
  cfg.log10_nlambda_max = 3.0;
  cfg.coarse_points = 1;
  const nmem::SplineFit fit = solver.solve_gml(cfg);
  const double want = std::pow(10.0, 3.0) / static_cast<double>(inst.data.total_obs);
  CHECK(fit.lambda == doctest::Approx(want).epsilon(1e-12));
  // And the coefficients agree with a direct solve at that value.
  const nmem::SplineFit direct = solver.solve(want);
  CHECK((fit.d - direct.d).cwiseAbs().maxCoeff() == 0.0);
  CHECK((fit.c - direct.c).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reset clears the accumulated system") {
  const auto inst = make_instance(55, 4, 3, 6, 6);
  auto solver = fill_solver(inst);
  const nmem::SplineFit before = solver.solve(0.01);
  solver.reset();
  CHECK(solver.n_rows() == 0);
  // Refill identically; the solution must be bit-for-bit reproducible.
  for (Eigen::Index i = 0; i < inst.data.n_subjects(); ++i) {
    const auto& subj = inst.data.subjects[static_cast<std::size_t>(i)];
    const Eigen::MatrixXd gram = nmem::r1_gram(subj.times_scaled);
    nmem::SubjectCovariance cov(subj.times_scaled, &gram,
                                inst.comps[static_cast<std::size_t>(i)], inst.sigma2,
                                inst.weights[static_cast<std::size_t>(i)]);
    solver.add_block(cov.whiten(inst.subject_x(i)), cov.whiten(subj.responses));
  }
  const nmem::SplineFit after = solver.solve(0.01);
  CHECK((before.d - after.d).cwiseAbs().maxCoeff() == 0.0);
  CHECK((before.c - after.c).cwiseAbs().maxCoeff() == 0.0);
}
