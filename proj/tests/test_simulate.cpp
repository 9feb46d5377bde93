#include <cmath>
#include <set>

#include "doctest.h"
#include "nmem/simd/batch.hpp"
#include "nmem/simulate.hpp"

namespace {

double binomial_band(double p, double m) { return 4.0 * std::sqrt(p * (1.0 - p) / m); }

}  // namespace

TEST_CASE("simulation is deterministic in the seed") {
  const auto design = nmem::default_design(20, 77, true);
  const auto a = nmem::simulate(design);
  const auto b = nmem::simulate(design);
  REQUIRE(a.data.n_subjects() == b.data.n_subjects());
  for (Eigen::Index i = 0; i < a.data.n_subjects(); ++i) {
    const auto& u = a.data.subjects[static_cast<std::size_t>(i)];
    const auto& v = b.data.subjects[static_cast<std::size_t>(i)];
    CHECK((u.responses - v.responses).cwiseAbs().maxCoeff() == 0.0);
    CHECK((u.times_raw - v.times_raw).cwiseAbs().maxCoeff() == 0.0);
    CHECK((u.covariates - v.covariates).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(a.truth.labels == b.truth.labels);

  auto design2 = design;
  design2.seed = 78;
  const auto c = nmem::simulate(design2);
  CHECK((a.data.subjects[0].responses - c.data.subjects[0].responses)
            .cwiseAbs()
            .maxCoeff() > 0.0);
}

TEST_CASE("trajectory layout follows the design") {
  const auto design = nmem::default_design(40, 5, false);
  const auto sim = nmem::simulate(design);
  const auto& data = sim.data;

  // The design window is forced even if no draw hits the extremes.
  CHECK(data.scaling.t_min == -30.0);
  CHECK(data.scaling.t_max == 0.0);
  CHECK(data.covariate_names == nmem::sim_covariate_names());
  CHECK(data.subjects[0].id == "s000001");

  for (const auto& subj : data.subjects) {
    CHECK(subj.n() >= 16);
    CHECK(subj.n() <= 31);
    std::set<double> seen;
    for (Eigen::Index j = 0; j < subj.n(); ++j) {
      const double day = subj.times_raw[j];
      CHECK(day == std::floor(day));  // integer days
      CHECK(day >= -30.0);
      CHECK(day <= 0.0);
      seen.insert(day);
    }
    CHECK(seen.size() == static_cast<std::size_t>(subj.n()));  // no repeats
  }
}

TEST_CASE("covariate marginals match their design frequencies") {
  auto design = nmem::default_design(4000, 11, false);
  const Eigen::MatrixXd x = nmem::generate_covariates(design);
  REQUIRE(x.rows() == 4000);
  REQUIRE(x.cols() == 10);
  const double m = 4000.0;

  CHECK(std::abs(x.col(0).mean() - 0.55) < binomial_band(0.55, m));   // male
  CHECK(std::abs(x.col(1).mean() - 0.45) < binomial_band(0.45, m));   // white
  CHECK(std::abs(x.col(2).mean() - 0.15) < binomial_band(0.15, m));   // hispanic
  CHECK(std::abs(x.col(3).mean() - 0.60) < binomial_band(0.60, m));   // diabetes
  CHECK(std::abs(x.col(4).mean() - 0.80) < binomial_band(0.80, m));   // hypertension
  CHECK(std::abs(x.col(8).mean() - 0.20) < binomial_band(0.20, m));   // access avg
  CHECK(std::abs(x.col(9).mean() - 0.20) < binomial_band(0.20, m));   // access cvcath
  // The two access indicators never fire together.
  CHECK((x.col(8).array() * x.col(9).array()).maxCoeff() == 0.0);

  // Exponential vintage: mean 1/rate, all positive.
  CHECK(x.col(5).minCoeff() > 0.0);
  CHECK(std::abs(x.col(5).mean() - 1.0 / 0.22) < 4.0 * (1.0 / 0.22) / std::sqrt(m));
  // Gamma bmi: mean shape/rate = 31.
  CHECK(x.col(6).minCoeff() > 0.0);
  CHECK(std::abs(x.col(6).mean() - 31.0) < 4.0 * (31.0 / std::sqrt(15.5)) / std::sqrt(m));
  // Normal age: mean 62, sd 14.
  CHECK(std::abs(x.col(7).mean() - 62.0) < 4.0 * 14.0 / std::sqrt(m));
  const double age_sd = std::sqrt(
      (x.col(7).array() - x.col(7).mean()).square().sum() / (m - 1.0));
  CHECK(std::abs(age_sd - 14.0) < 1.0);
}

TEST_CASE("label draws saturate with an extreme logistic intercept") {
  auto design = nmem::default_design(200, 13, false);
  const Eigen::MatrixXd x = nmem::generate_covariates(design);

  design.beta0 = 40.0;
  design.beta.setZero();
  auto labels = nmem::generate_labels(design, x);
  for (const int l : labels) CHECK(l == 0);  // probability ~1 of group 1

  design.beta0 = -40.0;
  labels = nmem::generate_labels(design, x);
  for (const int l : labels) CHECK(l == 1);
}

TEST_CASE("near-zero noise reproduces the tabulated curves") {
  auto design = nmem::default_design(30, 17, false);
  design.sigma2 = 1e-12;
  design.zeta[0] = nmem::GroupVariances{};  // no random effects at all
  design.zeta[1] = nmem::GroupVariances{};
  std::vector<int> labels;
  const auto data = nmem::simulate_dataset(design, &labels, nullptr);
  for (Eigen::Index i = 0; i < data.n_subjects(); ++i) {
    const auto& subj = data.subjects[static_cast<std::size_t>(i)];
    const auto& table = design.curve_table[static_cast<std::size_t>(
        labels[static_cast<std::size_t>(i)])];
    for (Eigen::Index j = 0; j < subj.n(); ++j) {
      const auto idx = static_cast<Eigen::Index>(
          std::lround(subj.times_scaled[j] * static_cast<double>(table.size() - 1)));
      CHECK(std::abs(subj.responses[j] - table[idx]) < 1e-5);
    }
  }
}

TEST_CASE("degenerate smooth variance never evaluates the kernel") {
  auto design = nmem::default_design(25, 19, false);  // both v_non zero
  nmem::simd::reset_r1_eval_count();
  std::vector<int> labels;
  const auto data = nmem::simulate_dataset(design, &labels, nullptr);
  CHECK(nmem::simd::r1_eval_count() == 0);
  CHECK(data.n_subjects() == 25);

  // The smooth setting must go through the kernel.
  const auto smooth = nmem::default_design(25, 19, true);
  nmem::simd::reset_r1_eval_count();
  nmem::simulate_dataset(smooth, nullptr, nullptr);
  CHECK(nmem::simd::r1_eval_count() > 0);
}

TEST_CASE("simulation truth carries the design parameters and curves") {
  const auto design = nmem::default_design(35, 23, true);
  const auto sim = nmem::simulate(design);
  const auto& truth = sim.truth;

  REQUIRE(truth.subject_ids.size() == 35);
  CHECK(truth.subject_ids[0] == "s000001");
  CHECK(truth.subject_ids[34] == "s000035");
  CHECK(truth.covariate_names == nmem::sim_covariate_names());
  REQUIRE(truth.labels.size() == 35);
  for (const int l : truth.labels) CHECK((l == 0 || l == 1));
  REQUIRE(truth.prior1.size() == 35);
  for (Eigen::Index i = 0; i < 35; ++i) {
    CHECK(truth.prior1[i] > 0.0);
    CHECK(truth.prior1[i] < 1.0);
  }
  CHECK(truth.beta0 == design.beta0);
  CHECK(truth.beta[1] == -0.3788);
  CHECK(truth.beta[7] == -0.0103);
  CHECK(truth.sigma2 == design.sigma2);
  CHECK(truth.zeta[0].v_non == 14.5);

  REQUIRE(truth.curve_grid.size() == nmem::kCurveGridSize);
  CHECK(truth.curve_grid[0] == 0.0);
  CHECK(truth.curve_grid[100] == 1.0);
  REQUIRE(truth.curves.rows() == nmem::kCurveGridSize);
  // Group 2 is flat zero; group 1 ramps from 0 to about 1.5.
  CHECK(truth.curves.col(1).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(truth.curves(0, 0) == doctest::Approx(0.0).epsilon(1e-4));
  CHECK(truth.curves(100, 0) == doctest::Approx(1.5).epsilon(1e-3));
  // Monotone nondecreasing ramp (up to interpolation wiggle).
  for (Eigen::Index g = 1; g < truth.curves.rows(); ++g)
    CHECK(truth.curves(g, 0) >= truth.curves(g - 1, 0) - 1e-3);
}

TEST_CASE("curve interpolation reproduces the table at its own grid") {
  const auto design = nmem::default_design(10, 29, false);
  const Eigen::Index rows = design.curve_table[0].size();
  const Eigen::VectorXd grid =
      Eigen::VectorXd::LinSpaced(rows, 0.0, 1.0);
  const Eigen::MatrixXd curves = nmem::design_curves(design, grid);
  for (Eigen::Index j = 0; j < rows; ++j) {
    CHECK(std::abs(curves(j, 0) - design.curve_table[0][j]) < 1e-4);
    CHECK(std::abs(curves(j, 1) - design.curve_table[1][j]) < 1e-4);
  }
}

TEST_CASE("invalid designs are rejected") {
  auto ok = nmem::default_design(10, 1, false);

  auto bad = ok;
  bad.m = 0;
  CHECK_THROWS_AS(nmem::simulate_dataset(bad), nmem::Error);

  bad = ok;
  bad.sigma2 = 0.0;
  CHECK_THROWS_AS(nmem::simulate_dataset(bad), nmem::Error);

  bad = ok;
  bad.n_max = 40;  // wider than the day window allows distinct draws
  CHECK_THROWS_AS(nmem::simulate_dataset(bad), nmem::Error);

  bad = ok;
  bad.beta = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(nmem::simulate_dataset(bad), nmem::Error);

  bad = ok;
  bad.curve_table[0] = Eigen::VectorXd::Zero(1);
  CHECK_THROWS_AS(nmem::simulate_dataset(bad), nmem::Error);

  bad = ok;
  bad.zeta[0].v_inter = -0.5;
  CHECK_THROWS_AS(nmem::simulate_dataset(bad), nmem::Error);
}
