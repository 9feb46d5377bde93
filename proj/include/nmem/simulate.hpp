#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nmem/covariance.hpp"
#include "nmem/dataset.hpp"

namespace nmem {

inline constexpr int kCurveGridSize = 101;  // scoring/report grid on [0,1]

// Generative configuration for the synthetic two-group design: subject-level
// covariates from fixed marginals, latent labels from the logistic truth,
// and responses from group mean curves plus random intercept/slope, an
// optional smooth subject effect, and white noise.
struct SimulationDesign {
  Eigen::Index m = 500;
  std::uint64_t seed = 1;

  int n_min = 16, n_max = 31;        // observations per subject (inclusive)
  int day_min = -30, day_max = 0;    // integer day window, sampled without replacement

  double sigma2 = 0.4142;
  std::array<GroupVariances, 2> zeta{
      GroupVariances{0.0958, -0.0817, 0.5125, 14.5},
      GroupVariances{0.0625, -0.0147, 0.0980, 14.0}};

  double beta0 = -1.1048;
  Eigen::VectorXd beta;  // per encoded covariate; see covariate_names()

  // Group mean curves tabulated on a uniform grid over [0,1]. The default
  // tables have one entry per day, so the generator reads them by index and
  // never evaluates the kernel; off-grid evaluation (scoring grid) goes
  // through a near-interpolating spline.
  std::array<Eigen::VectorXd, 2> curve_table;

  // Covariate marginals (shares for the binary columns; access is a
  // three-level draw with AVF as the reference remainder).
  double share_male = 0.55, share_white = 0.45, share_hispanic = 0.15,
         share_diabetes = 0.60, share_hypertension = 0.80;
  double share_avg = 0.20, share_cvcath = 0.20;
  double vintage_rate = 0.22;
  double bmi_shape = 15.5, bmi_rate = 0.5;
  double age_mean = 62.0, age_sd = 14.0;
};

// Encoded covariate column order shared by the simulator and its truth files.
const std::vector<std::string>& sim_covariate_names();

// Defaults above plus the default curves: group 2 flat at zero, group 1 a
// smooth ramp rising from t = 0.7 to about 1.5 at t = 1. smooth_effects=false
// zeroes both groups' v_non (the "without smooth effects" setting).
SimulationDesign default_design(Eigen::Index m, std::uint64_t seed,
                                bool smooth_effects);

Eigen::MatrixXd generate_covariates(const SimulationDesign& design);

// 0-based labels: 0 means mixture group 1 (the curve_table[0] group), drawn
// with probability sigmoid(beta0 + x' beta).
std::vector<int> generate_labels(const SimulationDesign& design,
                                 const Eigen::MatrixXd& x);

LongitudinalDataset generate_trajectories(const SimulationDesign& design,
                                          const std::vector<int>& labels,
                                          const Eigen::MatrixXd& x);

struct SimTruth {
  std::vector<std::string> subject_ids;
  std::vector<std::string> covariate_names;
  std::vector<int> labels;   // 0-based; 0 = group 1
  Eigen::VectorXd prior1;    // P(label = group 1) per subject
  double beta0 = 0.0;
  Eigen::VectorXd beta;
  double sigma2 = 0.0;
  std::array<GroupVariances, 2> zeta{};
  Eigen::VectorXd curve_grid;  // kCurveGridSize scaled times
  Eigen::MatrixXd curves;      // grid x 2 true mean curves
};

struct SimulatedData {
  LongitudinalDataset data;
  SimTruth truth;
};

// Dataset only; fills labels/priors when pointers are given. Never touches
// the kernel when both v_non are zero.
LongitudinalDataset simulate_dataset(const SimulationDesign& design,
                                     std::vector<int>* labels_out = nullptr,
                                     Eigen::VectorXd* prior_out = nullptr);

// Dataset plus scoring truth (curves interpolated onto the scoring grid).
SimulatedData simulate(const SimulationDesign& design);

// True mean curves evaluated at scaled times t (near-interpolating spline
// through the curve table).
Eigen::MatrixXd design_curves(const SimulationDesign& design,
                              const Eigen::VectorXd& t);

}  // namespace nmem
