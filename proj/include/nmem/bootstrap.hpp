#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "nmem/em.hpp"

namespace nmem {

struct BootstrapConfig {
  int n_replicates = 1000;
  std::uint64_t seed = 1;
  int workers = 1;
  // Fraction of replicates that must converge for intervals to be reported.
  double min_converged_share = 0.5;
};

struct ParamInterval {
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct BootstrapResult {
  int n_replicates = 0;
  int n_converged = 0;
  std::vector<bool> replicate_converged;

  ParamInterval beta0;
  std::vector<ParamInterval> beta;  // per encoded covariate
  ParamInterval sigma2;
  // Per group: v_inter, cov_is, v_slope, v_non.
  std::array<std::array<ParamInterval, 4>, 2> zeta{};

  Eigen::VectorXd curve_grid;
  std::array<Eigen::MatrixXd, 2> curve_bands;  // per group: grid x 2 (lo, hi)
};

// Parametric bootstrap: replicate responses are re-simulated from the fitted
// model at the original subjects' covariates and scaled times (labels from
// the fitted logistic priors, effects and noise from the fitted variances,
// curves from the fitted splines). Each replicate is refit with the fit's
// selected support fixed and no L1 penalty, warm-started at the point
// estimate, then canonically relabeled. Intervals are percentile 2.5/97.5
// over converged replicates; curve bands are pointwise on the report grid.
BootstrapResult bootstrap_intervals(const LongitudinalDataset& data,
                                    const FitReport& fit, const EmConfig& config,
                                    const BootstrapConfig& bcfg);

// One replicate's response vectors (exposed for tests).
LongitudinalDataset resample_responses(const LongitudinalDataset& data,
                                       const FitReport& fit,
                                       std::uint64_t replicate_seed);

// Percentile-by-ceiling-rank bounds (type-1 quantiles) of a sample.
std::pair<double, double> percentile_interval(std::vector<double> values);

}  // namespace nmem
