#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "nmem/covariance.hpp"
#include "nmem/dataset.hpp"
#include "nmem/kernels.hpp"
#include "nmem/lasso.hpp"
#include "nmem/spline.hpp"
#include "nmem/variance_opt.hpp"

namespace nmem {

struct LogisticParams {
  double beta0 = 0.0;
  Eigen::VectorXd beta;  // full encoded-covariate length; zeros off support
  double lambda0 = 0.0;  // selected L1 weight (0 when selection is off)
};

// Relative-change stopping constants for the outer EM loop and the inner
// spline/variance alternation, plus both iteration caps.
struct StoppingConfig {
  double kappa1 = 1e-5;
  double kappa2 = 1e-5;
  double d_em_tol = 1e-5;
  double d_inner_tol = 1e-5;
  int max_outer = 100;
  int max_inner = 5;
};

struct EmConfig {
  StoppingConfig stop;
  GmlConfig gml;
  LassoConfig lasso;
  VarianceOptOptions var_opt;
  int knot_cap = 64;
  int cv_folds = 10;
  std::uint64_t cv_seed = 7u;
  double weight_floor = 1e-8;
  double class_threshold = 0.5;
  int workers = 1;
  // true: L1 logistic with cross-validated lambda0 over all covariates.
  // false: unpenalized logistic restricted to `support` (possibly empty ->
  // intercept-only); the coefficient vector keeps full length throughout.
  bool select_covariates = true;
  std::vector<Eigen::Index> support;
};

struct IterationRecord {
  int outer = 0;
  int inner_passes = 0;
  double d_em = 0.0;
  double lambda0 = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  // Penalized observed-data log-likelihood at this iteration's parameters and
  // at the previous ones, both under this iteration's lambdas (the pair a
  // monotonicity check compares).
  double loglik = 0.0;
  double loglik_prev = 0.0;
};

struct MixtureState {
  LogisticParams logistic;
  std::array<SplineFit, 2> fits;
  Eigen::VectorXd theta_v;  // transformed variance vector, length 9
  Eigen::MatrixXd weights;  // m x 2 posteriors; rows sum to 1
  Eigen::VectorXd priors;   // P(group 1 | x_i) under `logistic`
  int outer_iters = 0;
  std::vector<IterationRecord> trace;
};

struct FitReport {
  LogisticParams logistic;
  std::array<SplineFit, 2> fits;
  Eigen::VectorXd knots;
  VarianceComponents variances;  // natural scale

  std::vector<std::string> subject_ids;
  std::vector<std::string> covariate_names;
  TimeScaling scaling;

  std::vector<Eigen::Index> selected;  // nonzero slope support
  bool converged = false;
  int outer_iters = 0;
  double loglik = 0.0;

  Eigen::MatrixXd weights;           // m x 2 posteriors
  std::vector<int> classifications;  // 0 = group 1 (w_i1 >= threshold)

  Eigen::VectorXd curve_grid;  // scaled times of the report grid
  Eigen::MatrixXd curves;      // grid x 2 fitted mean curves

  std::vector<IterationRecord> trace;
};

// Basis and per-subject kernel Grams, shareable across engines fitting
// different responses on the same time grid (bootstrap replicates).
struct ModelDesign {
  SplineBasis basis;
  std::vector<Eigen::MatrixXd> grams;
};

std::shared_ptr<const ModelDesign> make_model_design(
    const LongitudinalDataset& data, int knot_cap);

// Two-group mixture fit: E-step posteriors from the logistic prior and the
// marginal Gaussian densities, M-step split into the lasso-logistic update
// and an inner alternation of per-group penalized spline solves (smoothing
// parameter reselected each pass) with marginal-likelihood variance updates.
class EmEngine {
 public:
  EmEngine(const LongitudinalDataset& data, EmConfig config,
           std::shared_ptr<const ModelDesign> design = nullptr);

  const SplineBasis& basis() const { return design_->basis; }
  const EmConfig& config() const { return config_; }

  // Seeded fair-coin group assignment; group shares as priors; per-group
  // plain spline fits and moment-based variance start. Resamples once if a
  // group comes out empty, then fails.
  MixtureState initialize(std::uint64_t seed) const;

  // Posterior weights from current parameters; rows sum to 1 exactly.
  void e_step(MixtureState& state) const;

  // Logistic update, then the inner alternation. Returns inner pass count.
  int m_step(MixtureState& state) const;

  FitReport run(std::uint64_t seed) const;
  // EM from the given parameters (E-step first); warm starts for replicate
  // refits. The state's weights/priors may be empty.
  FitReport run_from(MixtureState state) const;

  // Mixture log-likelihood minus the active penalties, lambdas as given.
  double penalized_loglik(const MixtureState& state, double lambda0,
                          double lambda1, double lambda2) const;

  // Group 1 = larger natural-scale slope variance; swapping negates the
  // logistic parameters and exchanges the group blocks.
  void canonicalize(MixtureState& state) const;

 private:
  Eigen::VectorXd subject_times(Eigen::Index i) const;
  Eigen::MatrixXd subject_x(Eigen::Index i) const;  // [S_i R_i]
  void floor_weights(Eigen::MatrixXd& weights) const;
  void update_logistic(MixtureState& state) const;
  int inner_alternation(MixtureState& state) const;
  std::array<SplineFit, 2> solve_splines(const MixtureState& state) const;
  // log N(y_i; X_i theta_k, V_ik) for every subject x group.
  Eigen::MatrixXd log_densities(const MixtureState& state) const;
  Eigen::VectorXd flatten(const MixtureState& state) const;  // theta-tilde
  FitReport finalize(MixtureState state, bool converged) const;

  const LongitudinalDataset* data_;
  EmConfig config_;
  std::shared_ptr<const ModelDesign> design_;
  Eigen::MatrixXd x_;  // m x p covariate matrix
};

// Penalized selection run followed by an unpenalized refit on the selected
// support; the report carries the refit estimates and the selected set.
FitReport fit_model(const LongitudinalDataset& data, const EmConfig& config,
                    std::uint64_t seed);

}  // namespace nmem
