#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace nmem {

struct LassoFit {
  double beta0 = 0.0;
  Eigen::VectorXd beta;  // original-scale coefficients
  double lambda0 = 0.0;
  int irls_iterations = 0;
  bool converged = false;
};

struct LassoConfig {
  int max_irls = 200;
  int max_cd = 2000;
  double cd_tol = 1e-10;    // max standardized-coefficient change per sweep
  double irls_tol = 1e-9;   // max coefficient change per IRLS step
  double var_floor = 1e-6;  // floor on mu(1-mu) IRLS weights
  double coef_cap = 30.0;   // |standardized coefficient| bound (separation guard)
};

// Weighted l1-penalized logistic regression on soft labels w_i in [0,1]:
//   max_{b0,b}  sum_i [w_i eta_i - log(1 + e^{eta_i})] - lambda0 |b|_1
// with eta_i = b0 + x_i' b. The intercept is never penalized; the penalty is
// lambda0 per unit of original-scale coefficient (columns are standardized
// internally with matching per-column penalty factors, so the solution is
// identical to solving in raw coordinates).
LassoFit fit_weighted_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& w,
                            double lambda0, const LassoConfig& cfg = LassoConfig{});

// sum_i [w_i eta_i - log(1 + e^{eta_i})], overflow-safe.
double weighted_logistic_loglik(const Eigen::MatrixXd& x, const Eigen::VectorXd& w,
                                double beta0, const Eigen::VectorXd& beta);

// sigmoid(b0 + x_i' b) per row.
Eigen::VectorXd predict_prior(const Eigen::MatrixXd& x, double beta0,
                              const Eigen::VectorXd& beta);

// Log-spaced grid from lambda_max (smallest penalty with an all-zero slope
// solution, max_j |sum_i (w_i - mean(w)) x_ij|) down to lambda_max * ratio,
// in decreasing order.
std::vector<double> default_lambda0_grid(const Eigen::MatrixXd& x,
                                         const Eigen::VectorXd& w, int n_points = 50,
                                         double ratio = 1e-3);

struct CvResult {
  double lambda0 = 0.0;
  std::vector<double> grid;        // decreasing
  std::vector<double> cv_loglik;   // total held-out weighted log-likelihood
};

// K-fold cross-validation of the l1 penalty, folds from a seeded shuffle,
// warm-started along the path. `grid` empty means default_lambda0_grid; a
// supplied grid is sorted decreasing first. cv_loglik holds the mean held-out
// weighted log-likelihood per grid point; ties prefer the larger penalty.
// Requires m >= n_folds >= 2.
CvResult cross_validate_lambda0(const Eigen::MatrixXd& x, const Eigen::VectorXd& w,
                                int n_folds, std::uint64_t seed,
                                const LassoConfig& cfg = LassoConfig{},
                                std::vector<double> grid = {});

}  // namespace nmem
