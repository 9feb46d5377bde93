#pragma once

#include <Eigen/Core>

#include "nmem/kernels.hpp"

namespace nmem {

// One group's mean curve in the basis {1, t, R1(z_l, .)}.
struct SplineFit {
  Eigen::Vector2d d = Eigen::Vector2d::Zero();  // intercept, slope
  Eigen::VectorXd c;                            // kernel coefficients
  double lambda = 0.0;                          // penalty scale in N*lambda*Q
  double gml_log = 0.0;                         // log GML score at selection
};

// Smoothing-parameter search settings, on the log10(N*lambda) axis.
struct GmlConfig {
  double log10_nlambda_min = 0.0;
  double log10_nlambda_max = 8.0;
  int coarse_points = 25;
  double tol = 1e-4;  // final bracket width
};

Eigen::VectorXd evaluate_spline(const Eigen::VectorXd& knots, const Eigen::Vector2d& d,
                                const Eigen::VectorXd& c, const Eigen::VectorXd& t);

// theta = argmin |z - X theta|^2 + N lambda c' Q c over theta = (d, c),
// given the accumulated normal equations of the whitened system.
Eigen::VectorXd solve_penalized(const Eigen::MatrixXd& xtx, const Eigen::VectorXd& xtz,
                                const Eigen::MatrixXd& q, Eigen::Index n_total,
                                double lambda);

// Penalized least-squares solver fed per-subject whitened blocks. Only the
// cross-products X'X, X'z and z'z are accumulated; the stacked system is
// never materialized. Each GML score evaluation costs one Cholesky
// factorization of the (2+e)-dimensional shifted normal matrix.
class SplineSolver {
 public:
  explicit SplineSolver(const SplineBasis& basis);

  void reset();
  // xw = P_i [S_i R_i], zw = P_i y_i for one subject (P_i the whitening factor).
  void add_block(const Eigen::MatrixXd& xw, const Eigen::VectorXd& zw);

  Eigen::Index n_rows() const { return n_; }

  SplineFit solve(double lambda) const;
  SplineFit solve_gml(const GmlConfig& cfg = GmlConfig{});

  // log M(lambda) = log z'(I-A)z - log det+(I-A) / (N-2); selection order only
  // depends on this monotone transform of the GML score.
  double gml_log_score(double lambda);

 private:
  void prepare_profile();

  const SplineBasis* basis_;
  Eigen::MatrixXd xtx_;
  Eigen::VectorXd xtz_;
  double ztz_ = 0.0;
  Eigen::Index n_ = 0;

  bool profile_ready_ = false;
  double profile_const_ = 0.0;  // log det C11 + log det Q, lambda-independent
};

}  // namespace nmem
