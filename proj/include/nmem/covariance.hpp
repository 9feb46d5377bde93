#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <array>

#include "nmem/dataset.hpp"

namespace nmem {

// Random-effect variance components for one trajectory group.
struct GroupVariances {
  double v_inter = 0.0;  // random intercept variance
  double cov_is = 0.0;   // intercept/slope covariance
  double v_slope = 0.0;  // random slope variance
  double v_non = 0.0;    // nonparametric (smooth) deviation scale
};

// Full variance state: shared measurement error plus per-group components.
//
// Transformed coordinates are the unconstrained 9-vector
//   [log s2, log v_inter_1, log v_slope_1, atanh(rho_1), log v_non_1,
//            log v_inter_2, log v_slope_2, atanh(rho_2), log v_non_2]
// with rho = cov_is / sqrt(v_inter * v_slope).
struct VarianceComponents {
  double sigma2 = 1.0;
  std::array<GroupVariances, 2> group{};

  Eigen::VectorXd to_transformed() const;
  static VarianceComponents from_transformed(const Eigen::VectorXd& u);
};

inline constexpr int kTransformedDim = 9;

// Cholesky with escalating diagonal jitter (1e-10 * mean diagonal, x10, three
// retries); throws a numeric error naming `what` when all attempts fail.
Eigen::LLT<Eigen::MatrixXd> chol_with_jitter(const Eigen::MatrixXd& a,
                                             const char* what);

// Assembles the marginal covariance of one subject's response vector:
//   V = v_inter 11' + cov_is (1t' + t1') + v_slope tt' + v_non G + sigma2 I
// where G is the smooth-kernel Gram matrix of the subject's times.
// `gram` may be null only when v_non == 0.
Eigen::MatrixXd assemble_v(const Eigen::VectorXd& t_scaled, const Eigen::MatrixXd* gram,
                           const GroupVariances& g, double sigma2);

// Cholesky view of one subject's weighted covariance. The factor
// P = sqrt(w) L^{-1} (V = LL') satisfies P'P = w V^{-1}; all quadratic
// forms and log-determinants go through triangular solves, V^{-1} is
// never formed. Indefinite assemblies get an escalating diagonal jitter
// (three retries) before failing.
class SubjectCovariance {
 public:
  SubjectCovariance(const Eigen::VectorXd& t_scaled, const Eigen::MatrixXd* gram,
                    const GroupVariances& g, double sigma2, double weight = 1.0);

  Eigen::Index n() const { return v_.rows(); }
  double weight() const { return weight_; }
  double log_det() const { return log_det_; }
  double jitter_added() const { return jitter_; }
  const Eigen::MatrixXd& matrix() const { return v_; }

  // sqrt(w) L^{-1} y, so that |whiten(y)|^2 = w y' V^{-1} y.
  Eigen::VectorXd whiten(const Eigen::VectorXd& y) const;
  Eigen::MatrixXd whiten(const Eigen::MatrixXd& b) const;
  double quad_form(const Eigen::VectorXd& r) const;

  // Dense P = sqrt(w) L^{-1} (lower triangular).
  Eigen::MatrixXd whitening_factor() const;

 private:
  Eigen::MatrixXd v_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double weight_ = 1.0;
  double log_det_ = 0.0;
  double jitter_ = 0.0;
};

}  // namespace nmem
