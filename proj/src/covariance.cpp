#include "nmem/covariance.hpp"

#include <cmath>

#include "nmem/simd/batch.hpp"

namespace nmem {

namespace {

double safe_log(double v) { return std::log(std::max(v, 1e-300)); }

double atanh_clamped(double rho) {
  const double r = std::clamp(rho, -1.0 + 1e-12, 1.0 - 1e-12);
  return std::atanh(r);
}

}  // namespace

Eigen::LLT<Eigen::MatrixXd> chol_with_jitter(const Eigen::MatrixXd& a,
                                             const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  double jitter = 1e-10 * a.trace() / static_cast<double>(a.rows());
  for (int retry = 0; retry < 3 && llt.info() != Eigen::Success; ++retry) {
    Eigen::MatrixXd attempt = a;
    attempt.diagonal().array() += jitter;
    llt.compute(attempt);
    jitter *= 10.0;
  }
  if (llt.info() != Eigen::Success)
    throw numeric_error(std::string(what) + " is not positive definite");
  return llt;
}

Eigen::VectorXd VarianceComponents::to_transformed() const {
  Eigen::VectorXd u(kTransformedDim);
  u[0] = safe_log(sigma2);
  for (int k = 0; k < 2; ++k) {
    const GroupVariances& g = group[static_cast<std::size_t>(k)];
    const double denom = std::sqrt(std::max(g.v_inter * g.v_slope, 1e-300));
    u[1 + 4 * k] = safe_log(g.v_inter);
    u[2 + 4 * k] = safe_log(g.v_slope);
    u[3 + 4 * k] = atanh_clamped(g.cov_is / denom);
    u[4 + 4 * k] = safe_log(g.v_non);
  }
  return u;
}

VarianceComponents VarianceComponents::from_transformed(const Eigen::VectorXd& u) {
  if (u.size() != kTransformedDim)
    throw input_error("transformed variance vector must have 9 entries");
  VarianceComponents vc;
  vc.sigma2 = std::exp(u[0]);
  for (int k = 0; k < 2; ++k) {
    GroupVariances& g = vc.group[static_cast<std::size_t>(k)];
    g.v_inter = std::exp(u[1 + 4 * k]);
    g.v_slope = std::exp(u[2 + 4 * k]);
    g.cov_is = std::tanh(u[3 + 4 * k]) * std::sqrt(g.v_inter * g.v_slope);
    g.v_non = std::exp(u[4 + 4 * k]);
  }
  return vc;
}

Eigen::MatrixXd assemble_v(const Eigen::VectorXd& t_scaled, const Eigen::MatrixXd* gram,
                           const GroupVariances& g, double sigma2) {
  const Eigen::Index n = t_scaled.size();
  if (!(sigma2 > 0.0)) throw input_error("error variance must be positive");
  if (g.v_inter < 0.0 || g.v_slope < 0.0 || g.v_non < 0.0)
    throw input_error("variance components must be nonnegative");
  if (g.cov_is * g.cov_is >
      g.v_inter * g.v_slope * (1.0 + 1e-12) + 1e-300)
    throw input_error("intercept/slope covariance block is not positive semidefinite");
  if (g.v_non != 0.0 && gram == nullptr)
    throw internal_error("covariance assembly needs a Gram matrix when v_non != 0");
  if (gram != nullptr && (gram->rows() != n || gram->cols() != n))
    throw internal_error("Gram matrix size does not match time vector");

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMat v(n, n);
  RowMat gram_row;
  const double* gram_ptr = nullptr;
  if (g.v_non != 0.0) {
    gram_row = *gram;  // kernel values; symmetric, so layout change is copy-only
    gram_ptr = gram_row.data();
  }
  simd::cov_fill(t_scaled.data(), static_cast<std::size_t>(n), g.v_inter, g.cov_is,
                 g.v_slope, g.v_non, sigma2, gram_ptr, v.data());
  return v;
}

SubjectCovariance::SubjectCovariance(const Eigen::VectorXd& t_scaled,
                                     const Eigen::MatrixXd* gram,
                                     const GroupVariances& g, double sigma2,
                                     double weight)
    : v_(assemble_v(t_scaled, gram, g, sigma2)), weight_(weight) {
  if (!(weight >= 0.0)) throw internal_error("negative covariance weight");
  const Eigen::Index n = v_.rows();
  double jitter = 1e-10 * v_.trace() / static_cast<double>(n);
  Eigen::MatrixXd attempt = v_;
  llt_.compute(attempt);
  for (int retry = 0; retry < 3 && llt_.info() != Eigen::Success; ++retry) {
    attempt = v_;
    attempt.diagonal().array() += jitter;
    llt_.compute(attempt);
    if (llt_.info() == Eigen::Success) jitter_ = jitter;
    jitter *= 10.0;
  }
  if (llt_.info() != Eigen::Success)
    throw numeric_error("subject covariance is not positive definite");
  log_det_ = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

Eigen::VectorXd SubjectCovariance::whiten(const Eigen::VectorXd& y) const {
  Eigen::VectorXd z = llt_.matrixL().solve(y);
  z *= std::sqrt(weight_);
  return z;
}

Eigen::MatrixXd SubjectCovariance::whiten(const Eigen::MatrixXd& b) const {
  Eigen::MatrixXd z = llt_.matrixL().solve(b);
  z *= std::sqrt(weight_);
  return z;
}

double SubjectCovariance::quad_form(const Eigen::VectorXd& r) const {
  return whiten(r).squaredNorm();
}

Eigen::MatrixXd SubjectCovariance::whitening_factor() const {
  const Eigen::Index n = v_.rows();
  Eigen::MatrixXd p = llt_.matrixL().solve(Eigen::MatrixXd::Identity(n, n));
  p *= std::sqrt(weight_);
  return p;
}

}  // namespace nmem
