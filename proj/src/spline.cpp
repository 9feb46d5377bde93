#include "nmem/spline.hpp"

#include "nmem/covariance.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <cmath>
#include <limits>

namespace nmem {

Eigen::VectorXd evaluate_spline(const Eigen::VectorXd& knots, const Eigen::Vector2d& d,
                                const Eigen::VectorXd& c, const Eigen::VectorXd& t) {
  if (c.size() != knots.size())
    throw internal_error("coefficient count does not match knot count");
  Eigen::VectorXd f = Eigen::VectorXd::Constant(t.size(), d[0]) + d[1] * t;
  if (c.size() > 0) f += r1_cross_matrix(t, knots) * c;
  return f;
}

Eigen::VectorXd solve_penalized(const Eigen::MatrixXd& xtx, const Eigen::VectorXd& xtz,
                                const Eigen::MatrixXd& q, Eigen::Index n_total,
                                double lambda) {
  const Eigen::Index e = q.rows();
  if (xtx.rows() != e + 2 || xtz.size() != e + 2)
    throw internal_error("penalized least-squares system has inconsistent dimensions");
  Eigen::MatrixXd k = xtx;
  k.bottomRightCorner(e, e) += static_cast<double>(n_total) * lambda * q;
  // Rank-revealing solve: near the lower end of the smoothing range the
  // kernel directions can be numerically dependent, where a Cholesky-type
  // solve silently returns a wild solution; the minimum-norm one keeps the
  // fitted values right.
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(k);
  return cod.solve(xtz);
}

SplineSolver::SplineSolver(const SplineBasis& basis) : basis_(&basis) { reset(); }

void SplineSolver::reset() {
  const Eigen::Index p = 2 + basis_->n_knots();
  xtx_ = Eigen::MatrixXd::Zero(p, p);
  xtz_ = Eigen::VectorXd::Zero(p);
  ztz_ = 0.0;
  n_ = 0;
  profile_ready_ = false;
}

void SplineSolver::add_block(const Eigen::MatrixXd& xw, const Eigen::VectorXd& zw) {
  if (xw.cols() != xtx_.rows() || xw.rows() != zw.size())
    throw internal_error("whitened block has wrong shape");
  xtx_.selfadjointView<Eigen::Lower>().rankUpdate(xw.transpose());
  xtz_.noalias() += xw.transpose() * zw;
  ztz_ += zw.squaredNorm();
  n_ += xw.rows();
  profile_ready_ = false;
}

SplineFit SplineSolver::solve(double lambda) const {
  if (n_ == 0) throw internal_error("no blocks accumulated");
  const Eigen::MatrixXd xtx_full = xtx_.selfadjointView<Eigen::Lower>();
  const Eigen::VectorXd theta =
      solve_penalized(xtx_full, xtz_, basis_->Q, n_, lambda);
  SplineFit fit;
  fit.d = theta.head<2>();
  fit.c = theta.tail(basis_->n_knots());
  fit.lambda = lambda;
  fit.gml_log = std::numeric_limits<double>::quiet_NaN();
  return fit;
}

void SplineSolver::prepare_profile() {
  if (profile_ready_) return;
  if (n_ == 0) throw internal_error("no blocks accumulated");
  const Eigen::Index e = basis_->n_knots();

  // log det+(I - A(lambda)) = e log(N lambda) + log det C11 + log det Q
  //                           - log det K(lambda),
  // with C11 the {1, t} block of the whitened normal matrix C and
  // K(lambda) = C + N lambda Q~. The identity follows from
  // det(C + t Q~) -> t^e det(C11) det(Q) as t grows (Q~ vanishes on the
  // {1, t} span), and unlike a factorization of C alone it stays
  // well-conditioned: C is routinely numerically singular in the kernel
  // directions while K is regularized at every lambda in the search range.
  const double det_c11 = xtx_(0, 0) * xtx_(1, 1) - xtx_(1, 0) * xtx_(1, 0);
  if (!(det_c11 > 0.0))
    throw numeric_error("whitened normal matrix is singular on the {1, t} span");
  const Eigen::LLT<Eigen::MatrixXd> lltq = chol_with_jitter(basis_->Q, "knot Gram");
  double logdet_q = 0.0;
  for (Eigen::Index j = 0; j < e; ++j) logdet_q += std::log(lltq.matrixL()(j, j));
  profile_const_ = std::log(det_c11) + 2.0 * logdet_q;
  profile_ready_ = true;
}

double SplineSolver::gml_log_score(double lambda) {
  prepare_profile();
  const Eigen::Index e = basis_->n_knots();
  const Eigen::Index p = xtx_.rows();
  const double nl = static_cast<double>(n_) * lambda;

  Eigen::MatrixXd k = xtx_.selfadjointView<Eigen::Lower>();
  k.bottomRightCorner(e, e) += nl * basis_->Q;
  const Eigen::LLT<Eigen::MatrixXd> llt =
      chol_with_jitter(k, "penalized normal matrix");

  const Eigen::VectorXd u = llt.matrixL().solve(xtz_);
  const double rss = std::max(ztz_ - u.squaredNorm(), 1e-300);
  double logdet_k = 0.0;
  for (Eigen::Index j = 0; j < p; ++j) logdet_k += std::log(llt.matrixL()(j, j));
  const double logdet_plus =
      static_cast<double>(e) * std::log(nl) + profile_const_ - 2.0 * logdet_k;
  return std::log(rss) - logdet_plus / static_cast<double>(n_ - 2);
}

SplineFit SplineSolver::solve_gml(const GmlConfig& cfg) {
  prepare_profile();
  const double n = static_cast<double>(n_);
  const auto lambda_at = [&](double g) { return std::pow(10.0, g) / n; };

  if (cfg.coarse_points <= 1 ||
      cfg.log10_nlambda_max <= cfg.log10_nlambda_min) {
    SplineFit fit = solve(lambda_at(cfg.log10_nlambda_min));
    fit.gml_log = gml_log_score(fit.lambda);
    return fit;
  }

  // Coarse pass; ties resolve toward the larger (smoother) lambda.
  double best_g = cfg.log10_nlambda_min;
  double best_score = std::numeric_limits<double>::infinity();
  const int np = std::max(cfg.coarse_points, 2);
  for (int i = 0; i < np; ++i) {
    const double g = cfg.log10_nlambda_min +
                     (cfg.log10_nlambda_max - cfg.log10_nlambda_min) * i / (np - 1);
    const double s = gml_log_score(lambda_at(g));
    if (s <= best_score) {
      best_score = s;
      best_g = g;
    }
  }

  const double step =
      (cfg.log10_nlambda_max - cfg.log10_nlambda_min) / (np - 1);
  double lo = std::max(cfg.log10_nlambda_min, best_g - step);
  double hi = std::min(cfg.log10_nlambda_max, best_g + step);

  // Golden-section refinement; >= keeps the upper interval on ties.
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - inv_phi * (hi - lo);
  double x2 = lo + inv_phi * (hi - lo);
  double f1 = gml_log_score(lambda_at(x1));
  double f2 = gml_log_score(lambda_at(x2));
  while (hi - lo > cfg.tol) {
    if (f1 >= f2) {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = gml_log_score(lambda_at(x2));
    } else {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = gml_log_score(lambda_at(x1));
    }
  }
  const double g_star = 0.5 * (lo + hi);
  const double lambda = lambda_at(g_star);

  SplineFit fit = solve(lambda);
  fit.gml_log = gml_log_score(lambda);
  return fit;
}

}  // namespace nmem
