#include "nmem/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "nmem/dataset.hpp"

namespace nmem {

namespace {

double sigmoid(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double ex = std::exp(eta);
  return ex / (1.0 + ex);
}

double log1pexp(double eta) {
  return std::max(eta, 0.0) + std::log1p(std::exp(-std::abs(eta)));
}

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

struct Standardized {
  Eigen::MatrixXd xs;      // centered/scaled columns; constant columns zeroed
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;   // population sd, 1.0 for constant columns
  std::vector<bool> live;  // false for constant columns (coefficient pinned 0)
};

Standardized standardize(const Eigen::MatrixXd& x) {
  const Eigen::Index m = x.rows(), p = x.cols();
  Standardized s;
  s.mean = x.colwise().mean();
  s.scale.resize(p);
  s.live.assign(static_cast<std::size_t>(p), true);
  s.xs = x.rowwise() - s.mean.transpose();
  for (Eigen::Index j = 0; j < p; ++j) {
    const double sd = std::sqrt(s.xs.col(j).squaredNorm() / static_cast<double>(m));
    if (sd < 1e-12) {
      s.scale[j] = 1.0;
      s.live[static_cast<std::size_t>(j)] = false;
      s.xs.col(j).setZero();
    } else {
      s.scale[j] = sd;
      s.xs.col(j) /= sd;
    }
  }
  return s;
}

// IRLS + coordinate descent in standardized coordinates, warm-startable.
// The penalty on standardized coefficient j is lambda0 / scale_j, which makes
// the problem identical to a uniform lambda0 penalty in raw coordinates.
// A step-halving guard keeps the penalized objective nondecreasing across
// IRLS iterations (the quadratic approximation alone does not guarantee it).
void fit_core(const Standardized& s, const Eigen::VectorXd& w, double lambda0,
              const LassoConfig& cfg, double& b0, Eigen::VectorXd& bs,
              int& irls_used, bool& converged) {
  const Eigen::Index m = s.xs.rows(), p = s.xs.cols();
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(m, b0);
  eta.noalias() += s.xs * bs;

  Eigen::VectorXd pen(p);
  for (Eigen::Index j = 0; j < p; ++j) pen[j] = lambda0 / s.scale[j];

  const auto penalized_obj = [&](const Eigen::VectorXd& eta_v,
                                 const Eigen::VectorXd& bs_v) {
    double obj = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) obj += w[i] * eta_v[i] - log1pexp(eta_v[i]);
    for (Eigen::Index j = 0; j < p; ++j) obj -= pen[j] * std::abs(bs_v[j]);
    return obj;
  };

  double obj_prev = penalized_obj(eta, bs);
  converged = false;
  irls_used = 0;
  for (int it = 0; it < cfg.max_irls; ++it) {
    ++irls_used;
    Eigen::VectorXd mu(m), v(m), u(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      mu[i] = sigmoid(eta[i]);
      v[i] = std::max(mu[i] * (1.0 - mu[i]), cfg.var_floor);
      u[i] = eta[i] + (w[i] - mu[i]) / v[i];
    }
    const double v_sum = v.sum();
    const double b0_old = b0;
    const Eigen::VectorXd bs_old = bs;

    // Residual r = u - b0 - Xs bs, maintained across coordinate updates.
    Eigen::VectorXd r = u - eta;
    for (int sweep = 0; sweep < cfg.max_cd; ++sweep) {
      double delta = 0.0;
      const double b0_new = b0 + r.dot(v) / v_sum;
      const double b0_clamped = std::clamp(b0_new, -cfg.coef_cap, cfg.coef_cap);
      r.array() -= (b0_clamped - b0);
      delta = std::max(delta, std::abs(b0_clamped - b0));
      b0 = b0_clamped;
      for (Eigen::Index j = 0; j < p; ++j) {
        if (!s.live[static_cast<std::size_t>(j)]) continue;
        const double denom = s.xs.col(j).cwiseProduct(v).dot(s.xs.col(j));
        if (denom <= 0.0) continue;
        const double rho =
            s.xs.col(j).cwiseProduct(v).dot(r) + denom * bs[j];
        double bj = soft_threshold(rho, pen[j]) / denom;
        bj = std::clamp(bj, -cfg.coef_cap, cfg.coef_cap);
        if (bj != bs[j]) {
          r.noalias() -= (bj - bs[j]) * s.xs.col(j);
          delta = std::max(delta, std::abs(bj - bs[j]));
          bs[j] = bj;
        }
      }
      if (delta < cfg.cd_tol) break;
    }

    eta = Eigen::VectorXd::Constant(m, b0);
    eta.noalias() += s.xs * bs;
    const double drop_tol = 1e-12 * (1.0 + std::abs(obj_prev));
    double obj_new = penalized_obj(eta, bs);
    for (int halving = 0; halving < 30 && obj_new < obj_prev - drop_tol; ++halving) {
      b0 = 0.5 * (b0 + b0_old);
      bs = 0.5 * (bs + bs_old);
      eta = Eigen::VectorXd::Constant(m, b0);
      eta.noalias() += s.xs * bs;
      obj_new = penalized_obj(eta, bs);
    }
    if (obj_new < obj_prev - drop_tol) {
      // No improving step exists along this direction; keep the old point.
      b0 = b0_old;
      bs = bs_old;
      eta = Eigen::VectorXd::Constant(m, b0);
      eta.noalias() += s.xs * bs;
      converged = true;
      break;
    }
    obj_prev = obj_new;
    // Displacement of the whole IRLS step, after any halving: the inner
    // coordinate-descent delta always ends below its own tolerance and says
    // nothing about outer convergence.
    const double step = std::max(
        std::abs(b0 - b0_old),
        bs.size() > 0 ? (bs - bs_old).cwiseAbs().maxCoeff() : 0.0);
    if (step < cfg.irls_tol) {
      converged = true;
      break;
    }
  }
}

LassoFit finish_fit(const Standardized& s, double b0, const Eigen::VectorXd& bs,
                    double lambda0, int irls_used, bool converged) {
  LassoFit fit;
  fit.lambda0 = lambda0;
  fit.irls_iterations = irls_used;
  fit.converged = converged;
  fit.beta = bs.cwiseQuotient(s.scale);
  fit.beta0 = b0 - fit.beta.dot(s.mean);
  return fit;
}

}  // namespace

LassoFit fit_weighted_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& w,
                            double lambda0, const LassoConfig& cfg) {
  if (x.rows() != w.size()) throw input_error("covariate rows and weights disagree");
  if (x.rows() < 1) throw input_error("empty design");
  if (lambda0 < 0.0) throw input_error("negative l1 penalty");
  const Standardized s = standardize(x);
  double b0 = 0.0;
  Eigen::VectorXd bs = Eigen::VectorXd::Zero(x.cols());
  int irls_used = 0;
  bool converged = false;
  fit_core(s, w, lambda0, cfg, b0, bs, irls_used, converged);
  return finish_fit(s, b0, bs, lambda0, irls_used, converged);
}

double weighted_logistic_loglik(const Eigen::MatrixXd& x, const Eigen::VectorXd& w,
                                double beta0, const Eigen::VectorXd& beta) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double eta = beta0 + x.row(i).dot(beta);
    ll += w[i] * eta - log1pexp(eta);
  }
  return ll;
}

Eigen::VectorXd predict_prior(const Eigen::MatrixXd& x, double beta0,
                              const Eigen::VectorXd& beta) {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out[i] = sigmoid(beta0 + x.row(i).dot(beta));
  return out;
}

std::vector<double> default_lambda0_grid(const Eigen::MatrixXd& x,
                                         const Eigen::VectorXd& w, int n_points,
                                         double ratio) {
  const double wbar = w.mean();
  double lambda_max = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    lambda_max = std::max(lambda_max,
                          std::abs((w.array() - wbar).matrix().dot(x.col(j))));
  lambda_max = std::max(lambda_max * (1.0 + 1e-4), 1e-10);

  std::vector<double> grid(static_cast<std::size_t>(n_points));
  const double lo = std::log(lambda_max * ratio), hi = std::log(lambda_max);
  for (int i = 0; i < n_points; ++i)
    grid[static_cast<std::size_t>(i)] =
        std::exp(hi + (lo - hi) * i / std::max(n_points - 1, 1));
  return grid;
}

CvResult cross_validate_lambda0(const Eigen::MatrixXd& x, const Eigen::VectorXd& w,
                                int n_folds, std::uint64_t seed,
                                const LassoConfig& cfg, std::vector<double> grid) {
  const Eigen::Index m = x.rows();
  if (n_folds < 2) throw input_error("cross-validation needs at least 2 folds");
  if (m < n_folds) throw input_error("fewer subjects than cross-validation folds");
  const int k = n_folds;

  CvResult res;
  res.grid = grid.empty() ? default_lambda0_grid(x, w) : std::move(grid);
  std::sort(res.grid.begin(), res.grid.end(), std::greater<double>());
  res.cv_loglik.assign(res.grid.size(), 0.0);

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  for (int fold = 0; fold < k; ++fold) {
    // Contiguous chunk of the shuffled order held out.
    const Eigen::Index lo = m * fold / k, hi = m * (fold + 1) / k;
    const Eigen::Index n_test = hi - lo, n_train = m - n_test;
    Eigen::MatrixXd x_train(n_train, x.cols()), x_test(n_test, x.cols());
    Eigen::VectorXd w_train(n_train), w_test(n_test);
    Eigen::Index a = 0, b = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const Eigen::Index row = perm[static_cast<std::size_t>(i)];
      if (i >= lo && i < hi) {
        x_test.row(b) = x.row(row);
        w_test[b++] = w[row];
      } else {
        x_train.row(a) = x.row(row);
        w_train[a++] = w[row];
      }
    }

    const Standardized s = standardize(x_train);
    double b0 = 0.0;
    Eigen::VectorXd bs = Eigen::VectorXd::Zero(x.cols());
    for (std::size_t g = 0; g < res.grid.size(); ++g) {
      int irls_used = 0;
      bool conv = false;
      fit_core(s, w_train, res.grid[g], cfg, b0, bs, irls_used, conv);
      const LassoFit fit = finish_fit(s, b0, bs, res.grid[g], irls_used, conv);
      res.cv_loglik[g] += weighted_logistic_loglik(x_test, w_test, fit.beta0, fit.beta);
    }
  }

  for (auto& v : res.cv_loglik) v /= static_cast<double>(m);

  // Grid is decreasing, so > keeps the largest penalty among ties.
  std::size_t best = 0;
  for (std::size_t g = 1; g < res.grid.size(); ++g)
    if (res.cv_loglik[g] > res.cv_loglik[best]) best = g;
  res.lambda0 = res.grid[best];
  return res;
}

}  // namespace nmem
