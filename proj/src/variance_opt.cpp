#include "nmem/variance_opt.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

#include "nmem/box_qn.hpp"
#include "nmem/parallel.hpp"

namespace nmem {

namespace {

constexpr double kSigma2Floor = 1e-8;

// Components scaled by 1/sigma2; V* built from these has unit error variance.
GroupVariances ratio_components(const Eigen::VectorXd& u, int k) {
  GroupVariances g;
  g.v_inter = std::exp(u[1 + 4 * k] - u[0]);
  g.v_slope = std::exp(u[2 + 4 * k] - u[0]);
  g.cov_is = std::tanh(u[3 + 4 * k]) * std::sqrt(g.v_inter * g.v_slope);
  g.v_non = std::exp(u[4 + 4 * k] - u[0]);
  return g;
}

struct GroupTerms {
  double quad = 0.0;    // sum_i w_ik r' (V*)^{-1} r
  double logdet = 0.0;  // sum_i w_ik log|V*_ik|
};

// One subject's r' (V*)^{-1} r and log|V*| in the spectral form: with
// M = I + d D (diagonal after rotation) and the 2x2 block C over F = [1 t],
//   (M + F C F')^{-1} = M^{-1} - M^{-1} F (I + C K)^{-1} C F' M^{-1},
//   det(M + F C F')   = det(M) det(I + C K),        K = F' M^{-1} F.
void add_subject(const VarianceCache::Subject& s, int k, const GroupVariances& g,
                 double w, GroupTerms& acc) {
  const Eigen::Index n = s.eig.size();
  double quad_m = 0.0, logdet_m = 0.0;
  double k00 = 0.0, k01 = 0.0, k11 = 0.0, h0 = 0.0, h1 = 0.0;
  const auto& rt = s.rt[static_cast<std::size_t>(k)];
  for (Eigen::Index j = 0; j < n; ++j) {
    const double denom = 1.0 + g.v_non * s.eig[j];  // >= 1: eig >= 0, v_non >= 0
    const double wj = 1.0 / denom;
    logdet_m += std::log(denom);
    const double r = rt[j];
    const double f0 = s.ft(j, 0), f1 = s.ft(j, 1);
    quad_m += wj * r * r;
    k00 += wj * f0 * f0;
    k01 += wj * f0 * f1;
    k11 += wj * f1 * f1;
    h0 += wj * f0 * r;
    h1 += wj * f1 * r;
  }
  const double a = g.v_inter, b = g.cov_is, c = g.v_slope;
  const double b00 = 1.0 + a * k00 + b * k01;
  const double b01 = a * k01 + b * k11;
  const double b10 = b * k00 + c * k01;
  const double b11 = 1.0 + b * k01 + c * k11;
  const double det = b00 * b11 - b01 * b10;
  if (!std::isfinite(det) || det <= 0.0)
    throw numeric_error("variance objective: singular capacity block");
  const double ch0 = a * h0 + b * h1;
  const double ch1 = b * h0 + c * h1;
  const double y0 = (b11 * ch0 - b01 * ch1) / det;
  const double y1 = (-b10 * ch0 + b00 * ch1) / det;
  acc.quad += w * (quad_m - (h0 * y0 + h1 * y1));
  acc.logdet += w * (logdet_m + std::log(det));
}

GroupTerms eval_group(const VarianceContext& ctx, const VarianceCache& cache, int k,
                      const GroupVariances& g) {
  const auto m = cache.subjects.size();
  std::vector<GroupTerms> parts(static_cast<std::size_t>(std::max(1, ctx.workers)));
  parallel_chunks(m, ctx.workers, [&](std::size_t lo, std::size_t hi, int tid) {
    GroupTerms& acc = parts[static_cast<std::size_t>(tid)];
    for (std::size_t i = lo; i < hi; ++i) {
      const double w = ctx.weights(static_cast<Eigen::Index>(i), k);
      if (w == 0.0) continue;
      add_subject(cache.subjects[i], k, g, w, acc);
    }
  });
  GroupTerms total;
  for (const auto& p : parts) {
    total.quad += p.quad;
    total.logdet += p.logdet;
  }
  return total;
}

double combine(const GroupTerms& t0, const GroupTerms& t1, Eigen::Index n,
               double* sigma2_hat) {
  const double a = t0.quad + t1.quad;
  const double nn = static_cast<double>(n);
  const double s2 = std::max(a / nn, kSigma2Floor);
  if (sigma2_hat) *sigma2_hat = s2;
  return nn * std::log(nn * s2) + t0.logdet + t1.logdet;
}

}  // namespace

std::vector<Eigen::MatrixXd> subject_grams(const LongitudinalDataset& data) {
  std::vector<Eigen::MatrixXd> grams;
  grams.reserve(data.subjects.size());
  for (const auto& subj : data.subjects) grams.push_back(r1_gram(subj.times_scaled));
  return grams;
}

VarianceContext make_variance_context(const LongitudinalDataset& data,
                                      const std::vector<Eigen::MatrixXd>& grams,
                                      const SplineBasis& basis,
                                      const std::array<SplineFit, 2>& fits,
                                      const Eigen::MatrixXd& weights) {
  if (weights.rows() != data.n_subjects() || weights.cols() != 2)
    throw internal_error("weights must be m x 2");
  if (grams.size() != data.subjects.size())
    throw internal_error("Gram cache does not match the dataset");

  VarianceContext ctx;
  ctx.data = &data;
  ctx.grams = &grams;
  ctx.weights = weights;
  ctx.n_total = data.total_obs;
  for (int k = 0; k < 2; ++k) {
    const auto& fit = fits[static_cast<std::size_t>(k)];
    Eigen::VectorXd fvals = basis.S * fit.d;
    if (fit.c.size() > 0) fvals.noalias() += basis.R * fit.c;
    auto& res = ctx.residuals[static_cast<std::size_t>(k)];
    res.reserve(data.subjects.size());
    for (std::size_t i = 0; i < data.subjects.size(); ++i) {
      const auto& subj = data.subjects[i];
      res.push_back(subj.responses -
                    fvals.segment(basis.subject_offsets[i], subj.n()));
    }
  }
  return ctx;
}

double profile_sigma2(const std::array<std::vector<Eigen::VectorXd>, 2>& residuals,
                      const Eigen::MatrixXd& weights,
                      const std::array<std::vector<SubjectCovariance>, 2>& v_star,
                      Eigen::Index n_total) {
  double a = 0.0;
  for (int k = 0; k < 2; ++k) {
    const auto& res = residuals[static_cast<std::size_t>(k)];
    const auto& cov = v_star[static_cast<std::size_t>(k)];
    for (std::size_t i = 0; i < res.size(); ++i)
      a += weights(static_cast<Eigen::Index>(i), k) * cov[i].quad_form(res[i]);
  }
  return a / static_cast<double>(n_total);
}

VarianceCache make_variance_cache(const VarianceContext& ctx) {
  const auto m = ctx.residuals[0].size();
  if (ctx.residuals[1].size() != m || ctx.grams->size() != m)
    throw internal_error("variance context groups disagree in subject count");
  VarianceCache cache;
  cache.subjects.resize(m);
  parallel_chunks(m, ctx.workers, [&](std::size_t lo, std::size_t hi, int) {
    for (std::size_t i = lo; i < hi; ++i) {
      auto& s = cache.subjects[i];
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig((*ctx.grams)[i]);
      if (eig.info() != Eigen::Success)
        throw numeric_error("subject Gram eigendecomposition failed");
      s.eig = eig.eigenvalues().cwiseMax(0.0);  // PSD up to rounding noise
      const auto& times = ctx.data->subjects[i].times_scaled;
      Eigen::MatrixXd f(times.size(), 2);
      f.col(0).setOnes();
      f.col(1) = times;
      s.ft.noalias() = eig.eigenvectors().transpose() * f;
      for (int k = 0; k < 2; ++k)
        s.rt[static_cast<std::size_t>(k)].noalias() =
            eig.eigenvectors().transpose() * ctx.residuals[static_cast<std::size_t>(k)][i];
    }
  });
  return cache;
}

ProfiledObjective profiled_neg_loglik(const Eigen::VectorXd& theta_v,
                                      const VarianceContext& ctx,
                                      const VarianceCache& cache, bool with_gradient,
                                      double fd_step) {
  if (theta_v.size() != kTransformedDim)
    throw input_error("variance parameter vector must have 9 entries");

  std::array<GroupTerms, 2> base;
  for (int k = 0; k < 2; ++k)
    base[static_cast<std::size_t>(k)] =
        eval_group(ctx, cache, k, ratio_components(theta_v, k));

  ProfiledObjective obj;
  obj.value = combine(base[0], base[1], ctx.n_total, &obj.sigma2_hat);

  if (with_gradient) {
    obj.gradient.resize(kTransformedDim);
    for (int j = 0; j < kTransformedDim; ++j) {
      Eigen::VectorXd up = theta_v;
      up[j] += fd_step;
      // Coordinate 0 rescales both groups; the rest touch exactly one.
      std::array<GroupTerms, 2> terms = base;
      if (j <= 4) terms[0] = eval_group(ctx, cache, 0, ratio_components(up, 0));
      if (j == 0 || j >= 5) terms[1] = eval_group(ctx, cache, 1, ratio_components(up, 1));
      const double value_up = combine(terms[0], terms[1], ctx.n_total, nullptr);
      obj.gradient[j] = (value_up - obj.value) / fd_step;
    }
  }
  return obj;
}

ProfiledObjective profiled_neg_loglik(const Eigen::VectorXd& theta_v,
                                      const VarianceContext& ctx, bool with_gradient,
                                      double fd_step) {
  return profiled_neg_loglik(theta_v, ctx, make_variance_cache(ctx), with_gradient,
                             fd_step);
}

VarianceOptResult optimize_variances(const Eigen::VectorXd& start,
                                     const VarianceContext& ctx,
                                     const VarianceOptOptions& opts) {
  const Eigen::VectorXd lower = Eigen::VectorXd::Constant(kTransformedDim, -opts.bound);
  const Eigen::VectorXd upper = Eigen::VectorXd::Constant(kTransformedDim, opts.bound);

  const VarianceCache cache = make_variance_cache(ctx);
  const BoxObjective objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    const ProfiledObjective obj =
        profiled_neg_loglik(x, ctx, cache, grad != nullptr, opts.fd_step);
    if (grad) *grad = obj.gradient;
    return obj.value;
  };

  BoxMinOptions qn;
  qn.max_iters = opts.max_iters;
  qn.pg_tol = opts.pg_tol;
  qn.fd_step = opts.fd_step;
  const BoxMinResult min = minimize_box_qn(objective, start, lower, upper, qn);

  const ProfiledObjective at_min = profiled_neg_loglik(min.x, ctx, cache, false);

  // Move along the flat all-variances ray to the canonical representative
  // whose error variance equals the closed-form profile value.
  VarianceOptResult res;
  res.theta = min.x;
  const double shift = std::log(at_min.sigma2_hat) - min.x[0];
  for (const int j : {0, 1, 2, 4, 5, 6, 8}) res.theta[j] += shift;
  res.l_p = at_min.value;
  res.sigma2_hat = at_min.sigma2_hat;
  res.converged = min.converged;
  res.iterations = min.iterations;
  res.evaluations = min.evaluations;
  return res;
}

}  // namespace nmem
