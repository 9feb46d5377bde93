#include "nmem/em.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nmem/parallel.hpp"

namespace nmem {

namespace {

constexpr double kLog2Pi = 1.8378770664093454;

double logit(double p) {
  const double q = std::clamp(p, 1e-12, 1.0 - 1e-12);
  return std::log(q) - std::log1p(-q);
}

// Population moments of the per-subject line coefficients of one group;
// falls back to mild defaults when the group is too small to estimate.
GroupVariances moment_variances(const std::vector<Eigen::Vector2d>& coefs,
                                double sigma2) {
  GroupVariances g;
  const auto n = static_cast<double>(coefs.size());
  if (coefs.size() < 2) {
    g.v_inter = 0.1;
    g.v_slope = 0.1;
    g.cov_is = 0.0;
    g.v_non = std::max(0.5 * sigma2, 1e-4);
    return g;
  }
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& c : coefs) mean += c;
  mean /= n;
  double va = 0.0, vb = 0.0, cab = 0.0;
  for (const auto& c : coefs) {
    va += (c[0] - mean[0]) * (c[0] - mean[0]);
    vb += (c[1] - mean[1]) * (c[1] - mean[1]);
    cab += (c[0] - mean[0]) * (c[1] - mean[1]);
  }
  g.v_inter = std::clamp(va / n, 1e-4, 1e6);
  g.v_slope = std::clamp(vb / n, 1e-4, 1e6);
  const double rho =
      std::clamp(cab / n / std::sqrt(g.v_inter * g.v_slope), -0.9, 0.9);
  g.cov_is = rho * std::sqrt(g.v_inter * g.v_slope);
  g.v_non = std::max(0.5 * sigma2, 1e-4);
  return g;
}

Eigen::VectorXd fit_theta(const SplineFit& fit) {
  Eigen::VectorXd theta(2 + fit.c.size());
  theta.head<2>() = fit.d;
  theta.tail(fit.c.size()) = fit.c;
  return theta;
}

}  // namespace

std::shared_ptr<const ModelDesign> make_model_design(
    const LongitudinalDataset& data, int knot_cap) {
  auto design = std::make_shared<ModelDesign>();
  design->basis = build_basis(data, knot_cap);
  design->grams = subject_grams(data);
  return design;
}

EmEngine::EmEngine(const LongitudinalDataset& data, EmConfig config,
                   std::shared_ptr<const ModelDesign> design)
    : data_(&data), config_(std::move(config)), design_(std::move(design)) {
  data.validate();
  if (!design_) design_ = make_model_design(data, config_.knot_cap);
  if (design_->basis.n_obs() != data.total_obs ||
      design_->grams.size() != data.subjects.size())
    throw internal_error("model design does not match the dataset");
  if (config_.weight_floor <= 0.0 || config_.weight_floor >= 0.5)
    throw input_error("weight floor must lie in (0, 0.5)");
  if (config_.stop.max_outer < 1 || config_.stop.max_inner < 1)
    throw input_error("iteration caps must be positive");
  for (const Eigen::Index j : config_.support)
    if (j < 0 || j >= data.n_covariates())
      throw input_error("support index out of range");
  x_ = data.covariate_matrix();
}

Eigen::VectorXd EmEngine::subject_times(Eigen::Index i) const {
  return data_->subjects[static_cast<std::size_t>(i)].times_scaled;
}

Eigen::MatrixXd EmEngine::subject_x(Eigen::Index i) const {
  const auto& basis = design_->basis;
  const Eigen::Index off = basis.subject_offsets[static_cast<std::size_t>(i)];
  const Eigen::Index n = data_->subjects[static_cast<std::size_t>(i)].n();
  Eigen::MatrixXd xi(n, 2 + basis.n_knots());
  xi.leftCols(2) = basis.S.middleRows(off, n);
  xi.rightCols(basis.n_knots()) = basis.R.middleRows(off, n);
  return xi;
}

MixtureState EmEngine::initialize(std::uint64_t seed) const {
  const Eigen::Index m = data_->n_subjects();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<int> assign(static_cast<std::size_t>(m));
  for (int attempt = 0;; ++attempt) {
    Eigen::Index n1 = 0;
    for (auto& a : assign) {
      a = unif(rng) < 0.5 ? 0 : 1;
      n1 += a == 0;
    }
    if (n1 > 0 && n1 < m) break;
    if (attempt == 1)
      throw numeric_error("random initialization left a group empty twice");
  }

  MixtureState state;
  state.weights = Eigen::MatrixXd::Zero(m, 2);
  Eigen::Index n1 = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    state.weights(i, assign[static_cast<std::size_t>(i)]) = 1.0;
    n1 += assign[static_cast<std::size_t>(i)] == 0;
  }
  const double share1 = static_cast<double>(n1) / static_cast<double>(m);
  state.priors = Eigen::VectorXd::Constant(m, share1);
  state.logistic.beta0 = logit(share1);
  state.logistic.beta = Eigen::VectorXd::Zero(data_->n_covariates());
  state.logistic.lambda0 = 0.0;

  // Plain per-group spline fits over the assigned subjects.
  for (int k = 0; k < 2; ++k) {
    SplineSolver solver(design_->basis);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (assign[static_cast<std::size_t>(i)] != k) continue;
      solver.add_block(subject_x(i),
                       data_->subjects[static_cast<std::size_t>(i)].responses);
    }
    state.fits[static_cast<std::size_t>(k)] = solver.solve_gml(config_.gml);
  }

  // Line fits on the residuals give starting variance components; the error
  // variance pools the residual scatter around those lines.
  std::array<std::vector<Eigen::Vector2d>, 2> line_coefs;
  double ssr = 0.0;
  double dof = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const int k = assign[static_cast<std::size_t>(i)];
    const auto& subj = data_->subjects[static_cast<std::size_t>(i)];
    const Eigen::VectorXd r =
        subj.responses -
        subject_x(i) * fit_theta(state.fits[static_cast<std::size_t>(k)]);
    const auto n = static_cast<double>(subj.n());
    if (subj.n() < 2) continue;
    const Eigen::VectorXd& t = subj.times_scaled;
    const double st = t.sum(), stt = t.squaredNorm();
    const double det = n * stt - st * st;
    if (det <= 1e-12 * std::max(1.0, n * stt)) continue;
    const double sr = r.sum(), str = t.dot(r);
    Eigen::Vector2d ab;
    ab[0] = (stt * sr - st * str) / det;
    ab[1] = (n * str - st * sr) / det;
    line_coefs[static_cast<std::size_t>(k)].push_back(ab);
    ssr += (r - Eigen::VectorXd::Constant(subj.n(), ab[0]) - ab[1] * t).squaredNorm();
    dof += std::max(n - 2.0, 1.0);
  }
  VarianceComponents vc;
  vc.sigma2 = std::clamp(dof > 0.0 ? ssr / dof : 1.0, 1e-6, 1e6);
  vc.group[0] = moment_variances(line_coefs[0], vc.sigma2);
  vc.group[1] = moment_variances(line_coefs[1], vc.sigma2);
  state.theta_v = vc.to_transformed()
                      .cwiseMax(-config_.var_opt.bound)
                      .cwiseMin(config_.var_opt.bound);
  return state;
}

Eigen::MatrixXd EmEngine::log_densities(const MixtureState& state) const {
  const Eigen::Index m = data_->n_subjects();
  const VarianceComponents vc = VarianceComponents::from_transformed(state.theta_v);
  const std::array<Eigen::VectorXd, 2> thetas = {fit_theta(state.fits[0]),
                                                 fit_theta(state.fits[1])};
  Eigen::MatrixXd ld(m, 2);
  parallel_chunks(
      static_cast<std::size_t>(m), config_.workers,
      [&](std::size_t lo, std::size_t hi, int) {
        for (std::size_t i = lo; i < hi; ++i) {
          const auto& subj = data_->subjects[i];
          const Eigen::MatrixXd xi = subject_x(static_cast<Eigen::Index>(i));
          for (int k = 0; k < 2; ++k) {
            const Eigen::VectorXd r =
                subj.responses - xi * thetas[static_cast<std::size_t>(k)];
            const SubjectCovariance cov(subj.times_scaled, &design_->grams[i],
                                        vc.group[static_cast<std::size_t>(k)],
                                        vc.sigma2, 1.0);
            ld(static_cast<Eigen::Index>(i), k) =
                -0.5 * (static_cast<double>(subj.n()) * kLog2Pi + cov.log_det() +
                        cov.quad_form(r));
          }
        }
      });
  return ld;
}

void EmEngine::e_step(MixtureState& state) const {
  const Eigen::Index m = data_->n_subjects();
  if (state.priors.size() != m)
    throw internal_error("prior vector does not match the subject count");
  const Eigen::MatrixXd ld = log_densities(state);
  state.weights.resize(m, 2);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double p = std::clamp(state.priors[i], 1e-300, 1.0 - 1e-16);
    const double l1 = std::log(p) + ld(i, 0);
    const double l2 = std::log1p(-p) + ld(i, 1);
    if (!std::isfinite(l1) && !std::isfinite(l2))
      throw numeric_error("subject likelihood vanished in both groups");
    const double mx = std::max(l1, l2);
    const double e1 = std::exp(l1 - mx), e2 = std::exp(l2 - mx);
    const double w1 = e1 / (e1 + e2);
    state.weights(i, 0) = w1;
    state.weights(i, 1) = 1.0 - w1;
  }
}

void EmEngine::floor_weights(Eigen::MatrixXd& weights) const {
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    double w1 = std::max(weights(i, 0), config_.weight_floor);
    double w2 = std::max(weights(i, 1), config_.weight_floor);
    const double s = w1 + w2;
    weights(i, 0) = w1 / s;
    weights(i, 1) = 1.0 - w1 / s;
  }
}

void EmEngine::update_logistic(MixtureState& state) const {
  const Eigen::VectorXd w = state.weights.col(0);
  if (config_.select_covariates) {
    const CvResult cv =
        cross_validate_lambda0(x_, w, config_.cv_folds, config_.cv_seed, config_.lasso);
    const LassoFit fit = fit_weighted_lasso(x_, w, cv.lambda0, config_.lasso);
    state.logistic.beta0 = fit.beta0;
    state.logistic.beta = fit.beta;
    state.logistic.lambda0 = cv.lambda0;
  } else {
    const auto s = static_cast<Eigen::Index>(config_.support.size());
    Eigen::MatrixXd xs(x_.rows(), s);
    for (Eigen::Index j = 0; j < s; ++j)
      xs.col(j) = x_.col(config_.support[static_cast<std::size_t>(j)]);
    const LassoFit fit = fit_weighted_lasso(xs, w, 0.0, config_.lasso);
    state.logistic.beta0 = fit.beta0;
    state.logistic.beta = Eigen::VectorXd::Zero(x_.cols());
    for (Eigen::Index j = 0; j < s; ++j)
      state.logistic.beta[config_.support[static_cast<std::size_t>(j)]] = fit.beta[j];
    state.logistic.lambda0 = 0.0;
  }
  state.priors = predict_prior(x_, state.logistic.beta0, state.logistic.beta);
}

std::array<SplineFit, 2> EmEngine::solve_splines(const MixtureState& state) const {
  const Eigen::Index m = data_->n_subjects();
  const VarianceComponents vc = VarianceComponents::from_transformed(state.theta_v);
  std::array<SplineFit, 2> fits;
  for (int k = 0; k < 2; ++k) {
    SplineSolver solver(design_->basis);
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto& subj = data_->subjects[static_cast<std::size_t>(i)];
      const SubjectCovariance cov(subj.times_scaled,
                                  &design_->grams[static_cast<std::size_t>(i)],
                                  vc.group[static_cast<std::size_t>(k)], vc.sigma2,
                                  state.weights(i, k));
      const Eigen::MatrixXd p = cov.whitening_factor();
      solver.add_block(p * subject_x(i), p * subj.responses);
    }
    fits[static_cast<std::size_t>(k)] = solver.solve_gml(config_.gml);
  }
  return fits;
}

int EmEngine::inner_alternation(MixtureState& state) const {
  int passes = 0;
  for (int pass = 0; pass < config_.stop.max_inner; ++pass) {
    Eigen::VectorXd prev(fit_theta(state.fits[0]).size() +
                         fit_theta(state.fits[1]).size() + state.theta_v.size());
    prev << fit_theta(state.fits[0]), fit_theta(state.fits[1]), state.theta_v;

    state.fits = solve_splines(state);
    VarianceContext ctx = make_variance_context(*data_, design_->grams,
                                                design_->basis, state.fits,
                                                state.weights);
    ctx.workers = config_.workers;
    const VarianceOptResult opt =
        optimize_variances(state.theta_v, ctx, config_.var_opt);
    state.theta_v = opt.theta;
    ++passes;

    Eigen::VectorXd cur(prev.size());
    cur << fit_theta(state.fits[0]), fit_theta(state.fits[1]), state.theta_v;
    const double d_inner = (cur - prev).squaredNorm() /
                           (prev.squaredNorm() + config_.stop.kappa2);
    if (d_inner <= config_.stop.d_inner_tol) break;
  }
  return passes;
}

int EmEngine::m_step(MixtureState& state) const {
  floor_weights(state.weights);
  update_logistic(state);
  return inner_alternation(state);
}

double EmEngine::penalized_loglik(const MixtureState& state, double lambda0,
                                  double lambda1, double lambda2) const {
  const Eigen::MatrixXd ld = log_densities(state);
  const Eigen::VectorXd priors =
      predict_prior(x_, state.logistic.beta0, state.logistic.beta);
  double ll = 0.0;
  for (Eigen::Index i = 0; i < ld.rows(); ++i) {
    const double p = std::clamp(priors[i], 1e-300, 1.0 - 1e-16);
    const double l1 = std::log(p) + ld(i, 0);
    const double l2 = std::log1p(-p) + ld(i, 1);
    const double mx = std::max(l1, l2);
    ll += mx + std::log(std::exp(l1 - mx) + std::exp(l2 - mx));
  }
  const double n = static_cast<double>(data_->total_obs);
  const auto roughness = [&](const SplineFit& fit, double lambda) {
    return 0.5 * n * lambda * fit.c.dot(design_->basis.Q * fit.c);
  };
  return ll - lambda0 * state.logistic.beta.lpNorm<1>() -
         roughness(state.fits[0], lambda1) - roughness(state.fits[1], lambda2);
}

Eigen::VectorXd EmEngine::flatten(const MixtureState& state) const {
  const Eigen::VectorXd t0 = fit_theta(state.fits[0]);
  const Eigen::VectorXd t1 = fit_theta(state.fits[1]);
  Eigen::VectorXd out(1 + state.logistic.beta.size() + t0.size() + t1.size() +
                      state.theta_v.size());
  out << state.logistic.beta0, state.logistic.beta, t0, t1, state.theta_v;
  return out;
}

void EmEngine::canonicalize(MixtureState& state) const {
  const VarianceComponents vc = VarianceComponents::from_transformed(state.theta_v);
  if (vc.group[0].v_slope >= vc.group[1].v_slope) return;
  std::swap(state.fits[0], state.fits[1]);
  Eigen::VectorXd swapped(kTransformedDim);
  swapped[0] = state.theta_v[0];
  swapped.segment<4>(1) = state.theta_v.segment<4>(5);
  swapped.segment<4>(5) = state.theta_v.segment<4>(1);
  state.theta_v = swapped;
  state.weights.col(0).swap(state.weights.col(1));
  state.priors = (1.0 - state.priors.array()).matrix();
  state.logistic.beta0 = -state.logistic.beta0;
  state.logistic.beta = -state.logistic.beta;
}

FitReport EmEngine::finalize(MixtureState state, bool converged) const {
  e_step(state);  // posteriors at the final parameters
  canonicalize(state);

  FitReport report;
  report.logistic = state.logistic;
  report.fits = state.fits;
  report.knots = design_->basis.knots;
  report.variances = VarianceComponents::from_transformed(state.theta_v);
  report.subject_ids.reserve(data_->subjects.size());
  for (const auto& subj : data_->subjects) report.subject_ids.push_back(subj.id);
  report.covariate_names = data_->covariate_names;
  report.scaling = data_->scaling;
  for (Eigen::Index j = 0; j < state.logistic.beta.size(); ++j)
    if (state.logistic.beta[j] != 0.0) report.selected.push_back(j);
  report.converged = converged;
  report.outer_iters = state.outer_iters;
  report.loglik = penalized_loglik(state, state.logistic.lambda0,
                                   state.fits[0].lambda, state.fits[1].lambda);
  report.weights = state.weights;
  report.classifications.resize(static_cast<std::size_t>(state.weights.rows()));
  for (Eigen::Index i = 0; i < state.weights.rows(); ++i)
    report.classifications[static_cast<std::size_t>(i)] =
        state.weights(i, 0) >= config_.class_threshold ? 0 : 1;
  report.curve_grid = Eigen::VectorXd::LinSpaced(101, 0.0, 1.0);
  report.curves.resize(report.curve_grid.size(), 2);
  for (int k = 0; k < 2; ++k)
    report.curves.col(k) = evaluate_spline(design_->basis.knots,
                                           state.fits[static_cast<std::size_t>(k)].d,
                                           state.fits[static_cast<std::size_t>(k)].c,
                                           report.curve_grid);
  report.trace = std::move(state.trace);
  return report;
}

FitReport EmEngine::run(std::uint64_t seed) const {
  return run_from(initialize(seed));
}

FitReport EmEngine::run_from(MixtureState state) const {
  const Eigen::Index m = data_->n_subjects();
  if (state.logistic.beta.size() != data_->n_covariates())
    throw input_error("starting state has the wrong covariate dimension");
  if (state.priors.size() != m)
    state.priors = predict_prior(x_, state.logistic.beta0, state.logistic.beta);

  Eigen::VectorXd prev = flatten(state);
  bool converged = false;
  for (int outer = 1; outer <= config_.stop.max_outer; ++outer) {
    e_step(state);
    const MixtureState before = state;  // parameters entering this iteration
    const int inner = m_step(state);

    const Eigen::VectorXd cur = flatten(state);
    const double d_em =
        (cur - prev).squaredNorm() / (prev.squaredNorm() + config_.stop.kappa1);
    prev = cur;

    IterationRecord rec;
    rec.outer = outer;
    rec.inner_passes = inner;
    rec.d_em = d_em;
    rec.lambda0 = state.logistic.lambda0;
    rec.lambda1 = state.fits[0].lambda;
    rec.lambda2 = state.fits[1].lambda;
    rec.loglik = penalized_loglik(state, rec.lambda0, rec.lambda1, rec.lambda2);
    rec.loglik_prev =
        penalized_loglik(before, rec.lambda0, rec.lambda1, rec.lambda2);
    state.trace.push_back(rec);
    state.outer_iters = outer;

    if (d_em <= config_.stop.d_em_tol) {
      converged = true;
      break;
    }
  }
  return finalize(std::move(state), converged);
}

FitReport fit_model(const LongitudinalDataset& data, const EmConfig& config,
                    std::uint64_t seed) {
  auto design = make_model_design(data, config.knot_cap);
  if (!config.select_covariates) {
    EmEngine engine(data, config, design);
    return engine.run(seed);
  }
  EmConfig select_cfg = config;
  select_cfg.select_covariates = true;
  EmEngine selector(data, select_cfg, design);
  const FitReport selection = selector.run(seed);

  EmConfig refit_cfg = config;
  refit_cfg.select_covariates = false;
  refit_cfg.support = selection.selected;
  EmEngine refitter(data, refit_cfg, design);
  FitReport report = refitter.run(seed);
  report.selected = selection.selected;
  return report;
}

}  // namespace nmem
