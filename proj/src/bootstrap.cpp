#include "nmem/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nmem/parallel.hpp"
#include "nmem/rng.hpp"

namespace nmem {

namespace {

enum Stream : std::uint64_t { kLabel = 11, kEffects = 12, kNoise = 13 };

struct ReplicateRecord {
  bool converged = false;
  double beta0 = 0.0;
  Eigen::VectorXd beta;
  double sigma2 = 0.0;
  std::array<GroupVariances, 2> zeta{};
  Eigen::MatrixXd curves;  // grid x 2
};

ParamInterval make_interval(double estimate, std::vector<double> values) {
  const auto [lo, hi] = percentile_interval(std::move(values));
  return ParamInterval{estimate, lo, hi};
}

}  // namespace

std::pair<double, double> percentile_interval(std::vector<double> values) {
  if (values.empty()) throw internal_error("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const auto b = static_cast<double>(values.size());
  const auto rank = [&](double q) {
    const auto r = static_cast<std::size_t>(std::max(1.0, std::ceil(b * q)));
    return values[std::min(r, values.size()) - 1];
  };
  return {rank(0.025), rank(0.975)};
}

LongitudinalDataset resample_responses(const LongitudinalDataset& data,
                                       const FitReport& fit,
                                       std::uint64_t replicate_seed) {
  const Eigen::MatrixXd x = data.covariate_matrix();
  const Eigen::VectorXd priors =
      predict_prior(x, fit.logistic.beta0, fit.logistic.beta);

  LongitudinalDataset out = data;
  for (std::size_t i = 0; i < out.subjects.size(); ++i) {
    auto& subj = out.subjects[i];
    const Eigen::Index n = subj.n();
    const Eigen::VectorXd& t = subj.times_scaled;

    std::mt19937_64 rng_l(stream_seed(replicate_seed, i, kLabel));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const int k = unif(rng_l) < priors[static_cast<Eigen::Index>(i)] ? 0 : 1;
    const GroupVariances& z = fit.variances.group[static_cast<std::size_t>(k)];
    const SplineFit& f = fit.fits[static_cast<std::size_t>(k)];

    std::mt19937_64 rng_e(stream_seed(replicate_seed, i, kEffects));
    std::normal_distribution<double> std_normal(0.0, 1.0);
    const double l11 = std::sqrt(z.v_inter);
    const double l21 = l11 > 0.0 ? z.cov_is / l11 : 0.0;
    const double l22 = std::sqrt(std::max(z.v_slope - l21 * l21, 0.0));
    const double e1 = std_normal(rng_e), e2 = std_normal(rng_e);
    const double b1 = l11 * e1;
    const double b2 = l21 * e1 + l22 * e2;

    Eigen::VectorXd smooth = Eigen::VectorXd::Zero(n);
    if (z.v_non > 0.0) {
      const Eigen::MatrixXd gram = z.v_non * r1_gram(t);
      const Eigen::LLT<Eigen::MatrixXd> llt =
          chol_with_jitter(gram, "smooth-effect covariance");
      Eigen::VectorXd e(n);
      for (Eigen::Index j = 0; j < n; ++j) e[j] = std_normal(rng_e);
      smooth = llt.matrixL() * e;
    }

    std::mt19937_64 rng_n(stream_seed(replicate_seed, i, kNoise));
    std::normal_distribution<double> noise(0.0, std::sqrt(fit.variances.sigma2));
    const Eigen::VectorXd mean = evaluate_spline(fit.knots, f.d, f.c, t);
    for (Eigen::Index j = 0; j < n; ++j)
      subj.responses[j] = mean[j] + b1 + b2 * t[j] + smooth[j] + noise(rng_n);
  }
  return out;
}

BootstrapResult bootstrap_intervals(const LongitudinalDataset& data,
                                    const FitReport& fit, const EmConfig& config,
                                    const BootstrapConfig& bcfg) {
  if (bcfg.n_replicates < 2)
    throw input_error("bootstrap needs at least 2 replicates");
  if (fit.logistic.beta.size() != data.n_covariates())
    throw input_error("fit and dataset have different covariate dimensions");

  EmConfig refit_cfg = config;
  refit_cfg.select_covariates = false;
  refit_cfg.support = fit.selected;
  refit_cfg.workers = 1;  // parallelism is over replicates here

  const auto design = make_model_design(data, config.knot_cap);

  MixtureState start;
  start.logistic = fit.logistic;
  start.logistic.lambda0 = 0.0;
  start.fits = fit.fits;
  start.theta_v = fit.variances.to_transformed()
                      .cwiseMax(-config.var_opt.bound)
                      .cwiseMin(config.var_opt.bound);

  const auto b = static_cast<std::size_t>(bcfg.n_replicates);
  std::vector<ReplicateRecord> records(b);
  parallel_chunks(b, bcfg.workers, [&](std::size_t lo, std::size_t hi, int) {
    for (std::size_t r = lo; r < hi; ++r) {
      ReplicateRecord& rec = records[r];
      try {
        const LongitudinalDataset replicate =
            resample_responses(data, fit, bcfg.seed + r);
        EmEngine engine(replicate, refit_cfg, design);
        const FitReport rep = engine.run_from(start);
        rec.converged = rep.converged;
        rec.beta0 = rep.logistic.beta0;
        rec.beta = rep.logistic.beta;
        rec.sigma2 = rep.variances.sigma2;
        rec.zeta = rep.variances.group;
        rec.curves = rep.curves;
      } catch (const Error&) {
        rec.converged = false;
      }
    }
  });

  BootstrapResult result;
  result.n_replicates = bcfg.n_replicates;
  result.replicate_converged.resize(b);
  std::vector<const ReplicateRecord*> kept;
  for (std::size_t r = 0; r < b; ++r) {
    result.replicate_converged[r] = records[r].converged;
    if (records[r].converged) kept.push_back(&records[r]);
  }
  result.n_converged = static_cast<int>(kept.size());
  if (static_cast<double>(kept.size()) <
      bcfg.min_converged_share * static_cast<double>(b))
    throw numeric_error("bootstrap: fewer than half the replicates converged");

  const auto collect = [&](auto&& get) {
    std::vector<double> values;
    values.reserve(kept.size());
    for (const auto* rec : kept) values.push_back(get(*rec));
    return values;
  };

  result.beta0 = make_interval(fit.logistic.beta0,
                               collect([](const ReplicateRecord& r) { return r.beta0; }));
  result.beta.resize(static_cast<std::size_t>(fit.logistic.beta.size()));
  for (Eigen::Index j = 0; j < fit.logistic.beta.size(); ++j)
    result.beta[static_cast<std::size_t>(j)] = make_interval(
        fit.logistic.beta[j],
        collect([j](const ReplicateRecord& r) { return r.beta[j]; }));
  result.sigma2 = make_interval(fit.variances.sigma2,
                                collect([](const ReplicateRecord& r) { return r.sigma2; }));
  for (int k = 0; k < 2; ++k) {
    const auto pick = [k](const ReplicateRecord& r, int c) {
      const GroupVariances& z = r.zeta[static_cast<std::size_t>(k)];
      return c == 0 ? z.v_inter : c == 1 ? z.cov_is : c == 2 ? z.v_slope : z.v_non;
    };
    const GroupVariances& est = fit.variances.group[static_cast<std::size_t>(k)];
    const std::array<double, 4> est_vals{est.v_inter, est.cov_is, est.v_slope,
                                         est.v_non};
    for (int c = 0; c < 4; ++c)
      result.zeta[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)] =
          make_interval(est_vals[static_cast<std::size_t>(c)],
                        collect([&](const ReplicateRecord& r) { return pick(r, c); }));
  }

  result.curve_grid = fit.curve_grid;
  for (int k = 0; k < 2; ++k) {
    Eigen::MatrixXd band(fit.curve_grid.size(), 2);
    for (Eigen::Index g = 0; g < fit.curve_grid.size(); ++g) {
      const auto [lo, hi] = percentile_interval(
          collect([&](const ReplicateRecord& r) { return r.curves(g, k); }));
      band(g, 0) = lo;
      band(g, 1) = hi;
    }
    result.curve_bands[static_cast<std::size_t>(k)] = band;
  }
  return result;
}

}  // namespace nmem
