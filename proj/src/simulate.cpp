#include "nmem/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nmem/rng.hpp"
#include "nmem/spline.hpp"

namespace nmem {

namespace {

// Substream tags; each generation stage draws from its own engine so the
// stages are individually reproducible and subjects are independent units.
enum Stream : std::uint64_t {
  kCovariates = 1,
  kLabel = 2,
  kTimes = 3,
  kEffects = 4,
  kNoise = 5
};

std::mt19937_64 engine(const SimulationDesign& d, Eigen::Index subject,
                       std::uint64_t tag) {
  return std::mt19937_64(
      stream_seed(d.seed, static_cast<std::uint64_t>(subject), tag));
}

double sigmoid(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double ex = std::exp(eta);
  return ex / (1.0 + ex);
}

int n_days(const SimulationDesign& d) { return d.day_max - d.day_min + 1; }

void check_design(const SimulationDesign& d) {
  if (d.m < 1) throw input_error("need at least one subject");
  if (d.n_min < 2 || d.n_max < d.n_min || d.n_max > 200)
    throw input_error("observations-per-subject range must be within [2, 200]");
  if (n_days(d) < d.n_max)
    throw input_error("day window shorter than the maximum observation count");
  if (!(d.sigma2 > 0.0)) throw input_error("noise variance must be positive");
  for (const auto& z : d.zeta)
    if (z.v_inter < 0 || z.v_slope < 0 || z.v_non < 0)
      throw input_error("variance components must be nonnegative");
  for (const auto& table : d.curve_table) {
    if (table.size() < 2) throw input_error("curve table needs at least 2 points");
    if (!table.allFinite()) throw input_error("curve table has non-finite values");
  }
  if (d.beta.size() != static_cast<Eigen::Index>(sim_covariate_names().size()))
    throw input_error("beta length does not match the encoded covariate count");
}

std::string subject_id(Eigen::Index i) {
  std::string digits = std::to_string(i + 1);
  return "s" + std::string(6 - std::min<std::size_t>(6, digits.size()), '0') + digits;
}

// Table value at scaled time t when t lies on the table grid; off-grid times
// fall back to the interpolating spline (not used by the default design,
// whose day grid and table grid coincide).
struct CurveEval {
  const SimulationDesign* design;
  std::array<SplineFit, 2> spline{};
  std::array<bool, 2> have_spline{false, false};
  Eigen::VectorXd knots(int k) const {
    const Eigen::Index g = design->curve_table[static_cast<std::size_t>(k)].size();
    return Eigen::VectorXd::LinSpaced(g, 0.0, 1.0);
  }
  double at(int k, double t) {
    const auto& table = design->curve_table[static_cast<std::size_t>(k)];
    const double pos = t * static_cast<double>(table.size() - 1);
    const double rounded = std::round(pos);
    if (std::abs(pos - rounded) < 1e-9)
      return table[static_cast<Eigen::Index>(rounded)];
    if (!have_spline[static_cast<std::size_t>(k)]) {
      spline[static_cast<std::size_t>(k)] = fit_curve_spline(knots(k), table);
      have_spline[static_cast<std::size_t>(k)] = true;
    }
    const auto& f = spline[static_cast<std::size_t>(k)];
    Eigen::VectorXd tt(1);
    tt[0] = t;
    return evaluate_spline(knots(k), f.d, f.c, tt)[0];
  }

  static SplineFit fit_curve_spline(const Eigen::VectorXd& grid,
                                    const Eigen::VectorXd& values);
};

SplineFit CurveEval::fit_curve_spline(const Eigen::VectorXd& grid,
                                      const Eigen::VectorXd& values) {
  const Eigen::Index g = grid.size();
  Eigen::MatrixXd x(g, 2 + g);
  x.col(0).setOnes();
  x.col(1) = grid;
  x.rightCols(g) = r1_gram(grid);
  const Eigen::MatrixXd q = x.rightCols(g);
  const Eigen::MatrixXd xtx = x.transpose() * x;
  const Eigen::VectorXd xtz = x.transpose() * values;
  // Nearly interpolating: the penalty only regularizes the solve.
  const Eigen::VectorXd theta =
      solve_penalized(xtx, xtz, q, g, 1e-8 / static_cast<double>(g));
  SplineFit fit;
  fit.d = theta.head<2>();
  fit.c = theta.tail(g);
  fit.lambda = 1e-8 / static_cast<double>(g);
  return fit;
}

}  // namespace

const std::vector<std::string>& sim_covariate_names() {
  static const std::vector<std::string> names = {
      "male",    "white", "hispanic", "diabetes",   "hypertension",
      "vintage", "bmi",   "age",      "access_avg", "access_cvcath"};
  return names;
}

SimulationDesign default_design(Eigen::Index m, std::uint64_t seed,
                                bool smooth_effects) {
  SimulationDesign d;
  d.m = m;
  d.seed = seed;
  if (!smooth_effects) {
    d.zeta[0].v_non = 0.0;
    d.zeta[1].v_non = 0.0;
  }
  d.beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sim_covariate_names().size()));
  d.beta[1] = -0.3788;  // white
  d.beta[7] = -0.0103;  // age

  // One table entry per day. Group 1 ramps smoothly from 0 at t = 0.7 to 1.5
  // at t = 1 (cubic smoothstep); group 2 stays flat at zero.
  const int g = n_days(d);
  d.curve_table[0].resize(g);
  d.curve_table[1] = Eigen::VectorXd::Zero(g);
  for (int j = 0; j < g; ++j) {
    const double t = static_cast<double>(j) / (g - 1);
    const double u = std::clamp((t - 0.7) / 0.3, 0.0, 1.0);
    d.curve_table[0][j] = 1.5 * u * u * (3.0 - 2.0 * u);
  }
  return d;
}

Eigen::MatrixXd generate_covariates(const SimulationDesign& design) {
  check_design(design);
  const auto p = static_cast<Eigen::Index>(sim_covariate_names().size());
  Eigen::MatrixXd x(design.m, p);
  for (Eigen::Index i = 0; i < design.m; ++i) {
    std::mt19937_64 rng = engine(design, i, kCovariates);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    x(i, 0) = unif(rng) < design.share_male ? 1.0 : 0.0;
    x(i, 1) = unif(rng) < design.share_white ? 1.0 : 0.0;
    x(i, 2) = unif(rng) < design.share_hispanic ? 1.0 : 0.0;
    x(i, 3) = unif(rng) < design.share_diabetes ? 1.0 : 0.0;
    x(i, 4) = unif(rng) < design.share_hypertension ? 1.0 : 0.0;
    x(i, 5) = -std::log(1.0 - unif(rng)) / design.vintage_rate;
    std::gamma_distribution<double> gamma(design.bmi_shape, 1.0 / design.bmi_rate);
    x(i, 6) = gamma(rng);
    std::normal_distribution<double> normal(design.age_mean, design.age_sd);
    x(i, 7) = normal(rng);
    const double access = unif(rng);
    x(i, 8) = access < design.share_avg ? 1.0 : 0.0;
    x(i, 9) = (access >= design.share_avg &&
               access < design.share_avg + design.share_cvcath)
                  ? 1.0
                  : 0.0;
  }
  return x;
}

std::vector<int> generate_labels(const SimulationDesign& design,
                                 const Eigen::MatrixXd& x) {
  check_design(design);
  if (x.rows() != design.m || x.cols() != design.beta.size())
    throw input_error("covariate matrix does not match the design");
  std::vector<int> labels(static_cast<std::size_t>(design.m));
  for (Eigen::Index i = 0; i < design.m; ++i) {
    std::mt19937_64 rng = engine(design, i, kLabel);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double p1 = sigmoid(design.beta0 + x.row(i).dot(design.beta));
    labels[static_cast<std::size_t>(i)] = unif(rng) < p1 ? 0 : 1;
  }
  return labels;
}

LongitudinalDataset generate_trajectories(const SimulationDesign& design,
                                          const std::vector<int>& labels,
                                          const Eigen::MatrixXd& x) {
  check_design(design);
  if (static_cast<Eigen::Index>(labels.size()) != design.m)
    throw input_error("label count does not match the design");
  for (const int lab : labels)
    if (lab != 0 && lab != 1) throw input_error("labels must be 0 or 1");

  CurveEval curve{&design, {}, {false, false}};
  const int window = n_days(design);

  std::vector<SubjectRecord> subjects;
  subjects.reserve(static_cast<std::size_t>(design.m));
  for (Eigen::Index i = 0; i < design.m; ++i) {
    const int k = labels[static_cast<std::size_t>(i)];
    const GroupVariances& z = design.zeta[static_cast<std::size_t>(k)];

    std::mt19937_64 rng_t = engine(design, i, kTimes);
    std::uniform_int_distribution<int> n_dist(design.n_min, design.n_max);
    const int ni = n_dist(rng_t);
    std::vector<int> days(static_cast<std::size_t>(window));
    for (int j = 0; j < window; ++j)
      days[static_cast<std::size_t>(j)] = design.day_min + j;
    for (int j = 0; j < ni; ++j) {
      std::uniform_int_distribution<int> pick(j, window - 1);
      std::swap(days[static_cast<std::size_t>(j)],
                days[static_cast<std::size_t>(pick(rng_t))]);
    }
    days.resize(static_cast<std::size_t>(ni));
    std::sort(days.begin(), days.end());

    Eigen::VectorXd t_raw(ni), t_scaled(ni);
    for (int j = 0; j < ni; ++j) {
      t_raw[j] = days[static_cast<std::size_t>(j)];
      t_scaled[j] = (t_raw[j] - design.day_min) /
                    static_cast<double>(design.day_max - design.day_min);
    }

    std::mt19937_64 rng_e = engine(design, i, kEffects);
    std::normal_distribution<double> std_normal(0.0, 1.0);
    // Random intercept/slope from the 2x2 component block.
    const double l11 = std::sqrt(z.v_inter);
    const double l21 = l11 > 0.0 ? z.cov_is / l11 : 0.0;
    const double l22 = std::sqrt(std::max(z.v_slope - l21 * l21, 0.0));
    const double e1 = std_normal(rng_e), e2 = std_normal(rng_e);
    const double b1 = l11 * e1;
    const double b2 = l21 * e1 + l22 * e2;

    Eigen::VectorXd smooth = Eigen::VectorXd::Zero(ni);
    if (z.v_non > 0.0) {
      const Eigen::MatrixXd gram = z.v_non * r1_gram(t_scaled);
      const Eigen::LLT<Eigen::MatrixXd> llt =
          chol_with_jitter(gram, "smooth-effect covariance");
      Eigen::VectorXd e(ni);
      for (int j = 0; j < ni; ++j) e[j] = std_normal(rng_e);
      smooth = llt.matrixL() * e;
    }

    std::mt19937_64 rng_n = engine(design, i, kNoise);
    const double noise_sd = std::sqrt(design.sigma2);

    SubjectRecord subj;
    subj.id = subject_id(i);
    subj.times_raw = t_raw;
    subj.responses.resize(ni);
    for (int j = 0; j < ni; ++j) {
      std::normal_distribution<double> noise(0.0, noise_sd);
      subj.responses[j] = curve.at(k, t_scaled[j]) + b1 + b2 * t_scaled[j] +
                          smooth[j] + noise(rng_n);
    }
    subj.covariates = x.row(i).transpose();
    subjects.push_back(std::move(subj));
  }

  return build_dataset(std::move(subjects), sim_covariate_names(),
                       TimeScaling{static_cast<double>(design.day_min),
                                   static_cast<double>(design.day_max)});
}

LongitudinalDataset simulate_dataset(const SimulationDesign& design,
                                     std::vector<int>* labels_out,
                                     Eigen::VectorXd* prior_out) {
  const Eigen::MatrixXd x = generate_covariates(design);
  const std::vector<int> labels = generate_labels(design, x);
  if (prior_out) {
    prior_out->resize(design.m);
    for (Eigen::Index i = 0; i < design.m; ++i)
      (*prior_out)[i] = sigmoid(design.beta0 + x.row(i).dot(design.beta));
  }
  if (labels_out) *labels_out = labels;
  return generate_trajectories(design, labels, x);
}

Eigen::MatrixXd design_curves(const SimulationDesign& design,
                              const Eigen::VectorXd& t) {
  check_design(design);
  Eigen::MatrixXd curves(t.size(), 2);
  for (int k = 0; k < 2; ++k) {
    const auto& table = design.curve_table[static_cast<std::size_t>(k)];
    const Eigen::VectorXd grid =
        Eigen::VectorXd::LinSpaced(table.size(), 0.0, 1.0);
    const SplineFit fit = CurveEval::fit_curve_spline(grid, table);
    curves.col(k) = evaluate_spline(grid, fit.d, fit.c, t);
  }
  return curves;
}

SimulatedData simulate(const SimulationDesign& design) {
  SimulatedData out;
  out.data = simulate_dataset(design, &out.truth.labels, &out.truth.prior1);
  out.truth.subject_ids.reserve(out.data.subjects.size());
  for (const auto& subj : out.data.subjects) out.truth.subject_ids.push_back(subj.id);
  out.truth.covariate_names = sim_covariate_names();
  out.truth.beta0 = design.beta0;
  out.truth.beta = design.beta;
  out.truth.sigma2 = design.sigma2;
  out.truth.zeta = design.zeta;
  out.truth.curve_grid = Eigen::VectorXd::LinSpaced(kCurveGridSize, 0.0, 1.0);
  out.truth.curves = design_curves(design, out.truth.curve_grid);
  return out;
}

}  // namespace nmem
