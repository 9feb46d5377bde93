#include "nmem/report_io.hpp"

#include <fstream>
#include <iomanip>
#include <limits>

#include "json.hpp"

namespace nmem {

namespace {

using nlohmann::json;

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from(const json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  Eigen::Index i = 0;
  for (const auto& x : a) v[i++] = x.get<double>();
  return v;
}

json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd mat_from(const json& rows, Eigen::Index cols_hint) {
  const auto r = static_cast<Eigen::Index>(rows.size());
  Eigen::Index c = cols_hint;
  if (r > 0) c = static_cast<Eigen::Index>(rows.front().size());
  Eigen::MatrixXd m(r, c);
  Eigen::Index i = 0;
  for (const auto& row : rows) {
    if (static_cast<Eigen::Index>(row.size()) != c)
      throw input_error("ragged matrix in JSON input");
    Eigen::Index j = 0;
    for (const auto& x : row) m(i, j++) = x.get<double>();
    ++i;
  }
  return m;
}

json group_json(const GroupVariances& g) {
  return json{{"v_inter", g.v_inter},
              {"cov_is", g.cov_is},
              {"v_slope", g.v_slope},
              {"v_non", g.v_non}};
}

GroupVariances group_from(const json& j) {
  GroupVariances g;
  g.v_inter = j.at("v_inter").get<double>();
  g.cov_is = j.at("cov_is").get<double>();
  g.v_slope = j.at("v_slope").get<double>();
  g.v_non = j.at("v_non").get<double>();
  return g;
}

json fit_json(const SplineFit& f) {
  return json{{"d", vec_json(f.d)}, {"c", vec_json(f.c)}, {"lambda", f.lambda}};
}

SplineFit fit_from(const json& j) {
  SplineFit f;
  const Eigen::VectorXd d = vec_from(j.at("d"));
  if (d.size() != 2) throw input_error("spline fit needs exactly 2 line coefficients");
  f.d = d;
  f.c = vec_from(j.at("c"));
  f.lambda = j.at("lambda").get<double>();
  return f;
}

json interval_json(const ParamInterval& p) {
  return json{{"estimate", p.estimate}, {"lo", p.lo}, {"hi", p.hi}};
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw input_error("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw input_error("failed writing " + path);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw input_error(path + ": " + e.what());
  }
  return j;
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw input_error("cannot open " + path + " for writing");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  return out;
}

}  // namespace

void write_fit_report(const FitReport& report, const std::string& path) {
  json j;
  j["format"] = "nmem-fit/1";
  j["logistic"] = {{"beta0", report.logistic.beta0},
                   {"beta", vec_json(report.logistic.beta)},
                   {"lambda0", report.logistic.lambda0}};
  j["fits"] = json::array({fit_json(report.fits[0]), fit_json(report.fits[1])});
  j["knots"] = vec_json(report.knots);
  j["variances"] = {{"sigma2", report.variances.sigma2},
                    {"groups", json::array({group_json(report.variances.group[0]),
                                            group_json(report.variances.group[1])})}};
  j["subject_ids"] = report.subject_ids;
  j["covariate_names"] = report.covariate_names;
  j["scaling"] = {{"t_min", report.scaling.t_min}, {"t_max", report.scaling.t_max}};
  json selected = json::array();
  for (const auto s : report.selected) selected.push_back(s);
  j["selected"] = std::move(selected);
  j["converged"] = report.converged;
  j["outer_iters"] = report.outer_iters;
  j["loglik"] = report.loglik;
  j["weights"] = mat_json(report.weights);
  json cls = json::array();
  for (const int c : report.classifications) cls.push_back(c + 1);
  j["groups"] = std::move(cls);
  j["curve_grid"] = vec_json(report.curve_grid);
  j["curves"] = mat_json(report.curves);
  json trace = json::array();
  for (const auto& rec : report.trace)
    trace.push_back(json{{"outer", rec.outer},
                         {"inner_passes", rec.inner_passes},
                         {"d_em", rec.d_em},
                         {"lambda0", rec.lambda0},
                         {"lambda1", rec.lambda1},
                         {"lambda2", rec.lambda2},
                         {"loglik", rec.loglik},
                         {"loglik_prev", rec.loglik_prev}});
  j["trace"] = std::move(trace);
  write_json_file(j, path);
}

FitReport read_fit_report(const std::string& path) {
  const json j = read_json_file(path);
  try {
    if (j.at("format").get<std::string>() != "nmem-fit/1")
      throw input_error(path + ": not a fit report");
    FitReport r;
    const json& lg = j.at("logistic");
    r.logistic.beta0 = lg.at("beta0").get<double>();
    r.logistic.beta = vec_from(lg.at("beta"));
    r.logistic.lambda0 = lg.at("lambda0").get<double>();
    r.fits[0] = fit_from(j.at("fits").at(0));
    r.fits[1] = fit_from(j.at("fits").at(1));
    r.knots = vec_from(j.at("knots"));
    r.variances.sigma2 = j.at("variances").at("sigma2").get<double>();
    r.variances.group[0] = group_from(j.at("variances").at("groups").at(0));
    r.variances.group[1] = group_from(j.at("variances").at("groups").at(1));
    r.subject_ids = j.at("subject_ids").get<std::vector<std::string>>();
    r.covariate_names = j.at("covariate_names").get<std::vector<std::string>>();
    r.scaling.t_min = j.at("scaling").at("t_min").get<double>();
    r.scaling.t_max = j.at("scaling").at("t_max").get<double>();
    for (const auto& s : j.at("selected"))
      r.selected.push_back(s.get<Eigen::Index>());
    r.converged = j.at("converged").get<bool>();
    r.outer_iters = j.at("outer_iters").get<int>();
    r.loglik = j.at("loglik").get<double>();
    r.weights = mat_from(j.at("weights"), 2);
    for (const auto& g : j.at("groups"))
      r.classifications.push_back(g.get<int>() - 1);
    r.curve_grid = vec_from(j.at("curve_grid"));
    r.curves = mat_from(j.at("curves"), 2);
    for (const auto& t : j.at("trace")) {
      IterationRecord rec;
      rec.outer = t.at("outer").get<int>();
      rec.inner_passes = t.at("inner_passes").get<int>();
      rec.d_em = t.at("d_em").get<double>();
      rec.lambda0 = t.at("lambda0").get<double>();
      rec.lambda1 = t.at("lambda1").get<double>();
      rec.lambda2 = t.at("lambda2").get<double>();
      rec.loglik = t.at("loglik").get<double>();
      rec.loglik_prev = t.at("loglik_prev").get<double>();
      r.trace.push_back(rec);
    }
    return r;
  } catch (const json::exception& e) {
    throw input_error(path + ": " + e.what());
  }
}

void write_truth(const SimTruth& truth, const std::string& path) {
  json j;
  j["format"] = "nmem-truth/1";
  j["subject_ids"] = truth.subject_ids;
  j["covariate_names"] = truth.covariate_names;
  json groups = json::array();
  for (const int lab : truth.labels) groups.push_back(lab + 1);
  j["groups"] = std::move(groups);
  j["prior1"] = vec_json(truth.prior1);
  j["beta0"] = truth.beta0;
  j["beta"] = vec_json(truth.beta);
  j["sigma2"] = truth.sigma2;
  j["zeta"] = json::array({group_json(truth.zeta[0]), group_json(truth.zeta[1])});
  j["curve_grid"] = vec_json(truth.curve_grid);
  j["curves"] = mat_json(truth.curves);
  write_json_file(j, path);
}

SimTruth read_truth(const std::string& path) {
  const json j = read_json_file(path);
  try {
    if (j.at("format").get<std::string>() != "nmem-truth/1")
      throw input_error(path + ": not a truth file");
    SimTruth t;
    t.subject_ids = j.at("subject_ids").get<std::vector<std::string>>();
    t.covariate_names = j.at("covariate_names").get<std::vector<std::string>>();
    for (const auto& g : j.at("groups")) t.labels.push_back(g.get<int>() - 1);
    t.prior1 = vec_from(j.at("prior1"));
    t.beta0 = j.at("beta0").get<double>();
    t.beta = vec_from(j.at("beta"));
    t.sigma2 = j.at("sigma2").get<double>();
    t.zeta[0] = group_from(j.at("zeta").at(0));
    t.zeta[1] = group_from(j.at("zeta").at(1));
    t.curve_grid = vec_from(j.at("curve_grid"));
    t.curves = mat_from(j.at("curves"), 2);
    return t;
  } catch (const json::exception& e) {
    throw input_error(path + ": " + e.what());
  }
}

void write_bootstrap(const BootstrapResult& result, const FitReport& fit,
                     const std::string& path) {
  json j;
  j["format"] = "nmem-bootstrap/1";
  j["n_replicates"] = result.n_replicates;
  j["n_converged"] = result.n_converged;
  json conv = json::array();
  for (const bool c : result.replicate_converged) conv.push_back(c);
  j["replicate_converged"] = std::move(conv);
  j["beta0"] = interval_json(result.beta0);
  json betas = json::object();
  for (std::size_t k = 0; k < result.beta.size(); ++k)
    betas[fit.covariate_names[k]] = interval_json(result.beta[k]);
  j["beta"] = std::move(betas);
  j["sigma2"] = interval_json(result.sigma2);
  for (int g = 0; g < 2; ++g) {
    const auto& z = result.zeta[static_cast<std::size_t>(g)];
    j["zeta"][g] = {{"v_inter", interval_json(z[0])},
                    {"cov_is", interval_json(z[1])},
                    {"v_slope", interval_json(z[2])},
                    {"v_non", interval_json(z[3])}};
  }
  j["curve_grid"] = vec_json(result.curve_grid);
  j["curve_bands"] = json::array({mat_json(result.curve_bands[0]),
                                  mat_json(result.curve_bands[1])});
  write_json_file(j, path);
}

void write_classifications_csv(const FitReport& report, const std::string& path) {
  std::ofstream out = open_csv(path);
  out << "subject_id,group,posterior_group1\n";
  for (std::size_t i = 0; i < report.subject_ids.size(); ++i)
    out << report.subject_ids[i] << ',' << report.classifications[i] + 1 << ','
        << report.weights(static_cast<Eigen::Index>(i), 0) << '\n';
  if (!out) throw input_error("failed writing " + path);
}

void write_curves_csv(const FitReport& report, const std::string& path) {
  std::ofstream out = open_csv(path);
  out << "raw_time,scaled_time,curve_group1,curve_group2\n";
  for (Eigen::Index g = 0; g < report.curve_grid.size(); ++g)
    out << report.scaling.to_raw(report.curve_grid[g]) << ','
        << report.curve_grid[g] << ',' << report.curves(g, 0) << ','
        << report.curves(g, 1) << '\n';
  if (!out) throw input_error("failed writing " + path);
}

void write_trace_csv(const FitReport& report, const std::string& path) {
  std::ofstream out = open_csv(path);
  out << "outer,inner_passes,d_em,lambda0,lambda1,lambda2,loglik,loglik_prev\n";
  for (const auto& rec : report.trace)
    out << rec.outer << ',' << rec.inner_passes << ',' << rec.d_em << ','
        << rec.lambda0 << ',' << rec.lambda1 << ',' << rec.lambda2 << ','
        << rec.loglik << ',' << rec.loglik_prev << '\n';
  if (!out) throw input_error("failed writing " + path);
}

void write_curve_bands_csv(const BootstrapResult& result, const FitReport& fit,
                           const std::string& path) {
  std::ofstream out = open_csv(path);
  out << "raw_time,scaled_time,curve_group1,group1_lo,group1_hi,"
         "curve_group2,group2_lo,group2_hi\n";
  for (Eigen::Index g = 0; g < result.curve_grid.size(); ++g) {
    const double s = result.curve_grid[g];
    out << fit.scaling.to_raw(s) << ',' << s;
    for (int k = 0; k < 2; ++k)
      out << ',' << fit.curves(g, k) << ','
          << result.curve_bands[static_cast<std::size_t>(k)](g, 0) << ','
          << result.curve_bands[static_cast<std::size_t>(k)](g, 1);
    out << '\n';
  }
  if (!out) throw input_error("failed writing " + path);
}

}  // namespace nmem
