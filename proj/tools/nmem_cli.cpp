#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "nmem/bootstrap.hpp"
#include "nmem/em.hpp"
#include "nmem/report_io.hpp"
#include "nmem/simulate.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// key = value pairs, one per line, '#' comments. Unknown keys are rejected so
// typos do not silently fall back to defaults.
nmem::EmConfig load_config(const std::string& path) {
  nmem::EmConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw nmem::input_error("cannot open config file " + path);

  std::map<std::string, std::function<void(const std::string&)>> setters;
  const auto real = [](const std::string& v) { return std::stod(v); };
  const auto integer = [](const std::string& v) { return std::stoi(v); };
  setters["kappa1"] = [&](const std::string& v) { cfg.stop.kappa1 = real(v); };
  setters["kappa2"] = [&](const std::string& v) { cfg.stop.kappa2 = real(v); };
  setters["d_em"] = [&](const std::string& v) { cfg.stop.d_em_tol = real(v); };
  setters["d_inner"] = [&](const std::string& v) { cfg.stop.d_inner_tol = real(v); };
  setters["max_outer"] = [&](const std::string& v) { cfg.stop.max_outer = integer(v); };
  setters["max_inner"] = [&](const std::string& v) { cfg.stop.max_inner = integer(v); };
  setters["knot_cap"] = [&](const std::string& v) { cfg.knot_cap = integer(v); };
  setters["cv_folds"] = [&](const std::string& v) { cfg.cv_folds = integer(v); };
  setters["cv_seed"] = [&](const std::string& v) { cfg.cv_seed = std::stoull(v); };
  setters["weight_floor"] = [&](const std::string& v) { cfg.weight_floor = real(v); };
  setters["threshold"] = [&](const std::string& v) { cfg.class_threshold = real(v); };
  setters["var_bound"] = [&](const std::string& v) { cfg.var_opt.bound = real(v); };
  setters["var_pg_tol"] = [&](const std::string& v) { cfg.var_opt.pg_tol = real(v); };
  setters["var_max_iters"] = [&](const std::string& v) {
    cfg.var_opt.max_iters = integer(v);
  };
  setters["var_fd_step"] = [&](const std::string& v) { cfg.var_opt.fd_step = real(v); };
  setters["gml_log10_min"] = [&](const std::string& v) {
    cfg.gml.log10_nlambda_min = real(v);
  };
  setters["gml_log10_max"] = [&](const std::string& v) {
    cfg.gml.log10_nlambda_max = real(v);
  };
  setters["gml_coarse_points"] = [&](const std::string& v) {
    cfg.gml.coarse_points = integer(v);
  };
  setters["gml_tol"] = [&](const std::string& v) { cfg.gml.tol = real(v); };

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw nmem::input_error(path + " line " + std::to_string(line_no) +
                              ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end())
      throw nmem::input_error(path + " line " + std::to_string(line_no) +
                              ": unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const std::logic_error&) {
      throw nmem::input_error(path + " line " + std::to_string(line_no) +
                              ": bad value for '" + key + "'");
    }
  }
  return cfg;
}

std::vector<std::string> read_header(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw nmem::input_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw nmem::input_error(path + ": empty file");
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n'))
    line.pop_back();
  std::vector<std::string> cols;
  std::string cur;
  for (const char ch : line) {
    if (ch == ',') {
      cols.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  cols.push_back(cur);
  return cols;
}

// All non-key columns are numeric covariates unless flagged categorical.
nmem::CovariateSchema make_schema(const std::string& data_path,
                                  const std::vector<std::string>& categoricals,
                                  const std::string& time_col,
                                  const std::string& response_col,
                                  const std::string& id_col) {
  std::map<std::string, std::string> cat_ref;
  for (const auto& spec : categoricals) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
      cat_ref[spec] = "";
    else
      cat_ref[spec.substr(0, eq)] = spec.substr(eq + 1);
  }
  nmem::CovariateSchema schema;
  for (const auto& col : read_header(data_path)) {
    if (col == time_col || col == response_col || col == id_col) continue;
    nmem::CovariateSchema::Column c;
    c.name = col;
    const auto it = cat_ref.find(col);
    if (it != cat_ref.end()) {
      c.kind = nmem::ColumnKind::categorical;
      c.reference = it->second;
      cat_ref.erase(it);
    }
    schema.columns.push_back(std::move(c));
  }
  if (!cat_ref.empty())
    throw nmem::input_error("categorical column '" + cat_ref.begin()->first +
                            "' not present in " + data_path);
  return schema;
}

struct IoColumns {
  std::string time = "time";
  std::string response = "response";
  std::string id = "subject_id";
};

void add_column_flags(CLI::App* cmd, IoColumns& cols) {
  cmd->add_option("--time-col", cols.time, "Time column name");
  cmd->add_option("--response-col", cols.response, "Response column name");
  cmd->add_option("--id-col", cols.id, "Subject id column name");
}

nmem::LongitudinalDataset load_data(const std::string& path, const IoColumns& cols,
                                    const std::vector<std::string>& categoricals) {
  const nmem::CovariateSchema schema =
      make_schema(path, categoricals, cols.time, cols.response, cols.id);
  return nmem::ingest_csv(path, schema, cols.time, cols.response, cols.id);
}

int run_simulate(Eigen::Index subjects, std::uint64_t seed, bool smooth,
                 const std::string& data_path, const std::string& truth_path) {
  const nmem::SimulationDesign design = nmem::default_design(subjects, seed, smooth);
  const nmem::SimulatedData sim = nmem::simulate(design);
  nmem::export_csv(sim.data, data_path);
  nmem::write_truth(sim.truth, truth_path);
  std::cout << "wrote " << data_path << " (" << sim.data.n_subjects()
            << " subjects, " << sim.data.total_obs << " observations) and "
            << truth_path << "\n";
  return 0;
}

int run_fit(const std::string& data_path, const IoColumns& cols,
            const std::vector<std::string>& categoricals,
            const std::string& config_path, std::uint64_t seed, int threads,
            bool no_select, const std::string& out_dir) {
  const nmem::LongitudinalDataset data = load_data(data_path, cols, categoricals);
  nmem::EmConfig cfg = load_config(config_path);
  cfg.workers = threads;
  if (no_select) {
    cfg.select_covariates = false;
    cfg.support.resize(static_cast<std::size_t>(data.n_covariates()));
    for (Eigen::Index j = 0; j < data.n_covariates(); ++j)
      cfg.support[static_cast<std::size_t>(j)] = j;
  }
  const nmem::FitReport report = nmem::fit_model(data, cfg, seed);

  fs::create_directories(out_dir);
  const auto path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };
  nmem::write_fit_report(report, path("fit_report.json"));
  nmem::write_classifications_csv(report, path("classifications.csv"));
  nmem::write_curves_csv(report, path("curves.csv"));
  nmem::write_trace_csv(report, path("trace.csv"));
  std::cout << "fit " << (report.converged ? "converged" : "did not converge")
            << " after " << report.outer_iters << " outer iterations; wrote "
            << out_dir << "/{fit_report.json,classifications.csv,curves.csv,trace.csv}\n";
  return 0;
}

int run_bootstrap(const std::string& data_path, const IoColumns& cols,
                  const std::vector<std::string>& categoricals,
                  const std::string& report_path, const std::string& config_path,
                  int replicates, std::uint64_t seed, int threads,
                  const std::string& out_path, const std::string& bands_path) {
  const nmem::LongitudinalDataset data = load_data(data_path, cols, categoricals);
  const nmem::FitReport fit = nmem::read_fit_report(report_path);
  nmem::EmConfig cfg = load_config(config_path);
  nmem::BootstrapConfig bcfg;
  bcfg.n_replicates = replicates;
  bcfg.seed = seed;
  bcfg.workers = threads;
  const nmem::BootstrapResult result =
      nmem::bootstrap_intervals(data, fit, cfg, bcfg);
  nmem::write_bootstrap(result, fit, out_path);
  nmem::write_curve_bands_csv(result, fit, bands_path);
  std::cout << result.n_converged << "/" << result.n_replicates
            << " replicates converged; wrote " << out_path << " and "
            << bands_path << "\n";
  return 0;
}

int run_classify(const std::string& data_path, const IoColumns& cols,
                 const std::vector<std::string>& categoricals,
                 const std::string& report_path, const std::string& out_path) {
  const nmem::FitReport fit = nmem::read_fit_report(report_path);
  nmem::LongitudinalDataset raw = load_data(data_path, cols, categoricals);
  if (raw.covariate_names != fit.covariate_names)
    throw nmem::input_error(
        "covariate columns do not match the fit report (expected the encoded "
        "columns of the original fit)");

  // Rescale onto the fit's time window so the saved spline applies.
  std::vector<nmem::SubjectRecord> records = std::move(raw.subjects);
  const nmem::LongitudinalDataset data =
      nmem::build_dataset(std::move(records), raw.covariate_names, fit.scaling);

  auto design = std::make_shared<nmem::ModelDesign>();
  design->basis = nmem::build_basis(data, fit.knots);
  design->grams = nmem::subject_grams(data);

  nmem::EmConfig cfg;
  cfg.select_covariates = false;
  const nmem::EmEngine engine(data, cfg, design);
  nmem::MixtureState state;
  state.logistic = fit.logistic;
  state.fits = fit.fits;
  state.theta_v = fit.variances.to_transformed();
  state.priors = nmem::predict_prior(data.covariate_matrix(), fit.logistic.beta0,
                                     fit.logistic.beta);
  engine.e_step(state);

  nmem::FitReport out;
  out.subject_ids.reserve(data.subjects.size());
  for (const auto& subj : data.subjects) out.subject_ids.push_back(subj.id);
  out.weights = state.weights;
  out.classifications.resize(static_cast<std::size_t>(state.weights.rows()));
  for (Eigen::Index i = 0; i < state.weights.rows(); ++i)
    out.classifications[static_cast<std::size_t>(i)] =
        state.weights(i, 0) >= cfg.class_threshold ? 0 : 1;
  nmem::write_classifications_csv(out, out_path);
  std::cout << "classified " << data.n_subjects() << " subjects; wrote "
            << out_path << "\n";
  return 0;
}

int run_score(const std::string& report_path, const std::string& truth_path,
              const std::string& out_path) {
  const nmem::FitReport fit = nmem::read_fit_report(report_path);
  const nmem::SimTruth truth = nmem::read_truth(truth_path);

  if (fit.subject_ids != truth.subject_ids)
    throw nmem::input_error("subject ids of fit and truth do not match");
  if (fit.classifications.size() != truth.labels.size())
    throw nmem::internal_error("label vectors disagree in length");

  // Mixture labels are arbitrary; score the better of the two alignments and
  // keep the same permutation for the curve comparison.
  const auto m = truth.labels.size();
  std::size_t agree = 0;
  for (std::size_t i = 0; i < m; ++i)
    agree += fit.classifications[i] == truth.labels[i];
  const bool swap = 2 * agree < m;
  const double accuracy =
      static_cast<double>(swap ? m - agree : agree) / static_cast<double>(m);

  if (fit.curve_grid.size() != truth.curve_grid.size() ||
      (fit.curve_grid - truth.curve_grid).cwiseAbs().maxCoeff() > 1e-12)
    throw nmem::input_error("fit and truth use different curve grids");
  Eigen::Vector2d mse;
  for (int k = 0; k < 2; ++k) {
    const int fit_col = swap ? 1 - k : k;
    mse[k] = (fit.curves.col(fit_col) - truth.curves.col(k)).squaredNorm() /
             static_cast<double>(truth.curve_grid.size());
  }

  std::map<std::string, bool> selected;
  for (const auto& name : fit.covariate_names) selected[name] = false;
  for (const auto idx : fit.selected)
    selected[fit.covariate_names[static_cast<std::size_t>(idx)]] = true;
  int false_included = 0, false_excluded = 0;
  for (std::size_t j = 0; j < truth.covariate_names.size(); ++j) {
    const auto it = selected.find(truth.covariate_names[j]);
    if (it == selected.end())
      throw nmem::input_error("covariate '" + truth.covariate_names[j] +
                              "' missing from the fit report");
    const bool truly_nonzero = truth.beta[static_cast<Eigen::Index>(j)] != 0.0;
    if (it->second && !truly_nonzero) ++false_included;
    if (!it->second && truly_nonzero) ++false_excluded;
  }

  json j;
  j["accuracy"] = accuracy;
  j["labels_swapped"] = swap;
  j["curve_mse_group1"] = mse[0];
  j["curve_mse_group2"] = mse[1];
  j["false_included"] = false_included;
  j["false_excluded"] = false_excluded;
  j["n_subjects"] = m;
  std::ofstream out(out_path);
  if (!out) throw nmem::input_error("cannot open " + out_path + " for writing");
  out << j.dump(2) << '\n';
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-group mixed-effects mixture models for longitudinal data"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset");
  Eigen::Index sim_subjects = 500;
  std::uint64_t sim_seed = 1;
  bool sim_smooth = true;
  std::string sim_data = "data.csv", sim_truth = "truth.json";
  sim->add_option("--subjects,-m", sim_subjects, "Number of subjects");
  sim->add_option("--seed", sim_seed, "Generator seed");
  sim->add_flag("--smooth,!--no-smooth", sim_smooth,
                "Include the smooth random effect (default on)");
  sim->add_option("--out", sim_data, "Output dataset CSV");
  sim->add_option("--truth", sim_truth, "Output truth JSON");

  // common data options
  IoColumns fit_cols, boot_cols, cls_cols;
  std::vector<std::string> fit_cats, boot_cats, cls_cats;

  // fit
  auto* fit = app.add_subcommand("fit", "Fit the mixture model to a dataset");
  std::string fit_data, fit_config, fit_out_dir = ".";
  std::uint64_t fit_seed = 1;
  int fit_threads = 1;
  bool fit_no_select = false;
  fit->add_option("--data", fit_data, "Input dataset CSV")->required();
  add_column_flags(fit, fit_cols);
  fit->add_option("--categorical", fit_cats,
                  "Categorical covariate, as name or name=reference_level");
  fit->add_option("--config", fit_config, "EM config file (key = value)");
  fit->add_option("--seed", fit_seed, "EM initialization seed");
  fit->add_option("--threads", fit_threads, "Worker thread cap");
  fit->add_flag("--no-select", fit_no_select,
                "Skip L1 covariate selection (keep all covariates)");
  fit->add_option("--out-dir", fit_out_dir, "Output directory");

  // bootstrap
  auto* boot = app.add_subcommand("bootstrap", "Parametric bootstrap intervals");
  std::string boot_data, boot_report, boot_config;
  std::string boot_out = "bootstrap.json", boot_bands = "curve_bands.csv";
  int boot_b = 1000, boot_threads = 1;
  std::uint64_t boot_seed = 1;
  boot->add_option("--data", boot_data, "Original dataset CSV")->required();
  add_column_flags(boot, boot_cols);
  boot->add_option("--categorical", boot_cats,
                   "Categorical covariate, as name or name=reference_level");
  boot->add_option("--report", boot_report, "Fit report JSON")->required();
  boot->add_option("--config", boot_config, "EM config file for the refits");
  boot->add_option("--replicates,-B", boot_b, "Number of replicates");
  boot->add_option("--seed", boot_seed, "Resampling seed");
  boot->add_option("--threads", boot_threads, "Worker thread cap");
  boot->add_option("--out", boot_out, "Output intervals JSON");
  boot->add_option("--bands", boot_bands, "Output curve-band CSV");

  // classify
  auto* cls = app.add_subcommand("classify", "Classify subjects with a saved fit");
  std::string cls_data, cls_report, cls_out = "classifications.csv";
  cls->add_option("--data", cls_data, "Dataset CSV")->required();
  add_column_flags(cls, cls_cols);
  cls->add_option("--categorical", cls_cats,
                  "Categorical covariate, as name or name=reference_level");
  cls->add_option("--report", cls_report, "Fit report JSON")->required();
  cls->add_option("--out", cls_out, "Output classifications CSV");

  // score
  auto* score = app.add_subcommand("score", "Score a fit against simulation truth");
  std::string score_report, score_truth, score_out = "score.json";
  score->add_option("--report", score_report, "Fit report JSON")->required();
  score->add_option("--truth", score_truth, "Truth JSON")->required();
  score->add_option("--out", score_out, "Output metrics JSON");

  try {
    app.parse(argc, argv);
    if (sim->parsed())
      return run_simulate(sim_subjects, sim_seed, sim_smooth, sim_data, sim_truth);
    if (fit->parsed())
      return run_fit(fit_data, fit_cols, fit_cats, fit_config, fit_seed,
                     fit_threads, fit_no_select, fit_out_dir);
    if (boot->parsed())
      return run_bootstrap(boot_data, boot_cols, boot_cats, boot_report,
                           boot_config, boot_b, boot_seed, boot_threads,
                           boot_out, boot_bands);
    if (cls->parsed())
      return run_classify(cls_data, cls_cols, cls_cats, cls_report, cls_out);
    if (score->parsed()) return run_score(score_report, score_truth, score_out);
    return 1;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cout << json{{"error", {{"kind", "bad_input"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 2;
  } catch (const nmem::Error& e) {
    const char* kind = e.kind() == nmem::Error::Kind::bad_input ? "bad_input"
                       : e.kind() == nmem::Error::Kind::numeric ? "numeric"
                                                                : "internal";
    std::cout << json{{"error", {{"kind", kind}, {"message", e.what()}}}}.dump()
              << "\n";
    return e.kind() == nmem::Error::Kind::bad_input  ? 2
           : e.kind() == nmem::Error::Kind::numeric  ? 3
                                                     : 4;
  } catch (const std::exception& e) {
    std::cout << json{{"error", {{"kind", "unexpected"}, {"message", e.what()}}}}.dump()
              << "\n";
    return 1;
  }
}
