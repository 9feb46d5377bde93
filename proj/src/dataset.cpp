#include "nmem/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace nmem {

namespace {

// Minimal RFC4180-style row parser: quoted fields, embedded commas/quotes.
std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_number(const std::string& text, const std::string& what, long row) {
  const char* begin = text.c_str();
  char* end = nullptr;
  const double value = std::strtod(begin, &end);
  while (end && *end == ' ') ++end;
  if (text.empty() || end == begin || (end && *end != '\0') || !std::isfinite(value)) {
    const std::string where = row > 0 ? "row " + std::to_string(row) + ": " : "";
    throw input_error(where + "non-numeric " + what + " value '" + text + "'");
  }
  return value;
}

std::size_t find_column(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw input_error("missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char ch : s) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out += "\"";
  return out;
}

}  // namespace

Eigen::VectorXd scale_times(const Eigen::VectorXd& raw, double t_min, double t_max) {
  if (!(t_min < t_max)) throw input_error("degenerate time range: t_min >= t_max");
  Eigen::VectorXd out(raw.size());
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    if (raw[i] < t_min || raw[i] > t_max)
      throw input_error("time value " + std::to_string(raw[i]) +
                        " outside scaling range");
    out[i] = (raw[i] - t_min) / (t_max - t_min);
  }
  return out;
}

Eigen::MatrixXd LongitudinalDataset::covariate_matrix() const {
  Eigen::MatrixXd x(n_subjects(), n_covariates());
  for (Eigen::Index i = 0; i < n_subjects(); ++i)
    x.row(i) = subjects[static_cast<std::size_t>(i)].covariates.transpose();
  return x;
}

void LongitudinalDataset::validate() const {
  Eigen::Index total = 0;
  const Eigen::Index p = n_covariates();
  for (const auto& subj : subjects) {
    if (subj.n() < 1) throw input_error("subject '" + subj.id + "' has zero rows");
    if (subj.times_raw.size() != subj.n() || subj.times_scaled.size() != subj.n())
      throw input_error("subject '" + subj.id + "' has inconsistent lengths");
    if (subj.covariates.size() != p)
      throw input_error("subject '" + subj.id + "' has wrong covariate length");
    for (Eigen::Index j = 0; j < subj.n(); ++j) {
      const double t = subj.times_scaled[j];
      if (t < 0.0 || t > 1.0)
        throw input_error("scaled time outside [0,1] for subject '" + subj.id + "'");
      if (j > 0 && t < subj.times_scaled[j - 1])
        throw input_error("times not sorted for subject '" + subj.id + "'");
    }
    total += subj.n();
  }
  if (total != total_obs) throw input_error("total_obs does not match subject data");
}

namespace {

LongitudinalDataset assemble_dataset(std::vector<SubjectRecord> raw_subjects,
                                     std::vector<std::string> covariate_names,
                                     const TimeScaling* forced) {
  if (raw_subjects.empty()) throw input_error("no subjects");

  double t_min = std::numeric_limits<double>::infinity();
  double t_max = -std::numeric_limits<double>::infinity();
  for (auto& subj : raw_subjects) {
    if (subj.n() < 1) throw input_error("subject '" + subj.id + "' has zero rows");
    // Stable time sort keeps tied measurements in input order.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(subj.n()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return subj.times_raw[a] < subj.times_raw[b];
    });
    Eigen::VectorXd traw(subj.n()), resp(subj.n());
    for (Eigen::Index j = 0; j < subj.n(); ++j) {
      traw[j] = subj.times_raw[order[static_cast<std::size_t>(j)]];
      resp[j] = subj.responses[order[static_cast<std::size_t>(j)]];
    }
    subj.times_raw = std::move(traw);
    subj.responses = std::move(resp);
    t_min = std::min(t_min, subj.times_raw.minCoeff());
    t_max = std::max(t_max, subj.times_raw.maxCoeff());
  }
  if (forced) {
    if (t_min < forced->t_min || t_max > forced->t_max)
      throw input_error("raw times outside the requested scaling window");
    t_min = forced->t_min;
    t_max = forced->t_max;
  }
  if (!(t_min < t_max))
    throw input_error("constant time column: cannot rescale to [0,1]");

  LongitudinalDataset data;
  data.scaling = TimeScaling{t_min, t_max};
  data.covariate_names = std::move(covariate_names);
  for (auto& subj : raw_subjects) {
    subj.times_scaled = scale_times(subj.times_raw, t_min, t_max);
    data.total_obs += subj.n();
    data.subjects.push_back(std::move(subj));
  }
  data.validate();
  return data;
}

}  // namespace

LongitudinalDataset build_dataset(std::vector<SubjectRecord> raw_subjects,
                                  std::vector<std::string> covariate_names) {
  return assemble_dataset(std::move(raw_subjects), std::move(covariate_names),
                          nullptr);
}

LongitudinalDataset build_dataset(std::vector<SubjectRecord> raw_subjects,
                                  std::vector<std::string> covariate_names,
                                  TimeScaling scaling) {
  return assemble_dataset(std::move(raw_subjects), std::move(covariate_names),
                          &scaling);
}

LongitudinalDataset ingest_csv(const std::string& path, const CovariateSchema& schema,
                               const std::string& time_col,
                               const std::string& response_col,
                               const std::string& id_col) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open file '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw input_error("empty file '" + path + "'");
  const std::vector<std::string> header = split_csv_row(line);

  const std::size_t id_idx = find_column(header, id_col);
  const std::size_t time_idx = find_column(header, time_col);
  const std::size_t resp_idx = find_column(header, response_col);
  std::vector<std::size_t> cov_idx;
  for (const auto& col : schema.columns) cov_idx.push_back(find_column(header, col.name));

  struct RawSubject {
    std::vector<double> times, responses;
    std::vector<std::string> cov_cells;  // from the subject's first row
  };
  std::vector<std::string> id_order;
  std::map<std::string, RawSubject> by_id;

  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_row(line);
    if (cells.size() != header.size())
      throw input_error("row " + std::to_string(row) + ": expected " +
                        std::to_string(header.size()) + " fields, got " +
                        std::to_string(cells.size()));
    const std::string& id = cells[id_idx];
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      id_order.push_back(id);
      it = by_id.emplace(id, RawSubject{}).first;
      for (const std::size_t ci : cov_idx) it->second.cov_cells.push_back(cells[ci]);
    }
    it->second.times.push_back(parse_number(cells[time_idx], "time", row));
    it->second.responses.push_back(parse_number(cells[resp_idx], "response", row));
  }
  if (id_order.empty()) throw input_error("file '" + path + "' has no data rows");

  // Covariate encoding: numeric columns pass through; categorical columns
  // expand to one indicator per non-reference level, levels sorted by name.
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> level_sets(schema.columns.size());
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    const auto& col = schema.columns[c];
    if (col.kind == ColumnKind::numeric) {
      names.push_back(col.name);
      continue;
    }
    std::vector<std::string> levels;
    for (const auto& id : id_order) {
      const std::string& val = by_id[id].cov_cells[c];
      if (val != col.reference &&
          std::find(levels.begin(), levels.end(), val) == levels.end())
        levels.push_back(val);
    }
    std::sort(levels.begin(), levels.end());
    level_sets[c] = levels;
    for (const auto& lv : levels) names.push_back(col.name + "_" + lv);
  }

  std::vector<SubjectRecord> subjects;
  subjects.reserve(id_order.size());
  for (const auto& id : id_order) {
    RawSubject& raw = by_id[id];
    SubjectRecord subj;
    subj.id = id;
    subj.times_raw = Eigen::Map<const Eigen::VectorXd>(
        raw.times.data(), static_cast<Eigen::Index>(raw.times.size()));
    subj.responses = Eigen::Map<const Eigen::VectorXd>(
        raw.responses.data(), static_cast<Eigen::Index>(raw.responses.size()));
    std::vector<double> enc;
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
      const auto& col = schema.columns[c];
      if (col.kind == ColumnKind::numeric) {
        enc.push_back(parse_number(raw.cov_cells[c],
                                   "covariate '" + col.name + "' for subject '" + id + "'",
                                   0));
      } else {
        for (const auto& lv : level_sets[c])
          enc.push_back(raw.cov_cells[c] == lv ? 1.0 : 0.0);
      }
    }
    subj.covariates = Eigen::Map<const Eigen::VectorXd>(
        enc.data(), static_cast<Eigen::Index>(enc.size()));
    subjects.push_back(std::move(subj));
  }

  return build_dataset(std::move(subjects), std::move(names));
}

void export_csv(const LongitudinalDataset& data, const std::string& path,
                const std::string& time_col, const std::string& response_col,
                const std::string& id_col) {
  std::ofstream out(path);
  if (!out) throw input_error("cannot write file '" + path + "'");
  out.precision(17);

  out << csv_quote(id_col) << ',' << csv_quote(time_col) << ','
      << csv_quote(response_col);
  for (const auto& name : data.covariate_names) out << ',' << csv_quote(name);
  out << '\n';
  for (const auto& subj : data.subjects) {
    for (Eigen::Index j = 0; j < subj.n(); ++j) {
      out << csv_quote(subj.id) << ',' << subj.times_raw[j] << ',' << subj.responses[j];
      for (Eigen::Index c = 0; c < subj.covariates.size(); ++c)
        out << ',' << subj.covariates[c];
      out << '\n';
    }
  }
  if (!out) throw input_error("failed writing '" + path + "'");
}

}  // namespace nmem
