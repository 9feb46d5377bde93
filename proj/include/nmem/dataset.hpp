#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>
#include <vector>

namespace nmem {

// Pipeline error with a coarse category so the CLI can map failures to exit
// codes and machine-readable JSON.
class Error : public std::runtime_error {
 public:
  enum class Kind { bad_input, numeric, internal };

  Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline Error input_error(const std::string& msg) {
  return Error(Error::Kind::bad_input, msg);
}
inline Error numeric_error(const std::string& msg) {
  return Error(Error::Kind::numeric, msg);
}
inline Error internal_error(const std::string& msg) {
  return Error(Error::Kind::internal, msg);
}

// Affine map between raw time units and the model scale [0,1].
struct TimeScaling {
  double t_min = 0.0;
  double t_max = 1.0;

  double to_scaled(double raw) const { return (raw - t_min) / (t_max - t_min); }
  double to_raw(double scaled) const { return t_min + scaled * (t_max - t_min); }
};

struct SubjectRecord {
  std::string id;
  Eigen::VectorXd times_raw;
  Eigen::VectorXd times_scaled;  // in [0,1], nondecreasing
  Eigen::VectorXd responses;
  Eigen::VectorXd covariates;  // encoded, same length for all subjects

  Eigen::Index n() const { return responses.size(); }
};

struct LongitudinalDataset {
  std::vector<SubjectRecord> subjects;
  std::vector<std::string> covariate_names;
  TimeScaling scaling;
  Eigen::Index total_obs = 0;  // N = sum of n_i

  Eigen::Index n_subjects() const { return static_cast<Eigen::Index>(subjects.size()); }
  Eigen::Index n_covariates() const {
    return static_cast<Eigen::Index>(covariate_names.size());
  }
  // m x p matrix of subject covariates.
  Eigen::MatrixXd covariate_matrix() const;
  // Consistency check of the stored invariants; throws on violation.
  void validate() const;
};

enum class ColumnKind { numeric, categorical };

struct CovariateSchema {
  struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::numeric;
    std::string reference;  // dropped level, categorical columns only
  };
  std::vector<Column> columns;
};

// (raw - t_min) / (t_max - t_min), with a range check on every element.
Eigen::VectorXd scale_times(const Eigen::VectorXd& raw, double t_min, double t_max);

// Long-format CSV: one row per (subject, time); covariates repeated per row;
// header mandatory. Rows are grouped by id (first-appearance order) and
// time-sorted within subject; times rescaled by the dataset-wide min/max.
LongitudinalDataset ingest_csv(const std::string& path, const CovariateSchema& schema,
                               const std::string& time_col,
                               const std::string& response_col,
                               const std::string& id_col);

// Mirrors the ingestion format (numeric covariates as encoded).
void export_csv(const LongitudinalDataset& data, const std::string& path,
                const std::string& time_col = "time",
                const std::string& response_col = "response",
                const std::string& id_col = "subject_id");

// Assembles a dataset from in-memory pieces, applying grouping, sorting,
// scaling and validation exactly as ingest_csv does. The overload with an
// explicit scaling uses that time window instead of the observed min/max
// (raw times must lie inside it); the simulator relies on this so generated
// data keeps its design time window even when the extremes are not drawn.
LongitudinalDataset build_dataset(std::vector<SubjectRecord> raw_subjects,
                                  std::vector<std::string> covariate_names);
LongitudinalDataset build_dataset(std::vector<SubjectRecord> raw_subjects,
                                  std::vector<std::string> covariate_names,
                                  TimeScaling scaling);

}  // namespace nmem
