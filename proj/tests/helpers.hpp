#pragma once

#include <unistd.h>

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "nmem/dataset.hpp"

namespace testutil {

// Unique scratch directory under the system temp root, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::uint64_t counter = 0;
    const auto base = std::filesystem::temp_directory_path();
    path_ = base / ("nmem_test_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline nmem::SubjectRecord subject(const std::string& id, std::vector<double> times,
                                   std::vector<double> responses,
                                   std::vector<double> covariates = {}) {
  nmem::SubjectRecord rec;
  rec.id = id;
  rec.times_raw = Eigen::Map<Eigen::VectorXd>(times.data(),
                                              static_cast<Eigen::Index>(times.size()));
  rec.responses = Eigen::Map<Eigen::VectorXd>(
      responses.data(), static_cast<Eigen::Index>(responses.size()));
  rec.covariates = Eigen::Map<Eigen::VectorXd>(
      covariates.data(), static_cast<Eigen::Index>(covariates.size()));
  return rec;
}

// Random dataset on [0,1] raw times (so scaled == raw up to the observed
// range), optional covariates, responses ~ N(0,1).
inline nmem::LongitudinalDataset random_dataset(std::uint64_t seed, int m, int n_min,
                                                int n_max, int p = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> n_dist(n_min, n_max);
  std::uniform_real_distribution<double> t_dist(0.0, 1.0);
  std::normal_distribution<double> y_dist(0.0, 1.0);

  std::vector<nmem::SubjectRecord> subs;
  for (int i = 0; i < m; ++i) {
    const int n = n_dist(rng);
    std::vector<double> times, ys, covs;
    times.reserve(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) times.push_back(t_dist(rng));
    // Force the full observed range so scaled times equal raw ones.
    if (i == 0) {
      times.front() = 0.0;
      times.back() = 1.0;
    }
    for (int j = 0; j < n; ++j) ys.push_back(y_dist(rng));
    for (int k = 0; k < p; ++k) covs.push_back(y_dist(rng));
    subs.push_back(subject("r" + std::to_string(i + 1), times, ys, covs));
  }
  std::vector<std::string> names;
  for (int k = 0; k < p; ++k) names.push_back("x" + std::to_string(k + 1));
  return nmem::build_dataset(std::move(subs), std::move(names));
}

}  // namespace testutil
