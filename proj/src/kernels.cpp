#include "nmem/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "nmem/simd/batch.hpp"

namespace nmem {

Eigen::MatrixXd r1_cross_matrix(const Eigen::VectorXd& s, const Eigen::VectorXd& t) {
  // Row-major fill through the batch backend, then map into Eigen's layout.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(
      s.size(), t.size());
  simd::r1_cross(s.data(), static_cast<std::size_t>(s.size()), t.data(),
                 static_cast<std::size_t>(t.size()), out.data());
  return out;
}

Eigen::MatrixXd r1_gram(const Eigen::VectorXd& t) {
  // Fill one triangle through the batch backend and mirror it; the backend's
  // row sweeps may round (i,j) and (j,i) differently, and downstream
  // factorizations assume exact symmetry.
  const Eigen::Index n = t.size();
  Eigen::MatrixXd out(n, n);
  std::vector<double> row(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    simd::r1_cross(t.data() + i, 1, t.data(), static_cast<std::size_t>(i) + 1,
                   row.data());
    for (Eigen::Index j = 0; j <= i; ++j) {
      out(i, j) = row[static_cast<std::size_t>(j)];
      out(j, i) = row[static_cast<std::size_t>(j)];
    }
  }
  return out;
}

Eigen::VectorXd select_knots(const std::vector<double>& distinct_sorted, int knot_cap) {
  const auto e = static_cast<Eigen::Index>(distinct_sorted.size());
  if (e < 2) throw input_error("need at least 2 distinct time points for a basis");
  if (knot_cap < 2) throw input_error("knot_cap must be >= 2");

  if (e <= knot_cap) {
    return Eigen::Map<const Eigen::VectorXd>(distinct_sorted.data(), e);
  }
  // Equally spaced quantile indices of the sorted distinct times. The index
  // stride is >= 1, so the selected knots are distinct members of the set.
  Eigen::VectorXd knots(knot_cap);
  for (int j = 0; j < knot_cap; ++j) {
    const double pos = static_cast<double>(j) * static_cast<double>(e - 1) /
                       static_cast<double>(knot_cap - 1);
    knots[j] = distinct_sorted[static_cast<std::size_t>(std::lround(pos))];
  }
  return knots;
}

namespace {

SplineBasis assemble_basis(const LongitudinalDataset& data, Eigen::VectorXd knots) {
  SplineBasis basis;
  basis.knots = std::move(knots);

  std::vector<double> all_times;
  all_times.reserve(static_cast<std::size_t>(data.total_obs));
  for (const auto& subj : data.subjects)
    for (Eigen::Index j = 0; j < subj.n(); ++j)
      all_times.push_back(subj.times_scaled[j]);

  const auto n = static_cast<Eigen::Index>(all_times.size());
  basis.S.resize(n, 2);
  basis.S.col(0).setOnes();
  basis.S.col(1) = Eigen::Map<const Eigen::VectorXd>(all_times.data(), n);
  basis.R = r1_cross_matrix(basis.S.col(1), basis.knots);
  basis.Q = r1_gram(basis.knots);
  // Dense knot sets leave the penalty Gram near-singular; a relative ridge
  // keeps its eigenvalues separated from the parametric null space.
  const double ridge = 1e-8 * basis.Q.trace() / static_cast<double>(basis.Q.rows());
  basis.Q.diagonal().array() += ridge;

  basis.subject_offsets.reserve(data.subjects.size() + 1);
  Eigen::Index off = 0;
  for (const auto& subj : data.subjects) {
    basis.subject_offsets.push_back(off);
    off += subj.n();
  }
  basis.subject_offsets.push_back(off);
  return basis;
}

}  // namespace

SplineBasis build_basis(const LongitudinalDataset& data, int knot_cap) {
  if (data.subjects.empty()) throw input_error("empty dataset");

  std::vector<double> distinct;
  distinct.reserve(static_cast<std::size_t>(data.total_obs));
  for (const auto& subj : data.subjects)
    for (Eigen::Index j = 0; j < subj.n(); ++j)
      distinct.push_back(subj.times_scaled[j]);
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

  return assemble_basis(data, select_knots(distinct, knot_cap));
}

SplineBasis build_basis(const LongitudinalDataset& data,
                        const Eigen::VectorXd& knots) {
  if (data.subjects.empty()) throw input_error("empty dataset");
  if (knots.size() < 2) throw input_error("need at least 2 knots");
  for (Eigen::Index j = 1; j < knots.size(); ++j)
    if (!(knots[j] > knots[j - 1]))
      throw input_error("knots must be strictly increasing");
  return assemble_basis(data, knots);
}

}  // namespace nmem
