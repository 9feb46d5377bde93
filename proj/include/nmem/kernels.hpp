#pragma once

#include <Eigen/Core>

#include "nmem/dataset.hpp"

// Reproducing kernels of the Sobolev space W2^2[0,1] used for cubic smoothing
// splines, and the basis matrices shared by both mixture groups.
//
// The space splits as H0 (+) H1 with H0 = {f : f'' = 0} spanned by {1, t} and
// H1 carrying the roughness penalty. The kernels are polynomial:
//   k1(t) = t - 1/2
//   k2(t) = (k1(t)^2 - 1/12) / 2
//   k4(t) = (k1(t)^4 - k1(t)^2/2 + 7/240) / 24
//   R0(s,t) = 1 + k1(s) k1(t)
//   R1(s,t) = k2(s) k2(t) - k4(|s-t|)

namespace nmem {

constexpr double k1(double t) { return t - 0.5; }

constexpr double k2(double t) {
  const double a = k1(t);
  return 0.5 * (a * a - 1.0 / 12.0);
}

constexpr double k4(double t) {
  const double a = k1(t);
  const double a2 = a * a;
  return (a2 * a2 - 0.5 * a2 + 7.0 / 240.0) / 24.0;
}

constexpr double kernel_r0(double s, double t) { return 1.0 + k1(s) * k1(t); }

inline double kernel_r1(double s, double t) {
  return k2(s) * k2(t) - k4(s > t ? s - t : t - s);
}

// R1 Gram matrix over one time vector (n x n). Goes through the batch backend.
Eigen::MatrixXd r1_gram(const Eigen::VectorXd& t);

// R1 cross matrix, (len(s) x len(t)).
Eigen::MatrixXd r1_cross_matrix(const Eigen::VectorXd& s,
                                const Eigen::VectorXd& t);

// Basis matrices for the penalized least-squares systems. S and R have one
// row per observation in subject-stacked order; Q is the knot Gram matrix.
struct SplineBasis {
  Eigen::MatrixXd S;      // N x 2, columns {1, tau}
  Eigen::MatrixXd R;      // N x e, R1(tau_i, z_l)
  Eigen::MatrixXd Q;      // e x e, R1(z_l, z_k)
  Eigen::VectorXd knots;  // e distinct scaled times, increasing
  std::vector<Eigen::Index> subject_offsets;  // row offset of each subject in S/R

  Eigen::Index n_obs() const { return S.rows(); }
  Eigen::Index n_knots() const { return knots.size(); }
};

// Knots are all distinct scaled times when their count fits under knot_cap,
// otherwise knot_cap values at equally spaced quantile indices of the sorted
// distinct times. Throws if fewer than 2 distinct times exist.
SplineBasis build_basis(const LongitudinalDataset& data, int knot_cap = 64);

// Same basis matrices over an externally fixed knot vector (classification of
// new data against a saved fit).
SplineBasis build_basis(const LongitudinalDataset& data,
                        const Eigen::VectorXd& knots);

// Quantile-index knot selection on sorted distinct times (exposed for tests).
Eigen::VectorXd select_knots(const std::vector<double>& distinct_sorted,
                             int knot_cap);

}  // namespace nmem
