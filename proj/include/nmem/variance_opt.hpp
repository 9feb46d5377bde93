#pragma once

#include <array>
#include <vector>

#include "nmem/covariance.hpp"
#include "nmem/spline.hpp"

namespace nmem {

// Per-subject material held fixed while the variance parameters move: group
// residuals, soft labels, and the smooth-kernel Gram matrices (cacheable
// across calls because they depend only on the observation times).
struct VarianceContext {
  const LongitudinalDataset* data = nullptr;
  const std::vector<Eigen::MatrixXd>* grams = nullptr;
  std::array<std::vector<Eigen::VectorXd>, 2> residuals;  // [group][subject]
  Eigen::MatrixXd weights;                                // m x 2
  Eigen::Index n_total = 0;
  int workers = 1;
};

// R1 Gram of each subject's scaled times.
std::vector<Eigen::MatrixXd> subject_grams(const LongitudinalDataset& data);

// Spectral form of each subject's model: with G_i = U D U' the smooth-kernel
// Gram, V*_ik = U (I + d_k D) U' + F C_k F' for F = [1 t] and C_k the 2x2
// intercept/slope block, so rotating residuals and F by U' once makes every
// objective evaluation O(n_i) via a rank-two Woodbury update. Entries depend
// only on the context's times, Grams and residuals.
struct VarianceCache {
  struct Subject {
    Eigen::VectorXd eig;                  // Gram eigenvalues, clamped at 0
    Eigen::MatrixXd ft;                   // U' [1 t], n x 2
    std::array<Eigen::VectorXd, 2> rt;    // U' r_ik per group
  };
  std::vector<Subject> subjects;
};

VarianceCache make_variance_cache(const VarianceContext& ctx);

VarianceContext make_variance_context(const LongitudinalDataset& data,
                                      const std::vector<Eigen::MatrixXd>& grams,
                                      const SplineBasis& basis,
                                      const std::array<SplineFit, 2>& fits,
                                      const Eigen::MatrixXd& weights);

struct ProfiledObjective {
  double value = 0.0;       // l_p
  double sigma2_hat = 0.0;  // closed-form error variance at this point
  Eigen::VectorXd gradient; // filled only when requested
};

// sigma2_hat = (1/N) sum_i sum_k w_ik r_ik' (V*_ik)^{-1} r_ik, where V* are
// unit-error-variance covariances built with ratio components. The
// SubjectCovariance entries must carry weight 1 (weights enter explicitly).
double profile_sigma2(const std::array<std::vector<Eigen::VectorXd>, 2>& residuals,
                      const Eigen::MatrixXd& weights,
                      const std::array<std::vector<SubjectCovariance>, 2>& v_star,
                      Eigen::Index n_total);

// l_p(theta) = N log(sum_ik w_ik r'V*^{-1}r) + sum_ik w_ik log|V*_ik| with
// V* built from the ratios (components / sigma2) implied by theta. Constant
// terms are dropped; differences of l_p match differences of the full
// marginal objective. Gradient by forward differences (step on the
// transformed scale); coordinates of one group only touch that group's
// terms, so each gradient sweep recomputes roughly half the model.
ProfiledObjective profiled_neg_loglik(const Eigen::VectorXd& theta_v,
                                      const VarianceContext& ctx,
                                      bool with_gradient = false,
                                      double fd_step = 1e-5);

// Same objective evaluated through a prebuilt cache; the cache must have been
// created from this context (the optimizer reuses one across its evaluations).
ProfiledObjective profiled_neg_loglik(const Eigen::VectorXd& theta_v,
                                      const VarianceContext& ctx,
                                      const VarianceCache& cache,
                                      bool with_gradient = false,
                                      double fd_step = 1e-5);

struct VarianceOptOptions {
  double bound = 12.0;
  double fd_step = 1e-5;
  double pg_tol = 1e-5;
  int max_iters = 200;
};

struct VarianceOptResult {
  Eigen::VectorXd theta;  // canonical: coordinate 0 is log sigma2_hat
  double l_p = 0.0;
  double sigma2_hat = 0.0;
  bool converged = false;
  int iterations = 0;
  int evaluations = 0;
};

// Bounded quasi-Newton descent on l_p from `start` (projected into the box).
// l_p is constant along the ray that scales every variance together, so the
// optimum is a ray; the returned theta is its canonical representative with
// the error variance set to the closed-form sigma2_hat.
VarianceOptResult optimize_variances(const Eigen::VectorXd& start,
                                     const VarianceContext& ctx,
                                     const VarianceOptOptions& opts = VarianceOptOptions{});

}  // namespace nmem
