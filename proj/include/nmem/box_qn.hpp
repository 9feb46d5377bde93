#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>

namespace nmem {

// Objective callback returning the value. When `grad` is non-null the
// implementation may resize it to x.size() and fill it; leaving it empty asks
// the optimizer to build the gradient by forward differences on its own.
using BoxObjective =
    std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct BoxMinOptions {
  int max_iters = 200;
  double pg_tol = 1e-5;        // sup-norm of the projected gradient
  double f_tol_factor = 1e7;   // stop when decrease < factor * eps * |f|
  int max_line_steps = 40;
  double fd_step = 1e-5;       // forward-difference step (absolute)
};

struct BoxMinResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  int evaluations = 0;  // objective calls, gradient sweeps included
  bool converged = false;
  std::string message;
};

// Quasi-Newton minimization over a box, in the L-BFGS-B family: each
// iteration walks the projected steepest-descent path of a dense BFGS
// quadratic model to its generalized Cauchy point, refines over the free
// variables with a Newton step clipped to the box, and backtracks along the
// resulting direction under an Armijo test. Objective evaluations that throw
// a numeric error during the line search are treated as +infinity, so the
// search backs away from the failing region.
BoxMinResult minimize_box_qn(const BoxObjective& objective, Eigen::VectorXd x0,
                             const Eigen::VectorXd& lower,
                             const Eigen::VectorXd& upper,
                             const BoxMinOptions& opts = BoxMinOptions{});

}  // namespace nmem
