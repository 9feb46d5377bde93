#include "nmem/box_qn.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "nmem/dataset.hpp"

namespace nmem {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd project(const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                        const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

// Minimizer of the quadratic model m(z) = g'z + z'Bz/2 along the projected
// steepest-descent path x(t) = P(x - t g), via the breakpoint walk.
Eigen::VectorXd cauchy_point(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                             const Eigen::MatrixXd& b, const Eigen::VectorXd& lo,
                             const Eigen::VectorXd& hi) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd t_break(n), d(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (g[i] > 0.0)
      t_break[i] = (x[i] - lo[i]) / g[i];
    else if (g[i] < 0.0)
      t_break[i] = (x[i] - hi[i]) / g[i];
    else
      t_break[i] = kInf;
    d[i] = t_break[i] > 0.0 ? -g[i] : 0.0;
  }

  std::vector<double> knots;
  for (Eigen::Index i = 0; i < n; ++i)
    if (t_break[i] > 0.0 && std::isfinite(t_break[i])) knots.push_back(t_break[i]);
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  knots.push_back(kInf);

  Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
  double t_cur = 0.0;
  for (const double t_next : knots) {
    if (d.isZero(0.0)) break;
    const double f1 = g.dot(d) + z.dot(b * d);
    if (f1 >= 0.0) break;
    const double f2 = d.dot(b * d);
    const double dt_star = f2 > 0.0 ? -f1 / f2 : kInf;
    const double dt_seg = t_next - t_cur;
    if (dt_star < dt_seg) {
      z += dt_star * d;
      break;
    }
    if (!std::isfinite(dt_seg)) break;
    z += dt_seg * d;
    t_cur = t_next;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (t_break[i] == t_next) {
        z[i] = (g[i] > 0.0 ? lo[i] : hi[i]) - x[i];  // land exactly on the bound
        d[i] = 0.0;
      }
    }
  }
  return project(x + z, lo, hi);
}

}  // namespace

BoxMinResult minimize_box_qn(const BoxObjective& objective, Eigen::VectorXd x0,
                             const Eigen::VectorXd& lower,
                             const Eigen::VectorXd& upper, const BoxMinOptions& opts) {
  const Eigen::Index n = x0.size();
  if (lower.size() != n || upper.size() != n)
    throw internal_error("box bounds do not match the variable count");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(lower[i] <= upper[i])) throw internal_error("empty box");

  BoxMinResult res;
  int evals = 0;

  const auto eval_soft = [&](const Eigen::VectorXd& x) {
    ++evals;
    try {
      return objective(x, nullptr);
    } catch (const Error&) {
      return kInf;
    }
  };
  const auto eval_grad = [&](const Eigen::VectorXd& x, double fx, Eigen::VectorXd& g) {
    g.resize(0);
    ++evals;
    objective(x, &g);
    if (g.size() == n) return;
    // Forward differences, flipped at the upper bound to stay in the box.
    g.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::VectorXd xs = x;
      double h = opts.fd_step;
      if (x[i] + h > upper[i]) h = -h;
      xs[i] = x[i] + h;
      ++evals;
      g[i] = (objective(xs, nullptr) - fx) / h;
    }
  };

  Eigen::VectorXd x = project(std::move(x0), lower, upper);
  double f = objective(x, nullptr);
  ++evals;
  if (!std::isfinite(f)) throw numeric_error("objective not finite at start");
  Eigen::VectorXd g;
  eval_grad(x, f, g);

  Eigen::MatrixXd b = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;

  const double eps = std::numeric_limits<double>::epsilon();
  res.message = "iteration limit";
  for (int it = 0; it < opts.max_iters; ++it) {
    res.iterations = it;
    const double pg = (x - project(x - g, lower, upper)).lpNorm<Eigen::Infinity>();
    if (pg <= opts.pg_tol) {
      res.converged = true;
      res.message = "projected gradient below tolerance";
      break;
    }

    const Eigen::VectorXd xc = cauchy_point(x, g, b, lower, upper);

    // Newton refinement over the variables free at the Cauchy point.
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i)
      if (xc[i] > lower[i] && xc[i] < upper[i]) free.push_back(i);
    Eigen::VectorXd x_trial = xc;
    if (!free.empty()) {
      const auto nf = static_cast<Eigen::Index>(free.size());
      Eigen::MatrixXd bff(nf, nf);
      Eigen::VectorXd rhs(nf);
      const Eigen::VectorXd gm = g + b * (xc - x);  // model gradient at xc
      for (Eigen::Index a = 0; a < nf; ++a) {
        rhs[a] = -gm[free[static_cast<std::size_t>(a)]];
        for (Eigen::Index c = 0; c < nf; ++c)
          bff(a, c) = b(free[static_cast<std::size_t>(a)],
                        free[static_cast<std::size_t>(c)]);
      }
      Eigen::LDLT<Eigen::MatrixXd> ldlt(bff);
      Eigen::VectorXd df = ldlt.info() == Eigen::Success ? ldlt.solve(rhs).eval() : rhs;
      if (!df.allFinite()) df = rhs;
      for (Eigen::Index a = 0; a < nf; ++a)
        x_trial[free[static_cast<std::size_t>(a)]] += df[a];
      x_trial = project(x_trial, lower, upper);
    }

    Eigen::VectorXd p = x_trial - x;
    double slope = g.dot(p);
    if (slope >= 0.0) {
      p = xc - x;
      slope = g.dot(p);
      if (slope >= -1e-16 * std::max(1.0, std::abs(f))) {
        res.converged = true;
        res.message = "no descent direction (stationary within the box)";
        break;
      }
    }

    // Backtracking Armijo search along the in-box segment x -> x + p.
    double alpha = 1.0;
    double f_new = kInf;
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int ls = 0; ls < opts.max_line_steps; ++ls) {
      x_new = x + alpha * p;
      f_new = eval_soft(x_new);
      if (f_new <= f + 1e-4 * alpha * slope) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      res.message = "line search failed";
      break;
    }

    Eigen::VectorXd g_new;
    eval_grad(x_new, f_new, g_new);

    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-10 * s.norm() * yv.norm()) {
      if (!scaled) {
        b = (yv.dot(yv) / sy) * Eigen::MatrixXd::Identity(n, n);
        scaled = true;
      }
      const Eigen::VectorXd bs = b * s;
      const double sbs = s.dot(bs);
      if (sbs > 0.0) b -= (bs * bs.transpose()) / sbs;
      b += (yv * yv.transpose()) / sy;
    }

    const double decrease = f - f_new;
    x = std::move(x_new);
    f = f_new;
    g = std::move(g_new);

    if (decrease <= opts.f_tol_factor * eps * std::max({std::abs(f), 1.0})) {
      res.converged = true;
      res.message = "function decrease below tolerance";
      res.iterations = it + 1;
      break;
    }
  }

  res.x = std::move(x);
  res.f = f;
  res.grad = std::move(g);
  res.evaluations = evals;
  return res;
}

}  // namespace nmem
