#include "msm/optim.hpp"

#include <cmath>

namespace msm {

namespace {

struct LinePoint {
  double a, f, g;  // step, value, directional derivative
};

// Nocedal & Wright zoom: interval [lo, hi] brackets a strong-Wolfe point
double zoom(const std::function<void(double, LinePoint&)>& eval, LinePoint lo, LinePoint hi,
            double f0, double g0, double c1, double c2, LinePoint& out) {
  for (int it = 0; it < 40; ++it) {
    // quadratic interpolation, safeguarded toward the midpoint
    double a = 0.5 * (lo.a + hi.a);
    double denom = 2.0 * (hi.f - lo.f - lo.g * (hi.a - lo.a));
    if (std::abs(denom) > 1e-300) {
      double cand = lo.a + lo.g * (hi.a - lo.a) * (hi.a - lo.a) * (-1.0) / denom;
      double lo_b = std::min(lo.a, hi.a), hi_b = std::max(lo.a, hi.a);
      double margin = 0.1 * (hi_b - lo_b);
      if (cand > lo_b + margin && cand < hi_b - margin) a = cand;
    }
    LinePoint p;
    eval(a, p);
    if (p.f > f0 + c1 * a * g0 || p.f >= lo.f) {
      hi = p;
    } else {
      if (std::abs(p.g) <= -c2 * g0) {
        out = p;
        return a;
      }
      if (p.g * (hi.a - lo.a) >= 0) hi = lo;
      lo = p;
    }
    if (std::abs(hi.a - lo.a) < 1e-14 * std::max(1.0, std::abs(lo.a))) break;
  }
  out = lo;
  return lo.a;
}

// strong-Wolfe line search (Nocedal & Wright alg. 3.5); returns accepted step
// or 0 on failure
double line_search(const ObjectiveFn& fn, const Eigen::VectorXd& x, const Eigen::VectorXd& d,
                   double f0, double g0, Eigen::VectorXd& x_new, double& f_new,
                   Eigen::VectorXd& grad_new, int& evals) {
  const double c1 = 1e-4, c2 = 0.9;
  Eigen::VectorXd xt(x.size()), gt(x.size());
  auto eval = [&](double a, LinePoint& p) {
    xt = x + a * d;
    p.a = a;
    p.f = fn(xt, &gt);
    p.g = gt.dot(d);
    ++evals;
  };
  LinePoint prev{0.0, f0, g0}, cur;
  double a = 1.0;
  const double a_max = 1e4;
  for (int it = 0; it < 30; ++it) {
    eval(a, cur);
    if (!std::isfinite(cur.f)) {  // step into an invalid region: shrink hard
      a *= 0.25;
      continue;
    }
    if (cur.f > f0 + c1 * a * g0 || (it > 0 && cur.f >= prev.f)) {
      LinePoint res;
      zoom(eval, prev, cur, f0, g0, c1, c2, res);
      cur = res;
      break;
    }
    if (std::abs(cur.g) <= -c2 * g0) break;
    if (cur.g >= 0) {
      LinePoint res;
      zoom(eval, cur, prev, f0, g0, c1, c2, res);
      cur = res;
      break;
    }
    prev = cur;
    a = std::min(2.0 * a, a_max);
    if (a >= a_max) break;
  }
  if (!(cur.f < f0) || !std::isfinite(cur.f)) return 0.0;
  x_new = x + cur.a * d;
  f_new = fn(x_new, &grad_new);
  ++evals;
  return cur.a;
}

}  // namespace

OptimResult minimize_bfgs(const ObjectiveFn& fn, const Eigen::VectorXd& x0,
                          const OptimOptions& opts) {
  const int n = static_cast<int>(x0.size());
  OptimResult res;
  res.x = x0;
  res.grad.resize(n);
  res.f = fn(res.x, &res.grad);
  res.evaluations = 1;
  if (!std::isfinite(res.f)) {
    res.message = "objective not finite at the starting point";
    return res;
  }
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd x_new(n), g_new(n);
  bool just_reset = true;
  for (res.iterations = 0; res.iterations < opts.max_iter; ++res.iterations) {
    if (res.grad.lpNorm<Eigen::Infinity>() < opts.gtol) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      return res;
    }
    Eigen::VectorXd d = -H * res.grad;
    double g0 = res.grad.dot(d);
    if (g0 >= 0) {  // not a descent direction: reset to steepest descent
      H.setIdentity();
      d = -res.grad;
      g0 = res.grad.dot(d);
      just_reset = true;
    }
    double f_new;
    double step = line_search(fn, res.x, d, res.f, g0, x_new, f_new, g_new, res.evaluations);
    if (step == 0.0) {
      if (!just_reset) {
        H.setIdentity();
        just_reset = true;
        continue;
      }
      res.message = "line search failed";
      return res;
    }
    just_reset = false;
    Eigen::VectorXd s = x_new - res.x;
    Eigen::VectorXd y = g_new - res.grad;
    double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      double rho = 1.0 / sy;
      Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      Eigen::MatrixXd V = I - rho * s * y.transpose();
      H = V * H * V.transpose() + rho * s * s.transpose();
    }
    double f_prev = res.f;
    res.x = x_new;
    res.f = f_new;
    res.grad = g_new;
    if (res.x.lpNorm<Eigen::Infinity>() > opts.diverge_limit) {
      res.diverged = true;
      res.message = "a parameter reached the divergence limit (likely a boundary solution)";
      return res;
    }
    if (std::abs(f_prev - res.f) <= opts.ftol * std::max(1.0, std::abs(f_prev)) &&
        res.grad.lpNorm<Eigen::Infinity>() < 1e-4) {
      res.converged = true;
      res.message = "function change below tolerance";
      return res;
    }
  }
  res.message = "maximum iterations reached";
  return res;
}

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xt = x;
  for (int i = 0; i < x.size(); ++i) {
    double hi = h * std::max(1.0, std::abs(x[i]));
    xt[i] = x[i] + hi;
    double fp = f(xt);
    xt[i] = x[i] - hi;
    double fm = f(xt);
    xt[i] = x[i];
    g[i] = (fp - fm) / (2.0 * hi);
  }
  return g;
}

Eigen::MatrixXd fd_hessian(const std::function<double(const Eigen::VectorXd&)>& f,
                           const Eigen::VectorXd& x, double h) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd H(n, n);
  Eigen::VectorXd xt = x;
  const double f0 = f(x);
  std::vector<double> hs(n);
  for (int i = 0; i < n; ++i) hs[i] = h * std::max(1.0, std::abs(x[i]));
  for (int i = 0; i < n; ++i) {
    xt[i] = x[i] + hs[i];
    double fp = f(xt);
    xt[i] = x[i] - hs[i];
    double fm = f(xt);
    xt[i] = x[i];
    H(i, i) = (fp - 2.0 * f0 + fm) / (hs[i] * hs[i]);
    for (int j = i + 1; j < n; ++j) {
      xt[i] = x[i] + hs[i];
      xt[j] = x[j] + hs[j];
      double fpp = f(xt);
      xt[j] = x[j] - hs[j];
      double fpm = f(xt);
      xt[i] = x[i] - hs[i];
      double fmm = f(xt);
      xt[j] = x[j] + hs[j];
      double fmp = f(xt);
      xt[i] = x[i];
      xt[j] = x[j];
      H(i, j) = H(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * hs[i] * hs[j]);
    }
  }
  return H;
}

ObjectiveFn with_fd_gradient(std::function<double(const Eigen::VectorXd&)> f, double h) {
  return [f = std::move(f), h](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    if (grad) *grad = fd_gradient(f, x, h);
    return f(x);
  };
}

}  // namespace msm
