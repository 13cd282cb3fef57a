#ifndef MSM_OPTIM_HPP
#define MSM_OPTIM_HPP

#include <Eigen/Dense>
#include <functional>
#include <string>

namespace msm {

// objective: returns f(x) and writes the gradient when grad != nullptr
using ObjectiveFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

struct OptimOptions {
  int max_iter = 500;
  double gtol = 1e-7;          // infinity norm of the gradient
  double ftol = 1e-12;         // relative decrease between accepted steps
  double diverge_limit = 40.0; // |x_i| beyond this flags a boundary/divergence
};

struct OptimResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  bool diverged = false;       // a coordinate ran to the diverge_limit
  std::string message;
};

// BFGS minimization with a strong-Wolfe line search.
OptimResult minimize_bfgs(const ObjectiveFn& fn, const Eigen::VectorXd& x0,
                          const OptimOptions& opts = {});

// central finite differences; wraps a value-only objective for minimize_bfgs
ObjectiveFn with_fd_gradient(std::function<double(const Eigen::VectorXd&)> f, double h = 1e-6);

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x, double h = 1e-6);
Eigen::MatrixXd fd_hessian(const std::function<double(const Eigen::VectorXd&)>& f,
                           const Eigen::VectorXd& x, double h = 1e-4);

}  // namespace msm

#endif
