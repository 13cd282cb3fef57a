#ifndef MSM_BSPLINE_HPP
#define MSM_BSPLINE_HPP

#include <Eigen/Dense>
#include <vector>

namespace msm {

// Clamped B-spline basis on [left, right] with strictly increasing interior
// knots. n_basis = n_interior + degree + 1. Evaluation clamps t to the
// boundary; callers implement flat extrapolation via eval_flat/integral_flat.
class BSplineBasis {
 public:
  BSplineBasis() = default;
  BSplineBasis(int degree, std::vector<double> interior_knots, double left, double right);

  int n_basis() const { return n_basis_; }
  int degree() const { return degree_; }
  double left() const { return left_; }
  double right() const { return right_; }

  // basis values at t (t clamped to [left, right])
  Eigen::VectorXd eval(double t) const;
  // exact integral of each basis over [left, min(t, right)]
  Eigen::VectorXd integral(double t) const;

  // flat extrapolation beyond the right boundary: value frozen at right
  Eigen::VectorXd eval_flat(double t) const { return eval(std::min(t, right_)); }
  Eigen::VectorXd integral_flat(double t) const {
    Eigen::VectorXd v = integral(t);
    if (t > right_) v += (t - right_) * eval(right_);
    return v;
  }

 private:
  int find_span(double t) const;

  int degree_ = 0;
  int n_basis_ = 0;
  double left_ = 0, right_ = 0;
  std::vector<double> knots_;  // full clamped knot vector
  // Gauss-Legendre nodes/weights on [-1,1] used for exact per-interval integrals
  std::vector<double> gl_nodes_, gl_weights_;
  std::vector<double> breaks_;  // unique knot breakpoints
};

}  // namespace msm

#endif
