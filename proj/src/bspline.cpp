#include "msm/bspline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msm {

BSplineBasis::BSplineBasis(int degree, std::vector<double> interior_knots,
                           double left, double right)
    : degree_(degree), left_(left), right_(right) {
  if (degree < 0) throw std::invalid_argument("bspline: degree must be >= 0");
  if (!(right > left)) throw std::invalid_argument("bspline: right boundary must exceed left");
  double prev = left;
  for (double k : interior_knots) {
    if (!(k > prev)) throw std::invalid_argument("bspline: knots must be strictly increasing inside (left, right)");
    prev = k;
  }
  if (!interior_knots.empty() && !(interior_knots.back() < right))
    throw std::invalid_argument("bspline: interior knots must lie strictly inside the boundary");

  n_basis_ = static_cast<int>(interior_knots.size()) + degree + 1;
  knots_.assign(degree + 1, left);
  knots_.insert(knots_.end(), interior_knots.begin(), interior_knots.end());
  knots_.insert(knots_.end(), degree + 1, right);

  breaks_.push_back(left);
  breaks_.insert(breaks_.end(), interior_knots.begin(), interior_knots.end());
  breaks_.push_back(right);

  // Gauss-Legendre exact for polynomials of degree <= 2n-1; degree <= 3 in
  // practice, keep n = 4 to cover higher degrees comfortably.
  gl_nodes_ = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526};
  gl_weights_ = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538};
}

int BSplineBasis::find_span(double t) const {
  // span i such that knots_[i] <= t < knots_[i+1], with the right boundary
  // mapped into the last nonempty span
  int lo = degree_;
  int hi = n_basis_;  // == knots_.size() - degree - 1
  if (t >= knots_[hi]) return hi - 1;
  if (t <= knots_[lo]) return lo;
  auto it = std::upper_bound(knots_.begin() + lo, knots_.begin() + hi, t);
  return static_cast<int>(it - knots_.begin()) - 1;
}

Eigen::VectorXd BSplineBasis::eval(double t) const {
  t = std::clamp(t, left_, right_);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n_basis_);
  const int span = find_span(t);
  // de Boor: N[j] = B_{span-degree+j, degree}(t)
  std::vector<double> N(degree_ + 1, 0.0), l(degree_ + 1), r(degree_ + 1);
  N[0] = 1.0;
  for (int j = 1; j <= degree_; ++j) {
    l[j] = t - knots_[span + 1 - j];
    r[j] = knots_[span + j] - t;
    double saved = 0.0;
    for (int k = 0; k < j; ++k) {
      double denom = r[k + 1] + l[j - k];
      double tmp = denom > 0 ? N[k] / denom : 0.0;
      N[k] = saved + r[k + 1] * tmp;
      saved = l[j - k] * tmp;
    }
    N[j] = saved;
  }
  for (int j = 0; j <= degree_; ++j) {
    int idx = span - degree_ + j;
    if (idx >= 0 && idx < n_basis_) out[idx] = N[j];
  }
  return out;
}

Eigen::VectorXd BSplineBasis::integral(double t) const {
  t = std::clamp(t, left_, right_);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(n_basis_);
  for (size_t b = 0; b + 1 < breaks_.size(); ++b) {
    double a = breaks_[b];
    if (a >= t) break;
    double c = std::min(breaks_[b + 1], t);
    double mid = 0.5 * (a + c), half = 0.5 * (c - a);
    for (size_t q = 0; q < gl_nodes_.size(); ++q)
      acc += (half * gl_weights_[q]) * eval(mid + half * gl_nodes_[q]);
  }
  return acc;
}

}  // namespace msm
