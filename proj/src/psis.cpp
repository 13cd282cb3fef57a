#include "msm/psis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace msm {

GpdFit gpd_fit(Eigen::VectorXd x) {
  GpdFit fit;
  const int n = static_cast<int>(x.size());
  if (n < 5) return fit;
  std::sort(x.data(), x.data() + n);
  if (!(x[n - 1] > 0)) return fit;
  const double x_quart = x[static_cast<int>(std::floor(n / 4.0 + 0.5)) - 1];
  if (!(x_quart > 0)) return fit;

  const int m = 30 + static_cast<int>(std::floor(std::sqrt(static_cast<double>(n))));
  std::vector<double> b(m), prof(m);
  for (int j = 0; j < m; ++j) {
    b[j] = 1.0 / x[n - 1] + (1.0 - std::sqrt(static_cast<double>(m) / (j + 0.5))) / (3.0 * x_quart);
    double k = 0.0;
    for (int i = 0; i < n; ++i) k += std::log1p(-b[j] * x[i]);
    k /= n;
    prof[j] = n * (std::log(-b[j] / k) - k - 1.0);
  }
  const double pmax = *std::max_element(prof.begin(), prof.end());
  double wsum = 0.0, bhat = 0.0;
  for (int j = 0; j < m; ++j) {
    double w = std::exp(prof[j] - pmax);
    wsum += w;
    bhat += w * b[j];
  }
  bhat /= wsum;
  double khat = 0.0;
  for (int i = 0; i < n; ++i) khat += std::log1p(-bhat * x[i]);
  khat /= n;
  fit.sigma = -khat / bhat;
  // weakly informative prior on the shape, as in the PSIS reference procedure
  fit.k = (khat * n + 5.0) / (n + 10.0);
  fit.ok = std::isfinite(fit.k) && std::isfinite(fit.sigma) && fit.sigma > 0;
  return fit;
}

namespace {
double gpd_quantile(double p, double k, double sigma) {
  if (std::abs(k) < 1e-12) return -sigma * std::log1p(-p);
  return sigma * std::expm1(-k * std::log1p(-p)) / k;
}
}  // namespace

PsisResult pareto_smooth(const Eigen::VectorXd& log_weights, int min_m) {
  PsisResult out;
  out.log_weights = log_weights;
  const int M = static_cast<int>(log_weights.size());
  if (M < min_m) return out;

  const int m_tail =
      static_cast<int>(std::ceil(std::min(0.2 * M, 3.0 * std::sqrt(static_cast<double>(M)))));
  if (m_tail < 5) return out;

  std::vector<int> order(M);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return log_weights[a] < log_weights[b]; });

  const double shift = log_weights[order[M - 1]];
  const double log_cutoff = log_weights[order[M - m_tail - 1]] - shift;
  const double cutoff = std::exp(log_cutoff);
  Eigen::VectorXd exceed(m_tail);
  for (int z = 0; z < m_tail; ++z)
    exceed[z] = std::exp(log_weights[order[M - m_tail + z]] - shift) - cutoff;

  GpdFit fit = gpd_fit(exceed);
  if (!fit.ok) return out;  // degenerate tail (e.g. all weights equal): pass through
  out.khat = fit.k;
  const double wmax = 0.0;  // log scale, after shift
  for (int z = 0; z < m_tail; ++z) {
    double q = cutoff + gpd_quantile((z + 0.5) / m_tail, fit.k, fit.sigma);
    double lw = std::min(std::log(q), wmax);
    out.log_weights[order[M - m_tail + z]] = lw + shift;
  }
  out.smoothed = true;
  return out;
}

double normal_quantile(double p) {
  // Acklam's inverse normal CDF approximation
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p must be in (0,1)");
  const double plow = 0.02425, phigh = 1 - plow;
  double q, r;
  if (p < plow) {
    q = std::sqrt(-2 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  if (p > phigh) {
    q = std::sqrt(-2 * std::log(1 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  q = p - 0.5;
  r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
}

}  // namespace msm
