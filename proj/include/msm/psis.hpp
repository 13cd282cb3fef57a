#ifndef MSM_PSIS_HPP
#define MSM_PSIS_HPP

#include <Eigen/Dense>

namespace msm {

struct GpdFit {
  double k = 0.0;      // shape
  double sigma = 0.0;  // scale
  bool ok = false;
};

// Zhang-Stephens profile-posterior fit of the generalized Pareto distribution
// to exceedances (sorted or not), with the weakly informative shape prior.
GpdFit gpd_fit(Eigen::VectorXd exceedances);

struct PsisResult {
  Eigen::VectorXd log_weights;  // smoothed (input returned unchanged when not smoothed)
  double khat = std::numeric_limits<double>::quiet_NaN();
  bool smoothed = false;
};

// Pareto-smoothed importance sampling: fit a GPD to the largest
// ceil(min(0.2 M, 3 sqrt(M))) weights and replace them by expected order
// statistics of the fitted tail, capped at the raw maximum. Weights are
// returned on the log scale; below `min_m` weights are passed through with
// khat unavailable.
PsisResult pareto_smooth(const Eigen::VectorXd& log_weights, int min_m = 25);

// standard normal quantile (Acklam's rational approximation, |err| < 1.2e-9)
double normal_quantile(double p);

}  // namespace msm

#endif
