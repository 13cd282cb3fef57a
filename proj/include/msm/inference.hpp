#ifndef MSM_INFERENCE_HPP
#define MSM_INFERENCE_HPP

#include <map>
#include <string>
#include <vector>

#include "msm/mcem.hpp"
#include "msm/simulate.hpp"

namespace msm {

struct ValidationError : std::runtime_error {
  explicit ValidationError(std::vector<Finding> f)
      : std::runtime_error("input data failed validation"), findings(std::move(f)) {}
  std::vector<Finding> findings;
};

// Louis-identity observed information with importance weights: per subject,
// weighted E[-Hessian] - weighted E[score score^T] + (weighted mean score)
// (weighted mean score)^T, summed over subjects.
Eigen::MatrixXd observed_fisher(const Model& model, const Pool& pool,
                                const std::vector<CompiledSubject>& subjects,
                                const Eigen::VectorXd& theta_u, int threads = 0);

struct MarginalLoglik {
  double value = 0.0;
  double se = 0.0;
};

// log fhat = sum_i w_i [ log r_i(Y|theta') + log mean(raw weights) ], with the
// delta-method Monte Carlo variance; requires pool weights computed at theta.
MarginalLoglik marginal_loglik(const Pool& pool, const std::vector<CompiledSubject>& subjects);

struct FitResult {
  Model model;
  Eigen::VectorXd theta_u;
  Eigen::MatrixXd covariance;
  bool cov_warning = false;  // some eigenvalue < 1e-10
  MarginalLoglik loglik;
  double aic = 0.0, aic_se = 0.0, bic = 0.0;
  int n_params = 0;
  int n_subjects = 0;
  std::string method;  // "direct" or "mcem"
  bool converged = false;
  std::string message;
  Eigen::VectorXd subject_ess, subject_khat;
  std::vector<McemIteration> trace;
  MarkovSurrogate surrogate;
  std::uint64_t data_fingerprint = 0;
  std::uint64_t surrogate_fingerprint = 0;
};

std::uint64_t fingerprint_subjects(const std::vector<SubjectData>& subjects);
std::uint64_t fingerprint_surrogate(const MarkovSurrogate& surrogate);

// Full fit: validation, surrogate MLE, then either the direct Markov fast
// path (all hazards exponential) or ascent MCEM, plus post-fit uncertainty.
FitResult fit_model(const Model& model, const std::vector<SubjectData>& subjects,
                    const MCEMConfig& config);

// variant reusing an already-fitted surrogate (bootstrap refits, tests)
FitResult fit_model(const Model& model, const std::vector<SubjectData>& subjects,
                    const MCEMConfig& config, const MarkovSurrogate* surrogate,
                    const Eigen::VectorXd* warm_start,
                    const std::vector<double>* subject_weights);

struct AicComparison {
  struct Row {
    std::string label;
    double loglik = 0, loglik_se = 0;
    int p = 0;
    double aic = 0, aic_se = 0;
    double delta_aic = 0, delta_se = 0;
    bool distinguishable = true;  // |delta| > 2 * delta_se (baseline row: n/a)
  };
  std::vector<Row> rows;
};

// Delta table against the first fit (conventionally the Markov baseline).
// All fits must share the data and surrogate fingerprints.
AicComparison compare_fits(const std::vector<const FitResult*>& fits,
                           const std::vector<std::string>& labels);

struct BootstrapResult {
  Eigen::MatrixXd draws;  // B x P, constrained scale
  std::vector<std::string> names;
  int n_failed = 0;
  std::vector<int> failed_replicates;
};

// Bayesian bootstrap: per replicate, flat Dirichlet subject weights within
// each stratum (scaled to the stratum size), refit warm-started at the fit.
BootstrapResult bayesian_bootstrap(const FitResult& fit, const std::vector<SubjectData>& subjects,
                                   const MCEMConfig& config, int replicates,
                                   const std::string& strata_covariate, std::uint64_t seed,
                                   int threads = 0);

struct FunctionalCI {
  double estimate = 0.0;
  double lo = 0.0, hi = 0.0;
  bool defined = false;
};

// Asymptotic Monte Carlo intervals for functionals: draw parameters from
// N(theta_hat, covariance) on the unconstrained scale, simulate cohorts,
// summarize. Keys: "name|arm" for per-arm functionals, "name" for derived.
std::map<std::string, FunctionalCI> mc_functional_ci(
    const Model& model, const Eigen::VectorXd& theta_u, const Eigen::MatrixXd& covariance,
    bool cov_warning, const std::vector<Arm>& arms, const std::vector<FunctionalDef>& defs,
    const std::vector<DerivedDef>& derived, double horizon, int n_param_draws, int n_paths,
    double level, std::uint64_t seed, int threads = 0);

}  // namespace msm

#endif
