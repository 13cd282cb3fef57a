#ifndef MSM_MODEL_HPP
#define MSM_MODEL_HPP

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msm/bspline.hpp"
#include "msm/state_space.hpp"

namespace msm {

enum class HazardFamily { Exponential, Weibull, BSpline };

std::string family_name(HazardFamily f);

// Per-transition baseline intensity family plus proportional covariate
// effects. Positive parameters live on the log scale in the unconstrained
// parameterization:
//   exponential  log_rate                   eta(t) = lambda0
//   weibull      log_scale, log_shape       eta(t) = lambda0 * kappa * t^(kappa-1)
//   bspline      log_coef1..L               eta(t) = sum_l gamma_l B_l(t), flat right of the boundary
struct HazardSpec {
  Transition trans;
  HazardFamily family = HazardFamily::Exponential;
  std::vector<std::string> covariates;
  // bspline only
  int degree = 1;
  std::vector<double> interior_knots;
  double boundary_left = 0.0;
  double boundary_right = 0.0;
  // reuse another hazard's parameters (same family/covariates); used by the
  // Coxian expansion where replicated transitions share one rate
  int share_params_with = -1;
};

struct ParameterLayout {
  struct Entry {
    int hazard;
    std::string name;
    bool positive;
  };
  std::vector<Entry> entries;
  std::vector<int> base_off, base_cnt, cov_off, cov_cnt;  // per hazard

  int size() const { return static_cast<int>(entries.size()); }
  std::vector<std::string> names() const;
  int index_of(int hazard, const std::string& name) const;  // -1 if absent
  Eigen::VectorXd to_constrained(const Eigen::VectorXd& u) const;
  Eigen::VectorXd to_unconstrained(const Eigen::VectorXd& c) const;
};

using Covariates = std::map<std::string, double>;

// One subject's latent trajectory: entry/transition times T_0 < ... < T_N with
// states J_0..J_N, censored at censor_time >= T_N. Sojourn n is
// T_n - T_{n-1}; the final segment [T_N, censor_time] is right-censored.
struct SamplePath {
  int subject_index = -1;
  std::vector<double> times;
  std::vector<int> states;  // 0-based
  double censor_time = 0.0;

  int n_transitions() const { return static_cast<int>(times.size()) - 1; }
  int state_at(double t) const;  // J(t), t in [T_0, censor_time]
};

// Cached per-segment quantities so repeated likelihood evaluations at new
// parameter values avoid touching spline bases or logs.
struct CompiledExit {
  int hazard = -1;
  double xb_val = 0.0;           // placeholder, set by eval with beta
  Eigen::VectorXd x;             // covariate values, order = hazard's covariate list
  Eigen::VectorXd B, IB;         // spline basis / integrated basis at w (flat-extended)
};

struct CompiledSegment {
  double w = 0.0;
  double log_w = 0.0;
  int realized = -1;             // index into exits, -1 when censored
  std::vector<CompiledExit> exits;
};

struct CompiledPath {
  std::vector<CompiledSegment> segs;
};

// Semi-Markov multistate model: a state space plus one hazard per allowed
// transition (hazards indexed identically to space.transitions()).
class Model {
 public:
  Model() = default;
  Model(StateSpace space, std::vector<HazardSpec> hazards);

  const StateSpace& space() const { return space_; }
  const std::vector<HazardSpec>& hazards() const { return hazards_; }
  const ParameterLayout& layout() const { return layout_; }
  int n_params() const { return layout_.size(); }
  const BSplineBasis& basis(int hazard) const { return bases_[hazard]; }

  // covariate values resolved per hazard; throws on a referenced name missing
  // from the map
  std::vector<Eigen::VectorXd> resolve_covariates(const Covariates& values) const;

  double intensity(int hazard, double sojourn, const Covariates& covs,
                   const Eigen::VectorXd& theta_u) const;
  double cumulative_hazard(int hazard, double t0, double t1, const Covariates& covs,
                           const Eigen::VectorXd& theta_u) const;
  double survival_prob(int state, double sojourn, const Covariates& covs,
                       const Eigen::VectorXd& theta_u) const;

  void validate_path(const SamplePath& path) const;  // throws on structural violation

  CompiledPath compile_path(const SamplePath& path,
                            const std::vector<Eigen::VectorXd>& covx) const;

  double path_loglik(const CompiledPath& cp, const Eigen::VectorXd& theta_u) const;
  // returns loglik and adds weight * gradient into grad_accum
  double path_loglik_grad(const CompiledPath& cp, const Eigen::VectorXd& theta_u,
                          double weight, Eigen::VectorXd& grad_accum) const;
  // loglik, gradient and Hessian at theta_u (grad/hess overwritten)
  double path_loglik_deriv2(const CompiledPath& cp, const Eigen::VectorXd& theta_u,
                            Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const;

  // convenience wrapper: compile against covariates and evaluate
  double path_loglik(const SamplePath& path, const Covariates& covs,
                     const Eigen::VectorXd& theta_u) const;

 private:
  struct BaselineEval {
    double log_eta = 0.0;
    double cumhaz = 0.0;
    Eigen::VectorXd d_log_eta, d_cumhaz;
    Eigen::MatrixXd d2_log_eta, d2_cumhaz;
  };
  void eval_baseline(int hazard, const CompiledSegment& seg, const CompiledExit& ex,
                     const double* p, int order, bool want_log_eta, BaselineEval& out) const;

  StateSpace space_;
  std::vector<HazardSpec> hazards_;
  std::vector<BSplineBasis> bases_;
  ParameterLayout layout_;
};

}  // namespace msm

#endif
