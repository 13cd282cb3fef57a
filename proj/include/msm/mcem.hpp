#ifndef MSM_MCEM_HPP
#define MSM_MCEM_HPP

#include <cstdint>
#include <memory>
#include <vector>

#include "msm/markov.hpp"
#include "msm/model.hpp"
#include "msm/optim.hpp"
#include "msm/sampler.hpp"

namespace msm {

struct MCEMConfig {
  double ess_target = 25.0;     // initial per-subject effective-sample-size target
  double ess_factor = 1.3;      // pool augmentation factor (> 1)
  double ascent_alpha = 0.2;    // lower-bound level for accepting an M-step
  double stop_gamma = 0.05;     // upper-bound level for stopping
  double stop_tol = 1e-3;       // per-subject tolerance; total C = stop_tol * sum of weights
  int max_iter = 100;
  std::uint64_t seed = 1;
  int threads = 0;
  double ess_cap_factor = 100.0;  // hard cap on paths per subject, relative to target
  int min_paths_smoothing = 25;   // below this, weights pass through unsmoothed
  bool force_mcem = false;        // callers may use this to skip direct-MLE fast paths
  OptimOptions mstep;

  void validate() const;
};

struct PathEntry {
  SamplePath path;
  CompiledPath compiled;      // against the semi-Markov model
  double log_h = 0.0;         // surrogate complete-path log-density at theta'
  double log_f = 0.0;         // semi-Markov log-density at the current theta
  double log_nu = 0.0;        // raw log importance weight
  double nubar = 0.0;         // self-normalized smoothed weight
};

struct SubjectPool {
  int subject = -1;
  double target_ess = 0.0;
  double ess = 0.0;
  double khat = std::numeric_limits<double>::quiet_NaN();
  double log_r = 0.0;  // exact surrogate marginal log-likelihood of this subject
  int draw_rounds = 0;
  std::vector<PathEntry> paths;
};

struct Pool {
  std::vector<SubjectPool> subjects;
  long total_paths() const {
    long n = 0;
    for (const auto& s : subjects) n += static_cast<long>(s.paths.size());
    return n;
  }
};

struct ProposalDegeneracyError : std::runtime_error {
  ProposalDegeneracyError(const std::string& subject, double khat_, const std::string& what)
      : std::runtime_error(what), subject_id(subject), khat(khat_) {}
  std::string subject_id;
  double khat;
};

struct McemIteration {
  int iter = 0;
  double q = 0.0;          // Q at the candidate maximizer, current pool
  double dq = 0.0;
  double ase = 0.0;
  bool accepted = false;
  bool stopped = false;
  long n_paths = 0;
  double ess_min = 0, ess_q25 = 0, ess_med = 0, ess_q75 = 0, ess_max = 0;
  double khat_med = std::numeric_limits<double>::quiet_NaN();
  double khat_max = std::numeric_limits<double>::quiet_NaN();
};

struct McemResult {
  Eigen::VectorXd theta_u;
  Pool pool;
  std::vector<McemIteration> trace;
  bool converged = false;
  int iterations = 0;
  std::string message;
};

// The MCEM working state: frozen surrogate, per-subject proposal contexts,
// and the path pool with importance weights.
class McemEngine {
 public:
  McemEngine(const Model& model, const std::vector<CompiledSubject>& subjects,
             const MarkovSurrogate& surrogate, MCEMConfig config);

  // E-step: recompute semi-Markov densities at theta, smooth, normalize
  void importance_weights(const Eigen::VectorXd& theta_u);

  // importance-sampling estimate of the expected complete-data log-likelihood
  double q_estimate(const Eigen::VectorXd& theta_u) const;

  struct MStep {
    Eigen::VectorXd theta;
    double dq = 0.0;
    double ase = 0.0;
    OptimResult report;
  };
  MStep maximize_q(const Eigen::VectorXd& theta_start);

  // grow every subject's target ESS by ess_factor and draw until reached
  void augment_pool(const Eigen::VectorXd& theta_u);

  McemResult run(const Eigen::VectorXd& theta_init);

  const Pool& pool() const { return pool_; }
  Pool& pool() { return pool_; }
  const MarkovSurrogate& surrogate() const { return *surrogate_; }
  const Model& model() const { return model_; }
  const std::vector<CompiledSubject>& subjects() const { return *subjects_; }

  // initial semi-Markov parameters implied by the fitted surrogate
  static Eigen::VectorXd init_from_surrogate(const Model& model, const MarkovSurrogate& surrogate);

 private:
  void ensure_target_ess(int subject_index, const Eigen::VectorXd& theta_u);
  void reweight_subject(int subject_index, const Eigen::VectorXd& theta_u);
  void add_paths(int subject_index, int count);

  Model model_;
  const std::vector<CompiledSubject>* subjects_;
  const MarkovSurrogate* surrogate_;
  MCEMConfig config_;
  std::vector<std::unique_ptr<ProposalContext>> contexts_;
  Pool pool_;
};

// decision rules (exposed for tests and reuse)
bool ascent_decision(double dq, double ase, double alpha);
bool stopping_decision(double dq, double ase, double gamma, double tol_total);

McemResult run_mcem(const Model& model, const std::vector<CompiledSubject>& subjects,
                    const MarkovSurrogate& surrogate, const MCEMConfig& config,
                    const Eigen::VectorXd* theta_init = nullptr);

}  // namespace msm

#endif
