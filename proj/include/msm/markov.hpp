#ifndef MSM_MARKOV_HPP
#define MSM_MARKOV_HPP

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "msm/model.hpp"
#include "msm/optim.hpp"
#include "msm/subject_data.hpp"

namespace msm {

struct InfeasibleSubjectError : std::runtime_error {
  explicit InfeasibleSubjectError(const std::string& subject)
      : std::runtime_error("subject '" + subject +
                           "' admits no state sequence consistent with the model"),
        subject_id(subject) {}
  std::string subject_id;
};

// Subject data resolved against a model: covariate vectors per hazard, a
// covariate-profile id shared by identical subjects, and per-record candidate
// machinery (the states allowed inside each snapshot interval are those that
// can still reach the record's candidate set).
struct CompiledSubject {
  int index = -1;
  SubjectData data;
  std::vector<Eigen::VectorXd> covx;
  int profile = -1;
  double weight = 1.0;  // subject weight (Bayesian bootstrap)
  struct Rec {
    double dt = 0;
    StateSet from = 0, to = 0;
    int obstype = 0;
    StateSet allowed = 0;
  };
  std::vector<Rec> recs;
  int initial_state = -1;
};

std::vector<CompiledSubject> compile_subjects(const Model& model,
                                              const std::vector<SubjectData>& subjects);
int n_profiles(const std::vector<CompiledSubject>& subjects);

// Time-homogeneous Markov model used as the importance-sampling proposal.
// Structurally it is a Model whose hazards are all exponential; this wrapper
// adds the intensity-matrix view and per-profile caches.
class MarkovSurrogate {
 public:
  MarkovSurrogate() = default;
  MarkovSurrogate(Model model, Eigen::VectorXd theta_u);

  const Model& model() const { return model_; }
  const Eigen::VectorXd& theta_u() const { return theta_u_; }

  // rate of transition h under covariate values x (resolved per hazard)
  double rate(int hazard, const std::vector<Eigen::VectorXd>& covx) const;

  // full intensity matrix: row sums zero
  Eigen::MatrixXd intensity_matrix(const std::vector<Eigen::VectorXd>& covx) const;
  // forbidden transitions zeroed and the diagonal rebalanced
  Eigen::MatrixXd intensity_matrix(const std::vector<Eigen::VectorXd>& covx,
                                   const std::vector<Transition>& forbidden) const;

  // cached full intensity matrix per covariate profile (built on first use)
  const Eigen::MatrixXd& profile_lambda(const CompiledSubject& subject) const;
  void freeze_profiles(const std::vector<CompiledSubject>& subjects);

 private:
  Model model_;
  Eigen::VectorXd theta_u_;
  std::vector<Eigen::MatrixXd> profile_cache_;
};

// matrix exponential of lambda * dt (scaling-and-squaring Pade)
Eigen::MatrixXd transition_matrix(const Eigen::MatrixXd& lambda, double dt);

// Substochastic restriction of a generator to `allowed`: rows/columns outside
// the set are zeroed but diagonals keep the full exit rates, so
// exp(dt * restriction) gives taboo-avoiding transition probabilities.
Eigen::MatrixXd restricted_generator(const Eigen::MatrixXd& lambda, StateSet allowed);

// Exact marginal log-likelihood of candidate-set panel data under the
// time-homogeneous Markov model, by forward recursion over records.
// Subject weights multiply each subject's contribution.
double markov_marginal_loglik(const MarkovSurrogate& surrogate,
                              const std::vector<CompiledSubject>& subjects);
double markov_marginal_loglik_subject(const MarkovSurrogate& surrogate,
                                      const CompiledSubject& subject);

struct MarkovFit {
  MarkovSurrogate surrogate;
  double loglik = 0.0;
  OptimResult report;
  bool converged = false;
  bool boundary = false;
};

// Quasi-Newton maximization of the exact Markov marginal likelihood on the
// unconstrained scale. `model` must be all-exponential.
MarkovFit fit_markov_mle(const Model& model, const std::vector<CompiledSubject>& subjects,
                         const Eigen::VectorXd* theta_init = nullptr,
                         const OptimOptions& opts = {});

// Replaces state `expand.from` with a Coxian chain of n_phases latent phases
// whose exits feed `expand.to`. Other exits of the expanded state are
// replicated across phases with tied rates; in-transitions enter phase 1.
struct CoxianExpansion {
  StateSpace latent;
  std::vector<HazardSpec> hazards;     // all exponential, with ties
  std::vector<int> to_observed;        // latent state -> observed state
  std::vector<int> entry_state;        // observed state -> latent entry state
  int n_phases = 1;

  StateSet latent_set(StateSet observed_set, bool initial) const;
  std::vector<SubjectData> map_subjects(const std::vector<SubjectData>& subjects) const;
};

CoxianExpansion coxian_expansion(const StateSpace& space, Transition expand, int n_phases,
                                 const std::vector<HazardSpec>& hazards);

}  // namespace msm

#endif
