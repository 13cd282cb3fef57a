#ifndef MSM_SAMPLER_HPP
#define MSM_SAMPLER_HPP

#include <Eigen/Dense>
#include <vector>

#include "msm/markov.hpp"
#include "msm/model.hpp"
#include "msm/rng.hpp"
#include "msm/subject_data.hpp"

namespace msm {

// Endpoint-conditioned CTMC sampling on one interval via uniformization.
// The generator is the substochastic restriction of the full surrogate
// generator to `allowed`: transitions into excluded states are dropped while
// diagonals keep full exit rates, so conditioning on the endpoint reproduces
// the exact unrestricted bridge law on candidate-consistent paths.
class BridgeSampler {
 public:
  BridgeSampler() = default;
  BridgeSampler(const Eigen::MatrixXd& lambda_full, StateSet allowed, double dt);

  const Eigen::MatrixXd& P() const { return P_; }
  double dt() const { return dt_; }

  struct IntervalPath {
    std::vector<double> jump_times;  // in (0, dt), sorted
    std::vector<int> states;         // state after each jump
    int n_uniformized = 0;           // candidate jumps including virtual ones
    double log_density = 0.0;        // conditional bridge log-density
  };

  // requires P()(a,b) > 0
  IntervalPath sample(int a, int b, Rng& rng);

 private:
  const Eigen::MatrixXd& rpow(int n);

  Eigen::MatrixXd lambda_;  // full generator (for density bookkeeping)
  Eigen::MatrixXd P_;       // exp(dt * restricted generator)
  Eigen::MatrixXd R_;       // I + restricted/mu
  double mu_ = 0.0;
  double dt_ = 0.0;
  std::vector<Eigen::MatrixXd> rpow_;
};

// Everything needed to draw data-conditioned surrogate paths for one subject:
// per-record transition matrices under candidate-set restrictions, exact
// segment weights for continuously observed records, and the subject's exact
// surrogate marginal log-likelihood (a byproduct of the forward pass).
class ProposalContext {
 public:
  ProposalContext(const MarkovSurrogate& surrogate, const CompiledSubject& subject);

  const CompiledSubject& subject() const { return *subject_; }
  double log_marginal() const { return log_marginal_; }  // log r_i(Y_i | theta')
  const Eigen::MatrixXd& lambda() const { return lambda_; }

  struct Skeleton {
    std::vector<int> states;  // J(t_0) .. J(t_L)
    double logp = 0.0;        // conditional probability of the sampled sequence
  };
  Skeleton ffbs_skeleton(Rng& rng) const;

  // interval fill for record `rec` conditioned on its endpoints
  BridgeSampler::IntervalPath sample_interval(int rec, int a, int b, Rng& rng) const;

  struct Proposal {
    SamplePath path;
    double log_surrogate = 0.0;  // unconditional surrogate density h_i(Z | theta')
    double log_proposal = 0.0;   // conditional density of the draw given the data
    int n_jumps = 0;
  };
  Proposal propose_path(Rng& rng) const;

 private:
  double segment_logdensity(int a, int b, double dt) const;

  const MarkovSurrogate* surrogate_ = nullptr;
  const CompiledSubject* subject_ = nullptr;
  Eigen::MatrixXd lambda_;
  struct Rec {
    double tstart = 0, tstop = 0;
    mutable BridgeSampler bridge;  // per-subject sampling is single-threaded
    Eigen::MatrixXd W;             // FFBS weight matrix (a,b)
  };
  std::vector<Rec> recs_;
  std::vector<Eigen::VectorXd> alphas_;  // filtered distributions at t_0..t_L
  std::vector<double> lognorm_;
  double log_marginal_ = 0.0;
};

// does `path` satisfy every record of `subject`?
bool concordant(const SamplePath& path, const SubjectData& subject);

struct RejectionResult {
  bool accepted = false;
  SamplePath path;
  int attempts = 0;
};

// Appendix-style baseline: forward-simulate the semi-Markov model and accept
// only concordant paths.
RejectionResult rejection_sample_path(const Model& model, const Eigen::VectorXd& theta_u,
                                      const SubjectData& subject,
                                      const std::vector<Eigen::VectorXd>& covx, Rng& rng,
                                      int max_attempts);

}  // namespace msm

#endif
