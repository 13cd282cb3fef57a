#include "msm/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "msm/simulate.hpp"

namespace msm {

BridgeSampler::BridgeSampler(const Eigen::MatrixXd& lambda_full, StateSet allowed, double dt)
    : lambda_(lambda_full), dt_(dt) {
  const int K = static_cast<int>(lambda_full.rows());
  Eigen::MatrixXd sub = restricted_generator(lambda_full, allowed);
  P_ = transition_matrix(sub, dt);
  double max_exit = 0.0;
  for (int k = 0; k < K; ++k)
    if (contains(allowed, k)) max_exit = std::max(max_exit, -sub(k, k));
  mu_ = 1.5 * max_exit;
  if (mu_ > 0) {
    R_ = Eigen::MatrixXd::Identity(K, K) + sub / mu_;
  } else {
    R_ = Eigen::MatrixXd::Identity(K, K);
  }
  rpow_.push_back(Eigen::MatrixXd::Identity(K, K));
  rpow_.push_back(R_);
}

const Eigen::MatrixXd& BridgeSampler::rpow(int n) {
  while (static_cast<int>(rpow_.size()) <= n) rpow_.push_back(rpow_.back() * R_);
  return rpow_[n];
}

BridgeSampler::IntervalPath BridgeSampler::sample(int a, int b, Rng& rng) {
  IntervalPath out;
  const double p_ab = P_(a, b);
  if (!(p_ab > 0))
    throw std::runtime_error("bridge: endpoint pair has zero transition probability");
  if (mu_ == 0.0) {
    if (a != b) throw std::runtime_error("bridge: no dynamics but endpoints differ");
    out.log_density = 0.0;
    return out;
  }
  // jump count conditional on the endpoints
  const double mt = mu_ * dt_;
  double pois = std::exp(-mt);
  double cum = (a == b) ? pois / p_ab : 0.0;
  int n = 0;
  const double u = rng.uniform();
  while (cum < u) {
    ++n;
    if (n > 100000) throw std::runtime_error("bridge: jump-count sampling failed to terminate");
    pois *= mt / n;
    cum += pois * rpow(n)(a, b) / p_ab;
    if (1.0 - cum < 1e-10) break;  // truncate the conditional tail
  }
  out.n_uniformized = n;
  if (n > 0) {
    std::vector<double> times(n);
    for (int i = 0; i < n; ++i) times[i] = rng.uniform() * dt_;
    std::sort(times.begin(), times.end());
    std::vector<int> states(n + 1);
    states[0] = a;
    const int K = static_cast<int>(R_.rows());
    std::vector<double> w(K);
    for (int k = 1; k < n; ++k) {
      const auto& tail = rpow(n - k);
      for (int s = 0; s < K; ++s) w[s] = R_(states[k - 1], s) * tail(s, b);
      states[k] = rng.categorical(w, K);
    }
    states[n] = b;
    for (int k = 1; k <= n; ++k) {
      if (states[k] == states[k - 1]) continue;  // virtual jump
      out.jump_times.push_back(times[k - 1]);
      out.states.push_back(states[k]);
    }
  }
  // density of the realized bridge: full-generator segment density / p_ab
  double ld = 0.0;
  int cur = a;
  double seg_start = 0.0;
  for (size_t k = 0; k < out.states.size(); ++k) {
    ld += lambda_(cur, cur) * (out.jump_times[k] - seg_start);
    ld += std::log(lambda_(cur, out.states[k]));
    seg_start = out.jump_times[k];
    cur = out.states[k];
  }
  ld += lambda_(cur, cur) * (dt_ - seg_start);
  out.log_density = ld - std::log(p_ab);
  return out;
}

ProposalContext::ProposalContext(const MarkovSurrogate& surrogate, const CompiledSubject& subject)
    : surrogate_(&surrogate), subject_(&subject) {
  lambda_ = surrogate.intensity_matrix(subject.covx);
  const int K = static_cast<int>(lambda_.rows());
  recs_.reserve(subject.recs.size());
  double t = subject.data.t0();
  for (const auto& rec : subject.recs) {
    Rec r;
    r.tstart = t;
    r.tstop = t + rec.dt;
    t = r.tstop;
    r.W = Eigen::MatrixXd::Zero(K, K);
    if (rec.obstype == 1) {
      int a = first_state(rec.from), b = first_state(rec.to);
      r.W(a, b) = std::exp(segment_logdensity(a, b, rec.dt));
    } else {
      r.bridge = BridgeSampler(lambda_, rec.allowed, rec.dt);
      for (int a = 0; a < K; ++a)
        for (int b = 0; b < K; ++b)
          if (contains(rec.to, b)) r.W(a, b) = r.bridge.P()(a, b);
    }
    recs_.push_back(std::move(r));
  }
  // forward filtering; log_marginal accumulates the scaling constants
  alphas_.resize(recs_.size() + 1);
  lognorm_.resize(recs_.size());
  alphas_[0] = Eigen::VectorXd::Zero(K);
  alphas_[0][subject.initial_state] = 1.0;
  for (size_t j = 0; j < recs_.size(); ++j) {
    Eigen::VectorXd a = recs_[j].W.transpose() * alphas_[j];
    double c = a.sum();
    if (!(c > 0)) throw InfeasibleSubjectError(subject.data.id);
    alphas_[j + 1] = a / c;
    lognorm_[j] = std::log(c);
    log_marginal_ += lognorm_[j];
  }
}

double ProposalContext::segment_logdensity(int a, int b, double dt) const {
  double ld = lambda_(a, a) * dt;
  if (a != b) {
    if (!(lambda_(a, b) > 0))
      throw InfeasibleSubjectError(subject_->data.id);
    ld += std::log(lambda_(a, b));
  }
  return ld;
}

ProposalContext::Skeleton ProposalContext::ffbs_skeleton(Rng& rng) const {
  const int K = static_cast<int>(lambda_.rows());
  const int L = static_cast<int>(recs_.size());
  Skeleton sk;
  sk.states.resize(L + 1);
  std::vector<double> w(K);
  {
    const auto& aL = alphas_[L];
    int s = rng.categorical(aL, K);
    sk.states[L] = s;
    sk.logp += std::log(aL[s]);
  }
  for (int j = L - 1; j >= 0; --j) {
    const int next = sk.states[j + 1];
    double tot = 0.0;
    for (int a = 0; a < K; ++a) {
      w[a] = alphas_[j][a] * recs_[j].W(a, next);
      tot += w[a];
    }
    int s = rng.categorical(w, K);
    sk.states[j] = s;
    sk.logp += std::log(w[s] / tot);
  }
  return sk;
}

BridgeSampler::IntervalPath ProposalContext::sample_interval(int rec, int a, int b,
                                                             Rng& rng) const {
  if (subject_->recs[rec].obstype != 0)
    throw std::logic_error("sample_interval applies to snapshot records only");
  return recs_[rec].bridge.sample(a, b, rng);
}

ProposalContext::Proposal ProposalContext::propose_path(Rng& rng) const {
  Proposal out;
  Skeleton sk = ffbs_skeleton(rng);
  out.log_proposal = sk.logp;
  auto& path = out.path;
  path.subject_index = subject_->index;
  path.times.push_back(recs_.empty() ? subject_->data.t0() : recs_[0].tstart);
  path.states.push_back(sk.states[0]);
  for (size_t j = 0; j < recs_.size(); ++j) {
    const int a = sk.states[j], b = sk.states[j + 1];
    if (subject_->recs[j].obstype == 1) {
      if (a != b) {
        path.times.push_back(recs_[j].tstop);
        path.states.push_back(b);
      }
    } else {
      auto fill = recs_[j].bridge.sample(a, b, rng);
      out.log_proposal += fill.log_density;
      for (size_t k = 0; k < fill.states.size(); ++k) {
        path.times.push_back(recs_[j].tstart + fill.jump_times[k]);
        path.states.push_back(fill.states[k]);
      }
    }
  }
  path.censor_time = recs_.empty() ? subject_->data.t0() : recs_.back().tstop;
  out.n_jumps = path.n_transitions();
  // unconditional surrogate log-density of the assembled path
  double lh = 0.0;
  for (int n = 0; n + 1 <= path.n_transitions(); ++n) {
    lh += lambda_(path.states[n], path.states[n]) * (path.times[n + 1] - path.times[n]);
    lh += std::log(lambda_(path.states[n], path.states[n + 1]));
  }
  lh += lambda_(path.states.back(), path.states.back()) * (path.censor_time - path.times.back());
  out.log_surrogate = lh;
  return out;
}

bool concordant(const SamplePath& path, const SubjectData& subject) {
  const double tol = 1e-9;
  if (!contains(subject.records.front().from, path.state_at(subject.t0()))) return false;
  for (const auto& r : subject.records) {
    if (r.obstype == 0) {
      if (!contains(r.to, path.state_at(r.tstop))) return false;
      continue;
    }
    const int a = first_state(r.from), b = first_state(r.to);
    // exactly observed: in state a over (tstart, tstop), transition at tstop iff a != b
    int jumps_inside = 0;
    bool jump_at_stop = false;
    for (int n = 1; n <= path.n_transitions(); ++n) {
      double t = path.times[n];
      if (t > r.tstart + tol && t < r.tstop - tol) ++jumps_inside;
      if (std::abs(t - r.tstop) <= tol && path.states[n] == b && path.states[n - 1] == a)
        jump_at_stop = true;
    }
    if (jumps_inside > 0) return false;
    if (path.state_at(0.5 * (r.tstart + r.tstop)) != a) return false;
    if (a != b && !jump_at_stop) return false;
    if (a == b && path.state_at(r.tstop) != a) return false;
  }
  return true;
}

RejectionResult rejection_sample_path(const Model& model, const Eigen::VectorXd& theta_u,
                                      const SubjectData& subject,
                                      const std::vector<Eigen::VectorXd>& covx, Rng& rng,
                                      int max_attempts) {
  RejectionResult out;
  const int initial = first_state(subject.records.front().from);
  const double t0 = subject.t0(), horizon = subject.t_end();
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    SamplePath path = simulate_path(model, covx, theta_u, initial, t0, horizon, rng);
    if (concordant(path, subject)) {
      out.accepted = true;
      out.path = std::move(path);
      out.attempts = attempt;
      return out;
    }
  }
  out.attempts = max_attempts;
  return out;
}

}  // namespace msm
