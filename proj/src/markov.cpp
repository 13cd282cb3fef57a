#include "msm/markov.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <map>

namespace msm {

std::vector<CompiledSubject> compile_subjects(const Model& model,
                                              const std::vector<SubjectData>& subjects) {
  std::vector<CompiledSubject> out;
  out.reserve(subjects.size());
  const auto& space = model.space();
  std::map<std::vector<double>, int> profiles;
  for (size_t i = 0; i < subjects.size(); ++i) {
    const auto& s = subjects[i];
    CompiledSubject cs;
    cs.index = static_cast<int>(i);
    cs.data = s;
    cs.covx = model.resolve_covariates(s.covariates);
    std::vector<double> key;
    for (const auto& x : cs.covx) key.insert(key.end(), x.data(), x.data() + x.size());
    auto [it, inserted] = profiles.emplace(std::move(key), static_cast<int>(profiles.size()));
    cs.profile = it->second;
    cs.initial_state = first_state(s.records.front().from);
    for (const auto& r : s.records) {
      CompiledSubject::Rec rec;
      rec.dt = r.tstop - r.tstart;
      rec.from = r.from;
      rec.to = r.to;
      rec.obstype = r.obstype;
      if (r.obstype == 1) {
        rec.allowed = r.from | r.to;
      } else {
        rec.allowed = 0;
        for (int a = 0; a < space.n_states(); ++a)
          if (space.reachable_from(a) & r.to) rec.allowed |= set_of(a);
      }
      cs.recs.push_back(rec);
    }
    out.push_back(std::move(cs));
  }
  return out;
}

int n_profiles(const std::vector<CompiledSubject>& subjects) {
  int n = 0;
  for (const auto& s : subjects) n = std::max(n, s.profile + 1);
  return n;
}

MarkovSurrogate::MarkovSurrogate(Model model, Eigen::VectorXd theta_u)
    : model_(std::move(model)), theta_u_(std::move(theta_u)) {
  for (const auto& h : model_.hazards())
    if (h.family != HazardFamily::Exponential)
      throw std::invalid_argument("Markov surrogate requires exponential hazards");
}

double MarkovSurrogate::rate(int hazard, const std::vector<Eigen::VectorXd>& covx) const {
  const auto& lay = model_.layout();
  double xb = theta_u_[lay.base_off[hazard]];
  for (int j = 0; j < lay.cov_cnt[hazard]; ++j)
    xb += theta_u_[lay.cov_off[hazard] + j] * covx[hazard][j];
  return std::exp(xb);
}

Eigen::MatrixXd MarkovSurrogate::intensity_matrix(
    const std::vector<Eigen::VectorXd>& covx) const {
  const int K = model_.space().n_states();
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(K, K);
  for (int h = 0; h < model_.space().n_transitions(); ++h) {
    const auto& t = model_.space().transitions()[h];
    double r = rate(h, covx);
    L(t.from, t.to) += r;
    L(t.from, t.from) -= r;
  }
  return L;
}

Eigen::MatrixXd MarkovSurrogate::intensity_matrix(
    const std::vector<Eigen::VectorXd>& covx, const std::vector<Transition>& forbidden) const {
  Eigen::MatrixXd L = intensity_matrix(covx);
  for (const auto& t : forbidden) {
    if (model_.space().transition_index(t.from, t.to) < 0)
      throw std::invalid_argument("forbidden transition is not part of the model");
    L(t.from, t.from) += L(t.from, t.to);
    L(t.from, t.to) = 0.0;
  }
  return L;
}

Eigen::MatrixXd restricted_generator(const Eigen::MatrixXd& lambda, StateSet allowed) {
  const int K = static_cast<int>(lambda.rows());
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(K, K);
  for (int a = 0; a < K; ++a) {
    if (!contains(allowed, a)) continue;
    L(a, a) = lambda(a, a);
    for (int b = 0; b < K; ++b)
      if (b != a && contains(allowed, b)) L(a, b) = lambda(a, b);
  }
  return L;
}

const Eigen::MatrixXd& MarkovSurrogate::profile_lambda(const CompiledSubject& subject) const {
  return profile_cache_.at(subject.profile);
}

void MarkovSurrogate::freeze_profiles(const std::vector<CompiledSubject>& subjects) {
  profile_cache_.assign(n_profiles(subjects), Eigen::MatrixXd());
  for (const auto& s : subjects)
    if (profile_cache_[s.profile].size() == 0)
      profile_cache_[s.profile] = intensity_matrix(s.covx);
}

Eigen::MatrixXd transition_matrix(const Eigen::MatrixXd& lambda, double dt) {
  if (!(dt > 0)) throw std::domain_error("transition_matrix: dt must be > 0");
  Eigen::MatrixXd P = (lambda * dt).exp();
  if (!P.allFinite())
    throw std::runtime_error("transition_matrix: non-finite entries in exp(Lambda dt)");
  // clamp tiny negative round-off
  for (int i = 0; i < P.rows(); ++i)
    for (int j = 0; j < P.cols(); ++j)
      if (P(i, j) < 0) P(i, j) = 0.0;
  return P;
}

namespace {

// exact density of an exactly observed segment under the surrogate:
// survive in a for dt, then (a != b) jump a->b
double segment_density(const Eigen::MatrixXd& lambda, int a, int b, double dt) {
  double surv = std::exp(lambda(a, a) * dt);
  return a == b ? surv : surv * lambda(a, b);
}

}  // namespace

double markov_marginal_loglik_subject(const MarkovSurrogate& surrogate,
                                      const CompiledSubject& subject) {
  const int K = surrogate.model().space().n_states();
  const Eigen::MatrixXd lambda = surrogate.intensity_matrix(subject.covx);
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(K);
  alpha[subject.initial_state] = 1.0;
  double logc = 0.0;
  Eigen::VectorXd anew(K);
  for (const auto& rec : subject.recs) {
    anew.setZero();
    if (rec.obstype == 1) {
      int a = first_state(rec.from), b = first_state(rec.to);
      anew[b] = alpha[a] * segment_density(lambda, a, b, rec.dt);
    } else {
      Eigen::MatrixXd P =
          transition_matrix(restricted_generator(lambda, rec.allowed), rec.dt);
      for (int b = 0; b < K; ++b) {
        if (!contains(rec.to, b)) continue;
        double s = 0.0;
        for (int a = 0; a < K; ++a)
          if (alpha[a] != 0.0) s += alpha[a] * P(a, b);
        anew[b] = s;
      }
    }
    double c = anew.sum();
    if (!(c > 0.0)) throw InfeasibleSubjectError(subject.data.id);
    alpha = anew / c;
    logc += std::log(c);
  }
  return logc;
}

double markov_marginal_loglik(const MarkovSurrogate& surrogate,
                              const std::vector<CompiledSubject>& subjects) {
  double total = 0.0;
  for (const auto& s : subjects)
    total += s.weight * markov_marginal_loglik_subject(surrogate, s);
  return total;
}

MarkovFit fit_markov_mle(const Model& model, const std::vector<CompiledSubject>& subjects,
                         const Eigen::VectorXd* theta_init, const OptimOptions& opts) {
  if (subjects.empty()) throw std::invalid_argument("fit_markov_mle: no subjects");
  Eigen::VectorXd x0;
  if (theta_init) {
    x0 = *theta_init;
  } else {
    // start all rates at 1/mean follow-up, covariate effects at zero
    double mean_fu = 0.0;
    for (const auto& s : subjects) mean_fu += s.data.t_end() - s.data.t0();
    mean_fu /= static_cast<double>(subjects.size());
    x0 = Eigen::VectorXd::Zero(model.n_params());
    const auto& lay = model.layout();
    for (int i = 0; i < lay.size(); ++i)
      if (lay.entries[i].positive) x0[i] = -std::log(std::max(mean_fu, 1e-8));
  }
  // structural infeasibility surfaces at the starting point; zero forward
  // mass at extreme trial parameters is mere underflow and rejects the step
  {
    MarkovSurrogate s0(model, x0);
    markov_marginal_loglik(s0, subjects);
  }
  auto objective = [&](const Eigen::VectorXd& u) {
    MarkovSurrogate s(model, u);
    try {
      return -markov_marginal_loglik(s, subjects);
    } catch (const InfeasibleSubjectError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  OptimResult res = minimize_bfgs(with_fd_gradient(objective), x0, opts);
  MarkovFit fit;
  fit.surrogate = MarkovSurrogate(model, res.x);
  fit.loglik = -res.f;
  fit.boundary = res.diverged;
  // a positive-scale parameter parked at an extreme log value is a boundary
  // solution (e.g. a rate running to zero), not a stationary point
  const double boundary_limit = 12.0;
  for (int i = 0; i < model.layout().size(); ++i)
    if (model.layout().entries[i].positive && std::abs(res.x[i]) > boundary_limit)
      fit.boundary = true;
  fit.converged = res.converged;
  fit.report = std::move(res);
  return fit;
}

StateSet CoxianExpansion::latent_set(StateSet observed_set, bool initial) const {
  StateSet out = 0;
  for (size_t ls = 0; ls < to_observed.size(); ++ls)
    if (contains(observed_set, to_observed[ls])) out |= set_of(static_cast<int>(ls));
  if (initial) {
    // a known initial state enters through its first phase
    StateSet entry = 0;
    for (size_t os = 0; os < entry_state.size(); ++os)
      if (contains(observed_set, static_cast<int>(os))) entry |= set_of(entry_state[os]);
    out = entry;
  }
  return out;
}

std::vector<SubjectData> CoxianExpansion::map_subjects(
    const std::vector<SubjectData>& subjects) const {
  std::vector<SubjectData> out = subjects;
  for (auto& s : out)
    for (size_t j = 0; j < s.records.size(); ++j) {
      auto& r = s.records[j];
      r.from = latent_set(r.from, j == 0);
      r.to = latent_set(r.to, false);
      if (r.obstype == 1 && (set_size(r.from) != 1 || set_size(r.to) != 1))
        throw std::invalid_argument(
            "coxian expansion: exactly observed segments through the expanded state are not supported");
    }
  return out;
}

CoxianExpansion coxian_expansion(const StateSpace& space, Transition expand, int n_phases,
                                 const std::vector<HazardSpec>& hazards) {
  if (n_phases < 1) throw std::domain_error("coxian_expansion: n_phases must be >= 1");
  if (space.is_absorbing(expand.from))
    throw std::domain_error("coxian_expansion: cannot expand an absorbing state");
  if (space.transition_index(expand.from, expand.to) < 0)
    throw std::domain_error("coxian_expansion: transition is not part of the model");
  for (const auto& h : hazards)
    if (h.family != HazardFamily::Exponential)
      throw std::invalid_argument("coxian_expansion applies to exponential (Markov) structures");

  CoxianExpansion ex;
  ex.n_phases = n_phases;
  const int K = space.n_states();
  const int k = expand.from;
  // latent indices: states before k unchanged, k -> k..k+n_phases-1, rest shifted
  ex.entry_state.resize(K);
  for (int s = 0; s < K; ++s) ex.entry_state[s] = s < k ? s : (s == k ? k : s + n_phases - 1);
  std::vector<std::string> labels;
  for (int s = 0; s < K; ++s) {
    if (s == k) {
      for (int p = 0; p < n_phases; ++p) {
        ex.to_observed.push_back(s);
        labels.push_back(space.label(s) + (n_phases > 1 ? std::string(1, char('a' + p)) : ""));
      }
    } else {
      ex.to_observed.push_back(s);
      labels.push_back(space.label(s));
    }
  }

  std::vector<Transition> lt;
  std::vector<HazardSpec> lh;
  auto phase_index = [&](int p) { return k + p; };
  for (int h = 0; h < space.n_transitions(); ++h) {
    const auto& t = space.transitions()[h];
    const auto& spec = hazards[h];
    auto push = [&](int a, int b, int share) {
      HazardSpec hs = spec;
      hs.trans = {a, b};
      hs.share_params_with = share;
      lt.push_back(hs.trans);
      lh.push_back(hs);
    };
    if (t.from == k && t.to == expand.to) {
      for (int p = 0; p < n_phases; ++p) push(phase_index(p), ex.entry_state[t.to], -1);
    } else if (t.from == k) {
      int first = -1;
      for (int p = 0; p < n_phases; ++p) {
        push(phase_index(p), ex.entry_state[t.to], first);
        if (first < 0) first = static_cast<int>(lh.size()) - 1;
      }
    } else {
      push(ex.entry_state[t.from], ex.entry_state[t.to], -1);
    }
  }
  // phase advancement
  for (int p = 0; p + 1 < n_phases; ++p) {
    HazardSpec hs;
    hs.trans = {phase_index(p), phase_index(p + 1)};
    hs.family = HazardFamily::Exponential;
    lt.push_back(hs.trans);
    lh.push_back(hs);
  }
  ex.latent = StateSpace(K + n_phases - 1, lt, labels);
  // StateSpace construction may reorder nothing; hazards stay aligned
  ex.hazards = std::move(lh);
  return ex;
}

}  // namespace msm
