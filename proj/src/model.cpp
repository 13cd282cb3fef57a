#include "msm/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msm {

std::string family_name(HazardFamily f) {
  switch (f) {
    case HazardFamily::Exponential: return "exponential";
    case HazardFamily::Weibull: return "weibull";
    case HazardFamily::BSpline: return "bspline";
  }
  return "?";
}

StateSpace::StateSpace(int n_states, std::vector<Transition> transitions,
                       std::vector<std::string> labels)
    : n_states_(n_states), transitions_(std::move(transitions)), labels_(std::move(labels)) {
  if (n_states < 1 || n_states > 32)
    throw std::invalid_argument("state space: need 1..32 states");
  if (labels_.empty())
    for (int s = 0; s < n_states; ++s) labels_.push_back(std::to_string(s + 1));
  exits_.resize(n_states);
  for (size_t i = 0; i < transitions_.size(); ++i) {
    const auto& t = transitions_[i];
    if (t.from < 0 || t.from >= n_states || t.to < 0 || t.to >= n_states)
      throw std::invalid_argument("transition references unknown state");
    if (t.from == t.to) throw std::invalid_argument("self-transitions are not allowed");
    if (transition_index(t.from, t.to) >= 0)
      throw std::invalid_argument("duplicate transition");
    exits_[t.from].push_back(static_cast<int>(i));
  }
  // reachability closure; progressive models only, so reject cycles
  reach_.assign(n_states, 0);
  for (int s = 0; s < n_states; ++s) reach_[s] = set_of(s);
  for (int iter = 0; iter < n_states; ++iter) {
    bool changed = false;
    for (const auto& t : transitions_) {
      StateSet merged = reach_[t.from] | reach_[t.to];
      if (merged != reach_[t.from]) {
        reach_[t.from] = merged;
        changed = true;
      }
    }
    if (!changed) break;
  }
  for (const auto& t : transitions_)
    if (contains(reach_[t.to], t.from))
      throw std::invalid_argument("transition graph has a cycle; only progressive models are supported");
}

int StateSpace::transition_index(int from0, int to0) const {
  for (int i : exits_[from0])
    if (transitions_[i].to == to0) return i;
  return -1;
}

std::vector<std::string> ParameterLayout::names() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.name);
  return out;
}

int ParameterLayout::index_of(int hazard, const std::string& name) const {
  for (int i = 0; i < size(); ++i) {
    const auto& e = entries[i];
    if (e.hazard == hazard && e.name.substr(e.name.find(':') + 1) == name) return i;
  }
  return -1;
}

Eigen::VectorXd ParameterLayout::to_constrained(const Eigen::VectorXd& u) const {
  Eigen::VectorXd c = u;
  for (int i = 0; i < size(); ++i)
    if (entries[i].positive) c[i] = std::exp(u[i]);
  return c;
}

Eigen::VectorXd ParameterLayout::to_unconstrained(const Eigen::VectorXd& c) const {
  Eigen::VectorXd u = c;
  for (int i = 0; i < size(); ++i)
    if (entries[i].positive) {
      if (!(c[i] > 0)) throw std::domain_error("positive parameter must be > 0: " + entries[i].name);
      u[i] = std::log(c[i]);
    }
  return u;
}

int SamplePath::state_at(double t) const {
  int idx = 0;
  for (size_t n = 1; n < times.size(); ++n)
    if (times[n] <= t) idx = static_cast<int>(n);
  return states[idx];
}

namespace {
std::string trans_label(const StateSpace& sp, const Transition& t) {
  return sp.label(t.from) + "->" + sp.label(t.to);
}
}  // namespace

Model::Model(StateSpace space, std::vector<HazardSpec> hazards)
    : space_(std::move(space)), hazards_(std::move(hazards)) {
  if (static_cast<int>(hazards_.size()) != space_.n_transitions())
    throw std::invalid_argument("model: need exactly one hazard per transition");
  bases_.resize(hazards_.size());
  for (size_t h = 0; h < hazards_.size(); ++h) {
    if (hazards_[h].trans != space_.transitions()[h])
      throw std::invalid_argument("model: hazard order must match the transition list");
    if (hazards_[h].family == HazardFamily::BSpline)
      bases_[h] = BSplineBasis(hazards_[h].degree, hazards_[h].interior_knots,
                               hazards_[h].boundary_left, hazards_[h].boundary_right);
  }
  // parameter layout, honoring shared slices
  layout_.base_off.assign(hazards_.size(), 0);
  layout_.base_cnt.assign(hazards_.size(), 0);
  layout_.cov_off.assign(hazards_.size(), 0);
  layout_.cov_cnt.assign(hazards_.size(), 0);
  for (size_t h = 0; h < hazards_.size(); ++h) {
    const auto& hz = hazards_[h];
    int share = hz.share_params_with;
    if (share >= 0) {
      if (share >= static_cast<int>(h))
        throw std::invalid_argument("share_params_with must reference an earlier hazard");
      const auto& other = hazards_[share];
      if (other.family != hz.family || other.covariates != hz.covariates)
        throw std::invalid_argument("shared hazards must agree on family and covariates");
      layout_.base_off[h] = layout_.base_off[share];
      layout_.base_cnt[h] = layout_.base_cnt[share];
      layout_.cov_off[h] = layout_.cov_off[share];
      layout_.cov_cnt[h] = layout_.cov_cnt[share];
      continue;
    }
    std::string prefix = trans_label(space_, hz.trans) + ":";
    layout_.base_off[h] = layout_.size();
    switch (hz.family) {
      case HazardFamily::Exponential:
        layout_.entries.push_back({static_cast<int>(h), prefix + "log_rate", true});
        break;
      case HazardFamily::Weibull:
        layout_.entries.push_back({static_cast<int>(h), prefix + "log_scale", true});
        layout_.entries.push_back({static_cast<int>(h), prefix + "log_shape", true});
        break;
      case HazardFamily::BSpline:
        for (int l = 0; l < bases_[h].n_basis(); ++l)
          layout_.entries.push_back({static_cast<int>(h), prefix + "log_coef" + std::to_string(l + 1), true});
        break;
    }
    layout_.base_cnt[h] = layout_.size() - layout_.base_off[h];
    layout_.cov_off[h] = layout_.size();
    for (const auto& cname : hz.covariates)
      layout_.entries.push_back({static_cast<int>(h), prefix + "beta_" + cname, false});
    layout_.cov_cnt[h] = layout_.size() - layout_.cov_off[h];
  }
}

std::vector<Eigen::VectorXd> Model::resolve_covariates(const Covariates& values) const {
  std::vector<Eigen::VectorXd> out(hazards_.size());
  for (size_t h = 0; h < hazards_.size(); ++h) {
    const auto& names = hazards_[h].covariates;
    Eigen::VectorXd x(names.size());
    for (size_t j = 0; j < names.size(); ++j) {
      auto it = values.find(names[j]);
      if (it == values.end())
        throw std::runtime_error("covariate '" + names[j] + "' required by transition " +
                                 trans_label(space_, hazards_[h].trans) + " is missing");
      x[j] = it->second;
    }
    out[h] = std::move(x);
  }
  return out;
}

void Model::eval_baseline(int hazard, const CompiledSegment& seg, const CompiledExit& ex,
                          const double* p, int order, bool want_log_eta,
                          BaselineEval& out) const {
  const auto& hz = hazards_[hazard];
  const double w = seg.w;
  switch (hz.family) {
    case HazardFamily::Exponential: {
      double H = std::exp(p[0]) * w;
      out.cumhaz = H;
      if (want_log_eta) out.log_eta = p[0];
      if (order >= 1) {
        out.d_cumhaz.resize(1);
        out.d_cumhaz[0] = H;
        out.d_log_eta.resize(1);
        out.d_log_eta[0] = want_log_eta ? 1.0 : 0.0;
      }
      if (order >= 2) {
        out.d2_cumhaz.resize(1, 1);
        out.d2_cumhaz(0, 0) = H;
        out.d2_log_eta.setZero(1, 1);
      }
      break;
    }
    case HazardFamily::Weibull: {
      double k = std::exp(p[1]);
      double H = std::exp(p[0]) * std::pow(w, k);
      double kLw = k * seg.log_w;
      out.cumhaz = H;
      if (want_log_eta) out.log_eta = p[0] + p[1] + (k - 1.0) * seg.log_w;
      if (order >= 1) {
        out.d_cumhaz.resize(2);
        out.d_cumhaz[0] = H;
        out.d_cumhaz[1] = H * kLw;
        out.d_log_eta.resize(2);
        if (want_log_eta) {
          out.d_log_eta[0] = 1.0;
          out.d_log_eta[1] = 1.0 + kLw;
        } else {
          out.d_log_eta.setZero();
        }
      }
      if (order >= 2) {
        out.d2_cumhaz.resize(2, 2);
        out.d2_cumhaz(0, 0) = H;
        out.d2_cumhaz(0, 1) = out.d2_cumhaz(1, 0) = H * kLw;
        out.d2_cumhaz(1, 1) = H * kLw * (kLw + 1.0);
        out.d2_log_eta.setZero(2, 2);
        if (want_log_eta) out.d2_log_eta(1, 1) = kLw;
      }
      break;
    }
    case HazardFamily::BSpline: {
      const int L = static_cast<int>(ex.B.size());
      Eigen::VectorXd g(L);
      for (int l = 0; l < L; ++l) g[l] = std::exp(p[l]);
      double H = g.dot(ex.IB);
      out.cumhaz = H;
      double s = g.dot(ex.B);
      if (want_log_eta) out.log_eta = std::log(s);
      if (order >= 1) {
        out.d_cumhaz = g.cwiseProduct(ex.IB);
        if (want_log_eta)
          out.d_log_eta = g.cwiseProduct(ex.B) / s;
        else
          out.d_log_eta.setZero(L);
      }
      if (order >= 2) {
        out.d2_cumhaz = out.d_cumhaz.asDiagonal();
        if (want_log_eta) {
          out.d2_log_eta = Eigen::MatrixXd(out.d_log_eta.asDiagonal());
          out.d2_log_eta.noalias() -= out.d_log_eta * out.d_log_eta.transpose();
        } else {
          out.d2_log_eta.setZero(L, L);
        }
      }
      break;
    }
  }
}

double Model::intensity(int hazard, double sojourn, const Covariates& covs,
                        const Eigen::VectorXd& theta_u) const {
  if (sojourn < 0) throw std::domain_error("intensity: negative sojourn");
  const auto& hz = hazards_[hazard];
  auto covx = resolve_covariates(covs);
  double xb = 0.0;
  for (int j = 0; j < layout_.cov_cnt[hazard]; ++j)
    xb += theta_u[layout_.cov_off[hazard] + j] * covx[hazard][j];
  const double* p = theta_u.data() + layout_.base_off[hazard];
  double eta = 0.0;
  switch (hz.family) {
    case HazardFamily::Exponential: eta = std::exp(p[0]); break;
    case HazardFamily::Weibull: {
      double k = std::exp(p[1]);
      eta = std::exp(p[0]) * k * std::pow(sojourn, k - 1.0);
      break;
    }
    case HazardFamily::BSpline: {
      Eigen::VectorXd B = bases_[hazard].eval_flat(sojourn);
      for (int l = 0; l < B.size(); ++l) eta += std::exp(p[l]) * B[l];
      break;
    }
  }
  return eta * std::exp(xb);
}

double Model::cumulative_hazard(int hazard, double t0, double t1, const Covariates& covs,
                                const Eigen::VectorXd& theta_u) const {
  if (t1 < t0 || t0 < 0) throw std::domain_error("cumulative_hazard: need 0 <= t0 <= t1");
  const auto& hz = hazards_[hazard];
  auto covx = resolve_covariates(covs);
  double xb = 0.0;
  for (int j = 0; j < layout_.cov_cnt[hazard]; ++j)
    xb += theta_u[layout_.cov_off[hazard] + j] * covx[hazard][j];
  const double* p = theta_u.data() + layout_.base_off[hazard];
  double H = 0.0;
  switch (hz.family) {
    case HazardFamily::Exponential: H = std::exp(p[0]) * (t1 - t0); break;
    case HazardFamily::Weibull: {
      double k = std::exp(p[1]);
      H = std::exp(p[0]) * (std::pow(t1, k) - std::pow(t0, k));
      break;
    }
    case HazardFamily::BSpline: {
      Eigen::VectorXd IB = bases_[hazard].integral_flat(t1) - bases_[hazard].integral_flat(t0);
      for (int l = 0; l < IB.size(); ++l) H += std::exp(p[l]) * IB[l];
      break;
    }
  }
  return H * std::exp(xb);
}

double Model::survival_prob(int state, double sojourn, const Covariates& covs,
                            const Eigen::VectorXd& theta_u) const {
  if (sojourn < 0) throw std::domain_error("survival_prob: negative sojourn");
  double total = 0.0;
  for (int h : space_.exits(state)) total += cumulative_hazard(h, 0.0, sojourn, covs, theta_u);
  return std::exp(-total);
}

void Model::validate_path(const SamplePath& path) const {
  if (path.times.size() != path.states.size() || path.times.empty())
    throw std::domain_error("path: times/states size mismatch");
  for (size_t n = 1; n < path.times.size(); ++n) {
    if (!(path.times[n] > path.times[n - 1]))
      throw std::domain_error("path: times must be strictly increasing");
    if (space_.transition_index(path.states[n - 1], path.states[n]) < 0)
      throw std::domain_error("path: transition " + space_.label(path.states[n - 1]) + "->" +
                              space_.label(path.states[n]) + " is not allowed");
  }
  for (int s : path.states)
    if (s < 0 || s >= space_.n_states()) throw std::domain_error("path: unknown state");
  if (path.censor_time < path.times.back() - 1e-12)
    throw std::domain_error("path: censor time precedes the last transition");
}

CompiledPath Model::compile_path(const SamplePath& path,
                                 const std::vector<Eigen::VectorXd>& covx) const {
  CompiledPath cp;
  const int N = path.n_transitions();
  cp.segs.reserve(N + 1);
  for (int n = 0; n <= N; ++n) {
    const int from = path.states[n];
    double w;
    int to_state = -1;
    if (n < N) {
      // completed sojourn in states[n] ending with a transition
      w = path.times[n + 1] - path.times[n];
      to_state = path.states[n + 1];
    } else {
      w = path.censor_time - path.times[N];
      if (w <= 0 && space_.is_absorbing(from)) continue;
      if (w < 0) w = 0;
    }
    CompiledSegment seg;
    seg.w = w;
    seg.log_w = w > 0 ? std::log(w) : 0.0;
    const auto& exits = space_.exits(from);
    seg.exits.reserve(exits.size());
    for (size_t e = 0; e < exits.size(); ++e) {
      int h = exits[e];
      CompiledExit ex;
      ex.hazard = h;
      ex.x = covx[h];
      if (hazards_[h].family == HazardFamily::BSpline) {
        ex.B = bases_[h].eval_flat(w);
        ex.IB = bases_[h].integral_flat(w);
      }
      if (to_state >= 0 && hazards_[h].trans.to == to_state) seg.realized = static_cast<int>(e);
      seg.exits.push_back(std::move(ex));
    }
    cp.segs.push_back(std::move(seg));
  }
  return cp;
}

double Model::path_loglik(const CompiledPath& cp, const Eigen::VectorXd& theta_u) const {
  double ll = 0.0;
  BaselineEval be;
  for (const auto& seg : cp.segs) {
    for (size_t e = 0; e < seg.exits.size(); ++e) {
      const auto& ex = seg.exits[e];
      const int h = ex.hazard;
      double xb = 0.0;
      for (int j = 0; j < layout_.cov_cnt[h]; ++j)
        xb += theta_u[layout_.cov_off[h] + j] * ex.x[j];
      const bool realized = (static_cast<int>(e) == seg.realized);
      eval_baseline(h, seg, ex, theta_u.data() + layout_.base_off[h], 0, realized, be);
      if (realized) ll += be.log_eta + xb;
      ll -= be.cumhaz * std::exp(xb);
    }
  }
  return ll;
}

double Model::path_loglik_grad(const CompiledPath& cp, const Eigen::VectorXd& theta_u,
                               double weight, Eigen::VectorXd& grad_accum) const {
  double ll = 0.0;
  BaselineEval be;
  for (const auto& seg : cp.segs) {
    for (size_t e = 0; e < seg.exits.size(); ++e) {
      const auto& ex = seg.exits[e];
      const int h = ex.hazard;
      const int co = layout_.cov_off[h], cn = layout_.cov_cnt[h];
      const int bo = layout_.base_off[h], bn = layout_.base_cnt[h];
      double xb = 0.0;
      for (int j = 0; j < cn; ++j) xb += theta_u[co + j] * ex.x[j];
      const double exb = std::exp(xb);
      const bool realized = (static_cast<int>(e) == seg.realized);
      eval_baseline(h, seg, ex, theta_u.data() + bo, 1, realized, be);
      const double Hx = be.cumhaz * exb;
      if (realized) ll += be.log_eta + xb;
      ll -= Hx;
      for (int j = 0; j < bn; ++j) {
        double d = -exb * be.d_cumhaz[j];
        if (realized) d += be.d_log_eta[j];
        grad_accum[bo + j] += weight * d;
      }
      for (int j = 0; j < cn; ++j) {
        double d = -Hx * ex.x[j];
        if (realized) d += ex.x[j];
        grad_accum[co + j] += weight * d;
      }
    }
  }
  return ll;
}

double Model::path_loglik_deriv2(const CompiledPath& cp, const Eigen::VectorXd& theta_u,
                                 Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const {
  const int P = n_params();
  grad.setZero(P);
  hess.setZero(P, P);
  double ll = 0.0;
  BaselineEval be;
  for (const auto& seg : cp.segs) {
    for (size_t e = 0; e < seg.exits.size(); ++e) {
      const auto& ex = seg.exits[e];
      const int h = ex.hazard;
      const int co = layout_.cov_off[h], cn = layout_.cov_cnt[h];
      const int bo = layout_.base_off[h], bn = layout_.base_cnt[h];
      double xb = 0.0;
      for (int j = 0; j < cn; ++j) xb += theta_u[co + j] * ex.x[j];
      const double exb = std::exp(xb);
      const bool realized = (static_cast<int>(e) == seg.realized);
      eval_baseline(h, seg, ex, theta_u.data() + bo, 2, realized, be);
      const double Hx = be.cumhaz * exb;
      if (realized) ll += be.log_eta + xb;
      ll -= Hx;
      for (int j = 0; j < bn; ++j) {
        double d = -exb * be.d_cumhaz[j];
        if (realized) d += be.d_log_eta[j];
        grad[bo + j] += d;
      }
      for (int j = 0; j < cn; ++j) {
        double d = -Hx * ex.x[j];
        if (realized) d += ex.x[j];
        grad[co + j] += d;
      }
      for (int j = 0; j < bn; ++j)
        for (int k = 0; k < bn; ++k) {
          double d2 = -exb * be.d2_cumhaz(j, k);
          if (realized) d2 += be.d2_log_eta(j, k);
          hess(bo + j, bo + k) += d2;
        }
      for (int j = 0; j < bn; ++j)
        for (int k = 0; k < cn; ++k) {
          double d2 = -exb * be.d_cumhaz[j] * ex.x[k];
          hess(bo + j, co + k) += d2;
          hess(co + k, bo + j) += d2;
        }
      for (int j = 0; j < cn; ++j)
        for (int k = 0; k < cn; ++k) hess(co + j, co + k) += -Hx * ex.x[j] * ex.x[k];
    }
  }
  return ll;
}

double Model::path_loglik(const SamplePath& path, const Covariates& covs,
                          const Eigen::VectorXd& theta_u) const {
  validate_path(path);
  return path_loglik(compile_path(path, resolve_covariates(covs)), theta_u);
}

}  // namespace msm
