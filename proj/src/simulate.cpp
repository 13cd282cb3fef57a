#include "msm/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "msm/threads.hpp"

namespace msm {

namespace {

// fast per-exit evaluator bound to one subject's covariates and parameters
struct ExitEval {
  HazardFamily fam;
  const double* p = nullptr;
  double exb = 1.0;
  const BSplineBasis* basis = nullptr;

  double cumhaz(double w) const {
    switch (fam) {
      case HazardFamily::Exponential:
        return std::exp(p[0]) * w * exb;
      case HazardFamily::Weibull:
        return std::exp(p[0]) * std::pow(w, std::exp(p[1])) * exb;
      case HazardFamily::BSpline: {
        Eigen::VectorXd ib = basis->integral_flat(w);
        double h = 0;
        for (int l = 0; l < ib.size(); ++l) h += std::exp(p[l]) * ib[l];
        return h * exb;
      }
    }
    return 0;
  }
  double intensity(double w) const {
    switch (fam) {
      case HazardFamily::Exponential:
        return std::exp(p[0]) * exb;
      case HazardFamily::Weibull: {
        double k = std::exp(p[1]);
        return std::exp(p[0]) * k * std::pow(w, k - 1.0) * exb;
      }
      case HazardFamily::BSpline: {
        Eigen::VectorXd b = basis->eval_flat(w);
        double h = 0;
        for (int l = 0; l < b.size(); ++l) h += std::exp(p[l]) * b[l];
        return h * exb;
      }
    }
    return 0;
  }
};

}  // namespace

SamplePath simulate_path(const Model& model, const std::vector<Eigen::VectorXd>& covx,
                         const Eigen::VectorXd& theta_u, int initial_state, double t0,
                         double horizon, Rng& rng) {
  const auto& space = model.space();
  const auto& lay = model.layout();
  SamplePath path;
  path.subject_index = -1;
  path.times.push_back(t0);
  path.states.push_back(initial_state);
  path.censor_time = horizon;

  int cur = initial_state;
  double t = t0;
  std::vector<ExitEval> exits;
  std::vector<double> inten;
  while (!space.is_absorbing(cur) && t < horizon) {
    const auto& exit_ids = space.exits(cur);
    exits.clear();
    bool all_exp = true;
    for (int h : exit_ids) {
      ExitEval ev;
      ev.fam = model.hazards()[h].family;
      ev.p = theta_u.data() + lay.base_off[h];
      double xb = 0;
      for (int j = 0; j < lay.cov_cnt[h]; ++j) xb += theta_u[lay.cov_off[h] + j] * covx[h][j];
      ev.exb = std::exp(xb);
      if (ev.fam == HazardFamily::BSpline) ev.basis = &model.basis(h);
      if (ev.fam != HazardFamily::Exponential) all_exp = false;
      exits.push_back(ev);
    }
    auto total_cumhaz = [&](double w) {
      double s = 0;
      for (const auto& e : exits) s += e.cumhaz(w);
      return s;
    };
    const double target = -std::log(rng.uniform());
    const double remaining = horizon - t;
    double w;
    if (all_exp) {
      double lamtot = 0;
      for (const auto& e : exits) lamtot += e.intensity(0.0);
      w = target / lamtot;
      if (w > remaining) break;  // censored at the horizon
    } else {
      if (total_cumhaz(remaining) < target) break;
      double lo = 0, hi = remaining;
      for (int it = 0; it < 200 && hi - lo > 1e-10; ++it) {
        double mid = 0.5 * (lo + hi);
        (total_cumhaz(mid) < target ? lo : hi) = mid;
      }
      w = 0.5 * (lo + hi);
      if (w <= 0) w = std::numeric_limits<double>::min();
    }
    inten.resize(exits.size());
    for (size_t e = 0; e < exits.size(); ++e) inten[e] = exits[e].intensity(w);
    int dest_exit = rng.categorical(inten, static_cast<int>(inten.size()));
    cur = space.transitions()[exit_ids[dest_exit]].to;
    t += w;
    path.times.push_back(t);
    path.states.push_back(cur);
  }
  return path;
}

std::vector<double> draw_visit_times(const ObservationScheme& scheme, Rng& rng) {
  const auto& sched = scheme.schedule;
  std::vector<double> out(sched.size());
  for (size_t i = 0; i < sched.size(); ++i) {
    const bool final_visit = (i + 1 == sched.size());
    if (!scheme.jitter || (final_visit && scheme.final_fixed)) {
      out[i] = sched[i];
      continue;
    }
    double lo_mid = i == 0 ? 0.5 * sched[0] : 0.5 * (sched[i - 1] + sched[i]);
    double hi_mid = final_visit ? sched[i] : 0.5 * (sched[i] + sched[i + 1]);
    double b = rng.beta(scheme.jitter_a, scheme.jitter_b);
    // centered on the nominal time, spanning the midpoints to the neighbors
    double span = std::min(sched[i] - lo_mid, hi_mid - sched[i]) * 2.0;
    out[i] = sched[i] + (b - 0.5) * span;
  }
  return out;
}

namespace {

SamplePath aggregate_path(const SamplePath& path, const std::vector<int>& state_map) {
  if (state_map.empty()) return path;
  SamplePath out;
  out.subject_index = path.subject_index;
  out.censor_time = path.censor_time;
  for (size_t n = 0; n < path.states.size(); ++n) {
    int s = state_map[path.states[n]];
    if (out.states.empty() || out.states.back() != s) {
      out.times.push_back(path.times[n]);
      out.states.push_back(s);
    }
  }
  return out;
}

bool ever_in(const SamplePath& path, StateSet set, double by_t) {
  for (size_t n = 0; n < path.states.size(); ++n) {
    if (path.times[n] > by_t + 1e-12) break;
    if (contains(set, path.states[n])) return true;
  }
  return false;
}

}  // namespace

SubjectData observe_panel(const SamplePath& path, const ObservationScheme& scheme,
                          const Covariates& covariates, const std::string& id, Rng& rng) {
  SubjectData out;
  out.id = id;
  out.covariates = covariates;
  const SamplePath obs = aggregate_path(path, scheme.state_map);
  const double t0 = obs.times.front();
  const int n_obs_states =
      scheme.state_map.empty()
          ? 1 + *std::max_element(obs.states.begin(), obs.states.end())
          : 1 + *std::max_element(scheme.state_map.begin(), scheme.state_map.end());
  // `all` must cover every observable state, not only those this path visits
  StateSet all = 0;
  if (scheme.state_map.empty()) {
    for (const auto& m : scheme.markers) all |= m.if_true | m.if_false;
    if (all == 0) all = (n_obs_states >= 32) ? ~StateSet{0} : (StateSet{1} << n_obs_states) - 1;
  } else {
    for (int s : scheme.state_map) all |= set_of(s);
  }

  auto candidates_at = [&](double t, bool final_visit) -> StateSet {
    if (scheme.markers.empty()) return set_of(obs.state_at(t));
    StateSet cand = all;
    for (const auto& m : scheme.markers) {
      if (m.final_only && !final_visit) continue;
      bool val = m.ever ? ever_in(path, m.latent_set, t) : contains(m.latent_set, path.state_at(t));
      cand &= val ? m.if_true : m.if_false;
    }
    return cand;
  };

  std::vector<double> visits = draw_visit_times(scheme, rng);

  struct Event {
    double t;
    int from, to;
    double entry;  // when the observed path entered `from`
  };
  std::vector<Event> events;
  for (int n = 1; n <= obs.n_transitions(); ++n) {
    for (const auto& tr : scheme.exact_transitions)
      if (obs.states[n - 1] == tr.from && obs.states[n] == tr.to)
        events.push_back({obs.times[n], tr.from, tr.to, obs.times[n - 1]});
  }

  double prev = t0;
  StateSet prev_set = set_of(obs.states.front());
  auto emit = [&](double stop, StateSet to, int obstype) {
    out.records.push_back({prev, stop, prev_set, to, obstype});
    prev = stop;
    prev_set = to;
  };

  size_t ei = 0, vi = 0;
  bool stopped = false;
  while (!stopped && (ei < events.size() || vi < visits.size())) {
    bool take_event =
        ei < events.size() && (vi >= visits.size() || events[ei].t <= visits[vi] + 1e-12);
    if (take_event) {
      const auto& ev = events[ei++];
      if (ev.t > path.censor_time + 1e-12) break;
      double m = std::max({ev.t - scheme.epsilon, 0.5 * (ev.entry + ev.t), 0.5 * (prev + ev.t)});
      if (m > prev + 1e-15) emit(m, set_of(ev.from), 0);
      emit(ev.t, set_of(ev.to), 1);
    } else {
      double v = visits[vi++];
      const bool final_visit = (vi == visits.size());
      if (v <= prev + 1e-12) continue;
      emit(v, candidates_at(v, final_visit), 0);
    }
    // stop following once the subject is seen in a terminal state
    if (set_size(prev_set) == 1 && contains(scheme.stop_states, first_state(prev_set)))
      stopped = true;
  }
  return out;
}

FunctionalValue eval_functional(const FunctionalDef& def, const std::vector<SamplePath>& paths,
                                double horizon) {
  auto entry_time = [](const SamplePath& p, StateSet set) {
    for (size_t n = 0; n < p.states.size(); ++n)
      if (contains(set, p.states[n])) return p.times[n];
    return std::numeric_limits<double>::infinity();
  };
  auto satisfies = [&](const SamplePath& p, const EventDef& e) {
    for (StateSet s : e.ever_each)
      if (entry_time(p, s) == std::numeric_limits<double>::infinity()) return false;
    if (e.never != 0 && entry_time(p, e.never) < std::numeric_limits<double>::infinity())
      return false;
    return true;
  };
  auto occupancy = [&](const SamplePath& p, StateSet set) {
    double tot = 0;
    for (size_t n = 0; n < p.states.size(); ++n) {
      if (!contains(set, p.states[n])) continue;
      double stop = n + 1 < p.times.size() ? p.times[n + 1] : p.censor_time;
      tot += std::min(stop, horizon) - std::min(p.times[n], horizon);
    }
    return tot;
  };

  FunctionalValue out;
  double sum = 0, sumsq = 0;
  long n_used = 0;
  for (const auto& p : paths) {
    if (!satisfies(p, def.given)) continue;
    double v = 0;
    bool use = true;
    switch (def.kind) {
      case FunctionalDef::Kind::Probability:
        v = satisfies(p, def.event) ? 1.0 : 0.0;
        break;
      case FunctionalDef::Kind::RMTimeToEntry:
        v = std::min(entry_time(p, def.target), horizon);
        break;
      case FunctionalDef::Kind::MeanEntryGiven: {
        double e = entry_time(p, def.target);
        use = e <= horizon;
        v = e;
        break;
      }
      case FunctionalDef::Kind::RMBetween: {
        double s = entry_time(p, def.start);
        use = s <= horizon;
        if (use) v = std::min(entry_time(p, def.target), horizon) - s;
        break;
      }
      case FunctionalDef::Kind::RMOccupancy:
        v = occupancy(p, def.target);
        break;
      case FunctionalDef::Kind::DetectionProb: {
        v = 0.0;
        for (double tau : def.assess_times)
          if (tau <= p.censor_time + 1e-12 && contains(def.target, p.state_at(tau))) {
            v = 1.0;
            break;
          }
        break;
      }
    }
    if (!use) continue;
    sum += v;
    sumsq += v * v;
    ++n_used;
  }
  if (n_used == 0) return out;  // undefined
  out.defined = true;
  out.value = sum / static_cast<double>(n_used);
  if (n_used > 1) {
    double var = (sumsq - sum * sum / static_cast<double>(n_used)) / static_cast<double>(n_used - 1);
    out.mc_se = std::sqrt(std::max(var, 0.0) / static_cast<double>(n_used));
  }
  return out;
}

FunctionalTable estimate_functionals(const Model& model, const Eigen::VectorXd& theta_u,
                                     const std::vector<Arm>& arms,
                                     const std::vector<FunctionalDef>& defs, double horizon,
                                     int n_sim, std::uint64_t seed, int threads) {
  FunctionalTable table;
  for (size_t a = 0; a < arms.size(); ++a) {
    const auto& arm = arms[a];
    auto covx = model.resolve_covariates(arm.covariates);
    std::vector<SamplePath> paths(n_sim);
    parallel_for(n_sim, threads, [&](int i) {
      Rng rng(derive_seed(seed, a, static_cast<std::uint64_t>(i)));
      paths[i] = simulate_path(model, covx, theta_u, arm.initial_state, 0.0, horizon, rng);
    });
    for (const auto& def : defs)
      table[def.name][arm.name] = eval_functional(def, paths, horizon);
  }
  return table;
}

std::map<std::string, FunctionalValue> eval_derived(const std::vector<DerivedDef>& defs,
                                                    const FunctionalTable& table) {
  std::map<std::string, FunctionalValue> out;
  for (const auto& d : defs) {
    FunctionalValue v;
    auto it = table.find(d.base);
    if (it != table.end()) {
      auto ni = it->second.find(d.num_arm);
      auto di = it->second.find(d.den_arm);
      if (ni != it->second.end() && di != it->second.end() && ni->second.defined &&
          di->second.defined && di->second.value != 0.0) {
        double rr = ni->second.value / di->second.value;
        double se = std::abs(rr) * std::sqrt(std::pow(ni->second.mc_se / ni->second.value, 2) +
                                             std::pow(di->second.mc_se / di->second.value, 2));
        v.defined = true;
        v.value = d.kind == DerivedDef::Kind::RR ? rr : 1.0 - rr;
        v.mc_se = se;
      }
    }
    out[d.name] = v;
  }
  return out;
}

SeroRatio sero_ratio(double observed_count, double estimated_infections) {
  SeroRatio r;
  if (!(estimated_infections > 0)) return r;
  r.defined = true;
  r.value = observed_count / estimated_infections;
  r.exceeds_one = r.value > 1.0;
  return r;
}

TwoStageSeroconversion seroconversion_two_stage(double c_asympt, double c_sympt,
                                                double est_inf_asympt, double est_inf_sympt,
                                                double est_inf_total) {
  TwoStageSeroconversion t;
  t.asymptomatic = sero_ratio(c_asympt, est_inf_asympt);
  t.symptomatic = sero_ratio(c_sympt, est_inf_sympt);
  t.overall = sero_ratio(c_asympt + c_sympt, est_inf_total);
  return t;
}

SimulatedCohort simulate_cohort(const Scenario& scenario, int n, std::uint64_t seed) {
  SimulatedCohort out;
  out.subjects.resize(n);
  out.paths.resize(n);
  std::vector<std::vector<Eigen::VectorXd>> arm_covx;
  for (const auto& arm : scenario.arms)
    arm_covx.push_back(scenario.model.resolve_covariates(arm.covariates));
  for (int i = 0; i < n; ++i) {
    const size_t a = scenario.arms.size() > 1 ? i % scenario.arms.size() : 0;
    const auto& arm = scenario.arms[a];
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    SamplePath path = simulate_path(scenario.model, arm_covx[a], scenario.theta_u,
                                    arm.initial_state, 0.0, scenario.horizon, rng);
    path.subject_index = i;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%04d", i + 1);
    out.subjects[i] = observe_panel(path, scenario.scheme, arm.covariates, buf, rng);
    out.paths[i] = std::move(path);
  }
  return out;
}

}  // namespace msm
