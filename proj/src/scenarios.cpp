#include <cmath>
#include <stdexcept>

#include "msm/simulate.hpp"

namespace msm {

namespace {

HazardSpec exp_hazard(int from1, int to1, std::vector<std::string> covs = {}) {
  HazardSpec h;
  h.trans = {from1 - 1, to1 - 1};
  h.family = HazardFamily::Exponential;
  h.covariates = std::move(covs);
  return h;
}

HazardSpec weib_hazard(int from1, int to1, std::vector<std::string> covs = {}) {
  HazardSpec h = exp_hazard(from1, to1, std::move(covs));
  h.family = HazardFamily::Weibull;
  return h;
}

void set_par(const Model& m, Eigen::VectorXd& theta, int hazard, const std::string& name,
             double value) {
  int idx = m.layout().index_of(hazard, name);
  if (idx < 0) throw std::logic_error("scenario: unknown parameter " + name);
  theta[idx] = value;
}

// weekly / monthly / quarterly style schedules ending exactly at the horizon
std::vector<double> regular_schedule(double step, double horizon) {
  std::vector<double> s;
  for (double t = step; t < horizon - 1e-9; t += step) s.push_back(t);
  s.push_back(horizon);
  return s;
}

Scenario illness_death(bool quarterly) {
  Scenario sc;
  sc.name = quarterly ? "illness_death_q" : "illness_death_m";
  StateSpace space(3, {{0, 1}, {0, 2}, {1, 2}}, {"healthy", "ill", "dead"});
  std::vector<HazardSpec> hz = {weib_hazard(1, 2), weib_hazard(1, 3), weib_hazard(2, 3)};
  sc.model = Model(space, hz);
  sc.theta_u = Eigen::VectorXd::Zero(sc.model.n_params());
  set_par(sc.model, sc.theta_u, 0, "log_scale", std::log(1.5));
  set_par(sc.model, sc.theta_u, 0, "log_shape", std::log(1.25));
  set_par(sc.model, sc.theta_u, 1, "log_scale", std::log(1.0));
  set_par(sc.model, sc.theta_u, 1, "log_shape", std::log(1.25));
  set_par(sc.model, sc.theta_u, 2, "log_scale", std::log(2.0));
  set_par(sc.model, sc.theta_u, 2, "log_shape", std::log(1.25));
  sc.horizon = 1.0;
  sc.arms = {{"all", {}, 0}};
  sc.default_n = 250;

  sc.scheme.schedule = regular_schedule(quarterly ? 0.25 : 1.0 / 12.0, 1.0);
  sc.scheme.jitter = true;
  sc.scheme.final_fixed = true;
  sc.scheme.exact_transitions = {{0, 2}, {1, 2}};  // death time and its cause are recorded
  sc.scheme.epsilon = 1.0 / 8760.0;                // one hour, in years
  sc.scheme.stop_states = set_of(2);

  const StateSet ill = set_of(1), dead = set_of(2), exited = ill | dead;
  FunctionalDef f;
  f.name = "pr_rfs";
  f.kind = FunctionalDef::Kind::Probability;
  f.event = {{}, exited};
  sc.functionals.push_back(f);
  f = {};
  f.name = "pr_recur";
  f.kind = FunctionalDef::Kind::Probability;
  f.event = {{ill}, 0};
  sc.functionals.push_back(f);
  f = {};
  f.name = "pr_death_with_recur";
  f.kind = FunctionalDef::Kind::Probability;
  f.event = {{ill, dead}, 0};
  sc.functionals.push_back(f);
  f = {};
  f.name = "pr_death_wo_recur";
  f.kind = FunctionalDef::Kind::Probability;
  f.event = {{dead}, ill};
  sc.functionals.push_back(f);
  f = {};
  f.name = "rm_rfst";
  f.kind = FunctionalDef::Kind::RMTimeToEntry;
  f.target = exited;
  sc.functionals.push_back(f);
  f = {};
  f.name = "ttr_given_recur";
  f.kind = FunctionalDef::Kind::MeanEntryGiven;
  f.target = ill;
  sc.functionals.push_back(f);
  f = {};
  f.name = "rm_ttr_or_eof";
  f.kind = FunctionalDef::Kind::RMTimeToEntry;
  f.target = ill;
  sc.functionals.push_back(f);
  f = {};
  f.name = "rm_ttd_given_recur";
  f.kind = FunctionalDef::Kind::RMBetween;
  f.start = ill;
  f.target = dead;
  sc.functionals.push_back(f);

  sc.truths = {{"pr_rfs|all", 0.082},          {"pr_recur|all", 0.551},
               {"pr_death_with_recur|all", 0.349}, {"pr_death_wo_recur|all", 0.367},
               {"rm_rfst|all", 0.423},          {"ttr_given_recur|all", 0.371},
               {"rm_ttr_or_eof|all", 0.654},    {"rm_ttd_given_recur|all", 0.378}};

  // inferential variants (spline knots are chosen from data at fit time)
  {
    std::vector<HazardSpec> eh = {exp_hazard(1, 2), exp_hazard(1, 3), exp_hazard(2, 3)};
    sc.inference_models.emplace("exponential", Model(space, eh));
    sc.inference_models.emplace("weibull", Model(space, hz));
  }
  return sc;
}

void add_trial9_functionals(Scenario& sc, StateSet infected, StateSet sympt, StateSet sero,
                            StateSet pcrpos, const std::vector<double>& pcr_weeks) {
  auto add_prob = [&](const std::string& name, EventDef ev, EventDef given = {}) {
    FunctionalDef f;
    f.name = name;
    f.kind = FunctionalDef::Kind::Probability;
    f.event = std::move(ev);
    f.given = std::move(given);
    sc.functionals.push_back(f);
  };
  add_prob("pr_infec", {{infected}, 0});
  add_prob("pr_sympt", {{sympt}, 0});
  add_prob("pr_asympt", {{infected}, sympt});
  add_prob("pr_sympt_given_infec", {{sympt}, 0}, {{infected}, 0});
  add_prob("pr_asympt_given_infec", {{infected}, sympt}, {{infected}, 0});
  if (sero != 0) {
    add_prob("pr_seropos_given_infec", {{sero}, 0}, {{infected}, 0});
    add_prob("pr_seropos_given_sympt", {{sero}, 0}, {{sympt}, 0});
    add_prob("pr_seropos_given_asympt", {{sero}, 0}, {{infected}, sympt});
  }
  FunctionalDef f;
  f.name = "rm_time_to_infection";
  f.kind = FunctionalDef::Kind::RMTimeToEntry;
  f.target = infected;
  sc.functionals.push_back(f);
  f = {};
  f.name = "rm_pcr_pos";
  f.kind = FunctionalDef::Kind::RMOccupancy;
  f.target = pcrpos;
  f.given = {{infected}, 0};
  sc.functionals.push_back(f);
  f = {};
  f.name = "pr_detected";
  f.kind = FunctionalDef::Kind::DetectionProb;
  f.target = pcrpos;
  f.given = {{infected}, 0};
  f.assess_times = pcr_weeks;
  sc.functionals.push_back(f);

  auto add_derived = [&](const std::string& name, DerivedDef::Kind kind, const std::string& base) {
    sc.derived.push_back({name, kind, base, "mab", "placebo"});
  };
  add_derived("pe_infec", DerivedDef::Kind::PE, "pr_infec");
  add_derived("pe_sympt", DerivedDef::Kind::PE, "pr_sympt");
  add_derived("pe_asympt", DerivedDef::Kind::PE, "pr_asympt");
  add_derived("rr_sympt_given_infec", DerivedDef::Kind::RR, "pr_sympt_given_infec");
  if (sero != 0) {
    add_derived("rr_seropos_given_infec", DerivedDef::Kind::RR, "pr_seropos_given_infec");
    add_derived("rr_seropos_given_sympt", DerivedDef::Kind::RR, "pr_seropos_given_sympt");
    add_derived("rr_seropos_given_asympt", DerivedDef::Kind::RR, "pr_seropos_given_asympt");
  }
}

Model trial9_sim_model() {
  // transitions from the published diagram; the ambiguous 3->4 row of the
  // parameter table is applied to the diagram's 3->5 edge
  StateSpace space(9,
                   {{0, 1}, {1, 2}, {1, 3}, {2, 4}, {3, 4}, {1, 5}, {5, 6}, {5, 7}, {6, 8}, {7, 8}},
                   {});
  std::vector<std::string> trt = {"trt"};
  std::vector<HazardSpec> hz = {
      weib_hazard(1, 2, trt), exp_hazard(2, 3, trt), exp_hazard(2, 4, trt),
      exp_hazard(3, 5, trt),  exp_hazard(4, 5, trt), weib_hazard(2, 6, trt),
      exp_hazard(6, 7, trt),  exp_hazard(6, 8, trt), exp_hazard(7, 9, trt),
      exp_hazard(8, 9, trt)};
  return Model(space, hz);
}

Eigen::VectorXd trial9_truth(const Model& m) {
  Eigen::VectorXd th = Eigen::VectorXd::Zero(m.n_params());
  auto P = [&](int h, const std::string& n, double v) { set_par(m, th, h, n, v); };
  P(0, "log_scale", std::log(0.6));
  P(0, "log_shape", std::log(0.7));
  P(0, "beta_trt", std::log(0.33));
  P(1, "log_rate", std::log(0.2));
  P(1, "beta_trt", std::log(0.5));
  P(2, "log_rate", std::log(0.3));
  P(2, "beta_trt", 0.0);
  P(3, "log_rate", std::log(0.3));
  P(3, "beta_trt", 0.0);
  P(4, "log_rate", std::log(0.25));
  P(4, "beta_trt", std::log(0.5));
  P(5, "log_scale", std::log(1.0));
  P(5, "log_shape", std::log(1.5));
  P(5, "beta_trt", std::log(0.4));
  P(6, "log_rate", std::log(1.0));
  P(6, "beta_trt", std::log(0.5));
  P(7, "log_rate", std::log(0.5));
  P(7, "beta_trt", 0.0);
  P(8, "log_rate", std::log(0.5));
  P(8, "beta_trt", 0.0);
  P(9, "log_rate", std::log(1.0));
  P(9, "beta_trt", std::log(0.5));
  return th;
}

// 1-based state sets over the 9-state simulation space
constexpr StateSet k9_infected = 0b111111110;  // states 2..9
constexpr StateSet k9_sympt = 0b111100000;     // states 6..9
constexpr StateSet k9_sero = 0b101010100;      // states 3,5,7,9
constexpr StateSet k9_pcrpos = 0b001100110;    // states 2,3,6,7

Scenario trial9() {
  Scenario sc;
  sc.name = "trial9";
  sc.model = trial9_sim_model();
  sc.theta_u = trial9_truth(sc.model);
  sc.horizon = 4.0;  // weeks
  sc.arms = {{"placebo", {{"trt", 0.0}}, 0}, {"mab", {{"trt", 1.0}}, 0}};
  sc.default_n = 1588;

  sc.scheme.schedule = regular_schedule(1.0, 4.0);
  sc.scheme.jitter = true;
  sc.scheme.final_fixed = true;
  sc.scheme.exact_transitions = {{1, 5}};  // symptom onset (2 -> 6)
  sc.scheme.epsilon = 1.0 / (24.0 * 7.0);  // one hour, in weeks
  // weekly assay panel: PCR, symptom history, serology
  StateSet all9 = (StateSet{1} << 9) - 1;
  sc.scheme.markers = {
      {"pcr", k9_pcrpos, false, k9_pcrpos, all9 & ~k9_pcrpos, false},
      {"sympt", k9_sympt, false, k9_sympt, all9 & ~k9_sympt, false},
      {"sero", k9_sero, false, k9_sero, all9 & ~k9_sero, false},
  };

  add_trial9_functionals(sc, k9_infected, k9_sympt, k9_sero, k9_pcrpos, {1, 2, 3, 4});
  sc.truths = {
      {"pr_infec|placebo", 0.795},
      {"pr_infec|mab", 0.407},
      {"pr_sympt|placebo", 0.430},
      {"pr_sympt|mab", 0.124},
      {"pr_asympt|placebo", 0.365},
      {"pr_asympt|mab", 0.283},
      {"pr_sympt_given_infec|placebo", 0.54},
      {"pr_sympt_given_infec|mab", 0.304},
      {"pr_asympt_given_infec|placebo", 0.460},
      {"pr_asympt_given_infec|mab", 0.696},
      {"pr_seropos_given_infec|placebo", 0.715},
      {"pr_seropos_given_infec|mab", 0.378},
      {"pr_seropos_given_sympt|placebo", 0.837},
      {"pr_seropos_given_sympt|mab", 0.572},
      {"pr_seropos_given_asympt|placebo", 0.570},
      {"pr_seropos_given_asympt|mab", 0.293},
      {"rm_time_to_infection|placebo", 1.730},
      {"rm_time_to_infection|mab", 2.97},
      {"rm_pcr_pos|placebo", 1.52},
      {"rm_pcr_pos|mab", 1.95},
      {"pr_detected|placebo", 0.646},
      {"pr_detected|mab", 0.843},
      {"pe_infec", 0.488},
      {"pe_sympt", 0.712},
      {"pe_asympt", 0.224},
      {"rr_sympt_given_infec", 0.562},
      {"rr_seropos_given_infec", 0.528},
      {"rr_seropos_given_sympt", 0.684},
      {"rr_seropos_given_asympt", 0.513},
  };
  return sc;
}

Scenario trial9_reduced5() {
  Scenario sc = trial9();
  sc.name = "trial9_reduced5";
  // observe in the five-state space: naive, PCR+/asympt, PCR-/asympt,
  // PCR+/sympt, PCR-/sympt
  sc.scheme.state_map = {0, 1, 1, 2, 2, 3, 3, 4, 4};
  sc.scheme.exact_transitions = {{1, 3}};  // symptom onset in observed coordinates
  const StateSet o_pcr = set_of(1) | set_of(3);
  const StateSet o_sympt = set_of(3) | set_of(4);
  const StateSet o_all = (StateSet{1} << 5) - 1;
  const StateSet o_infected = o_all & ~set_of(0);
  sc.scheme.markers = {
      {"pcr", k9_pcrpos, false, o_pcr, o_all & ~o_pcr, false},
      {"sympt", k9_sympt, false, o_sympt, o_all & ~o_sympt, false},
      // terminal serology: a positive implies prior infection; a negative
      // leaves the candidate set unchanged (not every infection seroconverts)
      {"sero", k9_sero, true, o_infected, o_all, true},
  };

  sc.functionals.clear();
  sc.derived.clear();
  add_trial9_functionals(sc, o_infected, o_sympt, 0, o_pcr, {1, 2, 3, 4});
  for (auto it = sc.truths.begin(); it != sc.truths.end();)
    it = it->first.find("seropos") != std::string::npos ? sc.truths.erase(it) : std::next(it);

  // five-state inferential models (Table-style parameterizations, weeks)
  StateSpace space5(5, {{0, 1}, {1, 2}, {1, 3}, {3, 4}},
                    {"naive", "pcr_pos", "pcr_neg", "sympt_pcr_pos", "sympt_pcr_neg"});
  std::vector<std::string> trt = {"trt"};
  {
    std::vector<HazardSpec> hz = {weib_hazard(1, 2, trt), exp_hazard(2, 3, trt),
                                  weib_hazard(2, 4, trt), exp_hazard(4, 5, trt)};
    sc.inference_models.emplace("weibull", Model(space5, hz));
  }
  {
    std::vector<HazardSpec> hz = {weib_hazard(1, 2, trt), exp_hazard(2, 3, trt),
                                  weib_hazard(2, 4, trt), exp_hazard(4, 5, trt)};
    for (size_t h = 0; h < hz.size(); ++h) {
      hz[h].family = HazardFamily::BSpline;
      hz[h].degree = 1;
      hz[h].interior_knots = {h == 0 ? 5.0 / 7.0 : 1.0};
      hz[h].boundary_left = 0.0;
      hz[h].boundary_right = 4.0;
    }
    sc.inference_models.emplace("spline", Model(space5, hz));
  }
  {
    std::vector<HazardSpec> hz = {exp_hazard(1, 2, trt), exp_hazard(2, 3, trt),
                                  exp_hazard(2, 4, trt), exp_hazard(4, 5, trt)};
    sc.inference_models.emplace("exponential", Model(space5, hz));
  }
  return sc;
}

}  // namespace

Scenario builtin_scenario(const std::string& name) {
  if (name == "illness_death_q") return illness_death(true);
  if (name == "illness_death_m") return illness_death(false);
  if (name == "trial9") return trial9();
  if (name == "trial9_reduced5") return trial9_reduced5();
  throw std::invalid_argument("unknown scenario '" + name +
                              "' (known: illness_death_q, illness_death_m, trial9, trial9_reduced5)");
}

}  // namespace msm
