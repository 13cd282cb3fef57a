#ifndef MSM_SIMULATE_HPP
#define MSM_SIMULATE_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msm/model.hpp"
#include "msm/rng.hpp"
#include "msm/subject_data.hpp"

namespace msm {

// Forward simulation of one semi-Markov path from `initial_state` at time t0,
// censored at `horizon`. Sojourns are drawn by inverting the total-exit
// cumulative hazard (closed form for all-exponential exits, bracketed
// bisection otherwise); destinations by relative intensity at the exit time.
SamplePath simulate_path(const Model& model, const std::vector<Eigen::VectorXd>& covx,
                         const Eigen::VectorXd& theta_u, int initial_state, double t0,
                         double horizon, Rng& rng);

// How a latent path turns into panel records. When `markers` is empty the
// (aggregated) state itself is observed at each visit; otherwise candidate
// sets are the intersection of the marker-compatible sets.
struct ObservationScheme {
  std::vector<double> schedule;  // nominal visit times after t0=0, last = end of follow-up
  bool jitter = true;
  double jitter_a = 1.5, jitter_b = 1.5;
  bool final_fixed = true;  // last visit pinned at the nominal end of follow-up

  std::vector<Transition> exact_transitions;  // observed-space transitions seen exactly
  double epsilon = 1.0 / 24.0;                // width of exact-event records

  std::vector<int> state_map;  // simulation state -> observed state; empty = identity
  StateSet stop_states = 0;    // follow-up ends once the subject is seen here (e.g. death)

  struct Marker {
    std::string name;
    StateSet latent_set = 0;  // over the simulation space
    bool ever = false;        // history marker: ever entered latent_set by t
    StateSet if_true = 0, if_false = 0;  // compatible observed states
    bool final_only = false;
  };
  std::vector<Marker> markers;
};

// jittered visit times for one subject (deterministic given the rng state)
std::vector<double> draw_visit_times(const ObservationScheme& scheme, Rng& rng);

SubjectData observe_panel(const SamplePath& path, const ObservationScheme& scheme,
                          const Covariates& covariates, const std::string& id, Rng& rng);

// ---------------------------------------------------------------------------
// Model-based functionals, estimated by Monte Carlo over simulated cohorts.

// A path satisfies an event when it ever enters each set in `ever_each` and
// never enters `never` (empty constraints are vacuous).
struct EventDef {
  std::vector<StateSet> ever_each;
  StateSet never = 0;
};

struct FunctionalDef {
  enum class Kind {
    Probability,       // P(event | given)
    RMTimeToEntry,     // E[min(first entry into target, horizon)]
    MeanEntryGiven,    // E[entry time | entered target]
    RMBetween,         // E[min(T_target, horizon) - T_start | entered start]
    RMOccupancy,       // E[time in target before horizon | given]
    DetectionProb,     // P(state in target at some assess time | given)
  };
  std::string name;
  Kind kind = Kind::Probability;
  EventDef event;            // Probability only
  EventDef given;            // conditioning event (empty = unconditional)
  StateSet target = 0;       // entry/occupancy/detection target
  StateSet start = 0;        // RMBetween
  std::vector<double> assess_times;  // DetectionProb
};

struct FunctionalValue {
  double value = 0.0;
  bool defined = false;  // false when the conditioning set is empty
  double mc_se = 0.0;
};

FunctionalValue eval_functional(const FunctionalDef& def, const std::vector<SamplePath>& paths,
                                double horizon);

// name -> per-arm estimates keyed by arm name
using FunctionalTable = std::map<std::string, std::map<std::string, FunctionalValue>>;

struct Arm {
  std::string name;
  Covariates covariates;
  int initial_state = 0;
};

FunctionalTable estimate_functionals(const Model& model, const Eigen::VectorXd& theta_u,
                                     const std::vector<Arm>& arms,
                                     const std::vector<FunctionalDef>& defs, double horizon,
                                     int n_sim, std::uint64_t seed, int threads = 1);

// relative risks / protective efficacies between two arms of a base functional
struct DerivedDef {
  enum class Kind { RR, PE };
  std::string name;
  Kind kind = Kind::RR;
  std::string base;      // base functional name
  std::string num_arm;   // numerator arm (treated)
  std::string den_arm;   // denominator arm (placebo)
};

std::map<std::string, FunctionalValue> eval_derived(const std::vector<DerivedDef>& defs,
                                                    const FunctionalTable& table);

// two-stage seroconversion estimator: observed counts over model-implied
// infection counts; may exceed one (flagged), undefined on zero denominators
struct SeroRatio {
  double value = 0.0;
  bool defined = false;
  bool exceeds_one = false;
};
SeroRatio sero_ratio(double observed_count, double estimated_infections);

struct TwoStageSeroconversion {
  SeroRatio asymptomatic, symptomatic, overall;
};
TwoStageSeroconversion seroconversion_two_stage(double c_asympt, double c_sympt,
                                                double est_inf_asympt, double est_inf_sympt,
                                                double est_inf_total);

// ---------------------------------------------------------------------------
// Built-in study designs with published parameter values and ground truths.

struct Scenario {
  std::string name;
  Model model;  // simulation-truth model
  Eigen::VectorXd theta_u;
  double horizon = 0.0;
  std::vector<Arm> arms;
  ObservationScheme scheme;
  std::vector<FunctionalDef> functionals;
  std::vector<DerivedDef> derived;
  // published ground truths: base functionals keyed "name|arm", derived by name
  std::map<std::string, double> truths;
  int default_n = 0;

  // inferential model specs bundled with the scenario (reduced/refit models);
  // keyed by variant name, e.g. "weibull", "spline"
  std::map<std::string, Model> inference_models;
};

// names: illness_death_q, illness_death_m, trial9, trial9_reduced5
Scenario builtin_scenario(const std::string& name);

struct SimulatedCohort {
  std::vector<SubjectData> subjects;
  std::vector<SamplePath> paths;  // the latent truth, aligned with subjects
};

SimulatedCohort simulate_cohort(const Scenario& scenario, int n, std::uint64_t seed);

}  // namespace msm

#endif
