#include "doctest.h"

#include <cmath>
#include <functional>
#include <map>

#include "msm/sampler.hpp"
#include "msm/simulate.hpp"
#include "test_util.hpp"

using namespace msm;

namespace {

Model exponential_model(const StateSpace& space, const std::vector<std::string>& covs = {}) {
  std::vector<HazardSpec> hz;
  for (const auto& t : space.transitions()) {
    HazardSpec h;
    h.trans = t;
    h.family = HazardFamily::Exponential;
    h.covariates = covs;
    hz.push_back(h);
  }
  return Model(space, hz);
}

// illness-death with explicit rates
MarkovSurrogate illness_death_surrogate(double l01, double l02, double l12) {
  StateSpace space(3, {{0, 1}, {0, 2}, {1, 2}});
  Model m = exponential_model(space);
  Eigen::VectorXd theta(3);
  theta << std::log(l01), std::log(l02), std::log(l12);
  return MarkovSurrogate(m, theta);
}

// brute-force skeleton posterior by enumerating candidate sequences with the
// same weight matrices the filter uses (plain transition probabilities)
std::map<std::vector<int>, double> enumerate_skeleton_posterior(const MarkovSurrogate& sur,
                                                                const CompiledSubject& cs) {
  const Eigen::MatrixXd lambda = sur.intensity_matrix(cs.covx);
  const int K = static_cast<int>(lambda.rows());
  std::vector<Eigen::MatrixXd> P;
  for (const auto& rec : cs.recs) P.push_back(transition_matrix(lambda, rec.dt));
  std::map<std::vector<int>, double> out;
  double total = 0.0;
  std::vector<int> seq{cs.initial_state};
  std::function<void(size_t, double)> walk = [&](size_t j, double prob) {
    if (j == cs.recs.size()) {
      out[seq] += prob;
      total += prob;
      return;
    }
    const auto& rec = cs.recs[j];
    for (int b = 0; b < K; ++b) {
      if (!contains(rec.to, b)) continue;
      double w;
      int prev = seq.back();
      if (rec.obstype == 1) {
        if (first_state(rec.from) != prev) continue;
        w = std::exp(lambda(prev, prev) * rec.dt) * (prev == b ? 1.0 : lambda(prev, b));
      } else {
        w = P[j](prev, b);
      }
      if (w <= 0) continue;
      seq.push_back(b);
      walk(j + 1, prob * w);
      seq.pop_back();
    }
  };
  walk(0, 1.0);
  for (auto& [k, v] : out) v /= total;
  return out;
}

}  // namespace

TEST_CASE("bridge: same endpoints in a progressive model give a constant path") {
  auto sur = illness_death_surrogate(1.5, 0.5, 2.0);
  auto covx = sur.model().resolve_covariates({});
  Eigen::MatrixXd lambda = sur.intensity_matrix(covx);
  BridgeSampler bridge(lambda, sur.model().space().all_states(), 0.8);
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    auto path = bridge.sample(0, 0, rng);
    CHECK(path.states.empty());
    CHECK(path.log_density == doctest::Approx(lambda(0, 0) * 0.8 - std::log(bridge.P()(0, 0))));
  }
}

TEST_CASE("bridge: jump-time mean matches the truncated-exponential oracle") {
  // two-state chain conditioned on absorption by T
  StateSpace space(2, {{0, 1}});
  Model m = exponential_model(space);
  const double lam = 0.9, T = 1.4;
  Eigen::VectorXd theta(1);
  theta << std::log(lam);
  MarkovSurrogate sur(m, theta);
  Eigen::MatrixXd lambda = sur.intensity_matrix(m.resolve_covariates({}));
  BridgeSampler bridge(lambda, space.all_states(), T);
  Rng rng(77);
  double sum = 0.0;
  const int N = 100000;
  for (int i = 0; i < N; ++i) {
    auto path = bridge.sample(0, 1, rng);
    REQUIRE(path.states.size() == 1);
    sum += path.jump_times[0];
  }
  const double denom = 1.0 - std::exp(-lam * T);
  const double oracle = (1.0 / lam - (T + 1.0 / lam) * std::exp(-lam * T)) / denom;
  CHECK(std::abs(sum / N - oracle) < 2e-3);
}

TEST_CASE("bridge: midpoint state distribution matches the matrix-exponential formula") {
  auto sur = illness_death_surrogate(1.2, 0.4, 1.6);
  auto covx = sur.model().resolve_covariates({});
  Eigen::MatrixXd lambda = sur.intensity_matrix(covx);
  const double T = 1.0;
  BridgeSampler bridge(lambda, sur.model().space().all_states(), T);
  Eigen::MatrixXd Ph = transition_matrix(lambda, T / 2);
  Eigen::MatrixXd Pf = transition_matrix(lambda, T);
  const int a = 0, b = 2;
  Eigen::VectorXd want(3);
  for (int s = 0; s < 3; ++s) want[s] = Ph(a, s) * Ph(s, b) / Pf(a, b);
  Rng rng(99);
  Eigen::VectorXd freq = Eigen::VectorXd::Zero(3);
  const int N = 100000;
  for (int i = 0; i < N; ++i) {
    auto path = bridge.sample(a, b, rng);
    int cur = a;
    for (size_t k = 0; k < path.states.size() && path.jump_times[k] <= T / 2; ++k)
      cur = path.states[k];
    freq[cur] += 1.0;
  }
  freq /= N;
  for (int s = 0; s < 3; ++s) CHECK(std::abs(freq[s] - want[s]) <= 0.01);
}

TEST_CASE("bridge: endpoint pair with zero probability is an error") {
  auto sur = illness_death_surrogate(1.0, 1.0, 1.0);
  auto covx = sur.model().resolve_covariates({});
  BridgeSampler bridge(sur.intensity_matrix(covx), sur.model().space().all_states(), 1.0);
  Rng rng(5);
  CHECK_THROWS(bridge.sample(2, 0, rng));
}

TEST_CASE("ffbs: singleton candidate sets are returned with probability one") {
  auto sur = illness_death_surrogate(1.5, 0.5, 2.0);
  SubjectData s;
  s.id = "sing";
  s.records = {{0.0, 0.3, set_of(0), set_of(0), 0},
               {0.3, 0.7, set_of(0), set_of(1), 0},
               {0.7, 1.0, set_of(1), set_of(2), 0}};
  auto compiled = compile_subjects(sur.model(), {s});
  ProposalContext ctx(sur, compiled[0]);
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    auto sk = ctx.ffbs_skeleton(rng);
    CHECK(sk.states == std::vector<int>{0, 0, 1, 2});
    CHECK(sk.logp == doctest::Approx(0.0));
  }
}

TEST_CASE("ffbs: empirical skeleton distribution matches brute-force enumeration") {
  // weekly-PCR ambiguity pattern: interior candidate sets {1,3} resolved by
  // terminal serology, in the five-state progression space
  StateSpace space(5, {{0, 1}, {1, 2}, {1, 3}, {3, 4}});
  Model m = exponential_model(space);
  Eigen::VectorXd theta(4);
  theta << std::log(0.12), std::log(0.35), std::log(0.3), std::log(0.2);
  MarkovSurrogate sur(m, theta);
  const StateSet s13 = set_of(0) | set_of(2);
  SubjectData s;
  s.id = "p003";
  s.records = {{0, 7, set_of(0), s13, 0},
               {7, 14, s13, s13, 0},
               {14, 21, s13, s13, 0},
               {21, 28, s13, set_of(2), 0}};
  auto compiled = compile_subjects(m, {s});
  ProposalContext ctx(sur, compiled[0]);
  auto posterior = enumerate_skeleton_posterior(sur, compiled[0]);

  std::map<std::vector<int>, double> freq;
  Rng rng(12345);
  const int N = 100000;
  for (int i = 0; i < N; ++i) {
    auto sk = ctx.ffbs_skeleton(rng);
    freq[sk.states] += 1.0 / N;
    // the reported conditional probability matches the enumerated posterior
    auto it = posterior.find(sk.states);
    REQUIRE(it != posterior.end());
    CHECK(std::exp(sk.logp) == doctest::Approx(it->second).epsilon(1e-9));
  }
  for (const auto& [seq, p] : posterior) CHECK(std::abs(freq[seq] - p) <= 0.01);
  double tv = 0.0;
  for (const auto& [seq, p] : posterior) tv += std::abs(freq[seq] - p);
  CHECK(tv / 2.0 <= 0.01);
}

TEST_CASE("ffbs: infeasible candidate sets raise an error naming the subject") {
  auto sur = illness_death_surrogate(1.0, 1.0, 1.0);
  SubjectData s;
  s.id = "nope";
  s.records = {{0.0, 0.5, set_of(2), set_of(2), 0}, {0.5, 1.0, set_of(2), set_of(0), 0}};
  auto compiled = compile_subjects(sur.model(), {s});
  CHECK_THROWS_WITH_AS(ProposalContext(sur, compiled[0]), doctest::Contains("nope"),
                       InfeasibleSubjectError);
}

TEST_CASE("propose_path: concordance, densities, and the marginal-likelihood identity") {
  StateSpace space(5, {{0, 1}, {1, 2}, {1, 3}, {3, 4}});
  Model m = exponential_model(space, {"trt"});
  Rng prng(31);
  const double eps = 1.0 / 24.0;
  for (int rep = 0; rep < 8; ++rep) {
    Eigen::VectorXd theta(m.n_params());
    for (int i = 0; i < theta.size(); ++i) theta[i] = prng.uniform(-2.2, -0.5);
    MarkovSurrogate sur(m, theta);
    const StateSet s13 = set_of(0) | set_of(2);
    SubjectData s;
    s.id = "r" + std::to_string(rep);
    s.covariates = {{"trt", rep % 2 ? 1.0 : 0.0}};
    if (rep % 2 == 0) {
      s.records = {{0, 7, set_of(0), s13, 0},
                   {7, 14, s13, s13, 0},
                   {14, 28, s13, set_of(2), 0}};
    } else {
      s.records = {{0, 7, set_of(0), set_of(0), 0},
                   {7, 9 - eps, set_of(0), set_of(1), 0},
                   {9 - eps, 9, set_of(1), set_of(3), 1},
                   {9, 21, set_of(3), set_of(3) | set_of(4), 0},
                   {21, 28, set_of(3) | set_of(4), set_of(4), 0}};
    }
    auto compiled = compile_subjects(m, {s});
    ProposalContext ctx(sur, compiled[0]);
    const double log_r = ctx.log_marginal();
    CHECK(log_r == doctest::Approx(markov_marginal_loglik_subject(sur, compiled[0])).epsilon(1e-12));
    Rng rng(1000 + rep);
    for (int i = 0; i < 1250; ++i) {
      auto prop = ctx.propose_path(rng);
      CHECK(concordant(prop.path, s));
      // unconditional surrogate density equals the model-core path loglik
      double ll = m.path_loglik(prop.path, s.covariates, theta);
      CHECK(prop.log_surrogate == doctest::Approx(ll).epsilon(1e-10));
      // exact normalization: log h - log h' = log r on every draw
      CHECK(prop.log_surrogate - prop.log_proposal == doctest::Approx(log_r).epsilon(1e-10));
    }
  }
}

TEST_CASE("propose_path: fully observed subject returns the observed path") {
  auto sur = illness_death_surrogate(1.5, 0.5, 2.0);
  SubjectData s;
  s.id = "full";
  s.records = {{0.0, 0.4, set_of(0), set_of(1), 1}, {0.4, 1.0, set_of(1), set_of(2), 1}};
  auto compiled = compile_subjects(sur.model(), {s});
  ProposalContext ctx(sur, compiled[0]);
  Rng rng(8);
  auto prop = ctx.propose_path(rng);
  CHECK(prop.path.times == std::vector<double>{0.0, 0.4, 1.0});
  CHECK(prop.path.states == std::vector<int>{0, 1, 2});
  CHECK(prop.log_proposal == doctest::Approx(0.0));
  CHECK(prop.log_surrogate == doctest::Approx(ctx.log_marginal()).epsilon(1e-12));
}

TEST_CASE("propose_path: identical seeds replay identical paths") {
  auto sur = illness_death_surrogate(1.5, 0.5, 2.0);
  SubjectData s;
  s.id = "det";
  s.records = {{0.0, 0.5, set_of(0), set_of(0) | set_of(1), 0},
               {0.5, 1.0, set_of(0) | set_of(1), set_of(2), 0}};
  auto compiled = compile_subjects(sur.model(), {s});
  ProposalContext ctx(sur, compiled[0]);
  Rng rng1(4242), rng2(4242);
  for (int i = 0; i < 200; ++i) {
    auto a = ctx.propose_path(rng1);
    auto b = ctx.propose_path(rng2);
    CHECK(a.path.times == b.path.times);
    CHECK(a.path.states == b.path.states);
    CHECK(a.log_surrogate == b.log_surrogate);
    CHECK(a.log_proposal == b.log_proposal);
  }
}

TEST_CASE("propose_path: jump counts match rejection-sampled bridges (joint exactness)") {
  // independent oracle: forward-simulate unconditioned surrogate paths and
  // keep those that satisfy the panel records; compare the joint distribution
  // of (skeleton states, total jump count)
  auto sur = illness_death_surrogate(1.1, 0.45, 1.3);
  const Model& m = sur.model();
  auto covx = m.resolve_covariates({});
  SubjectData s;
  s.id = "jx";
  s.records = {{0.0, 0.6, set_of(0), set_of(0) | set_of(1), 0},
               {0.6, 1.2, set_of(0) | set_of(1), set_of(1) | set_of(2), 0}};
  auto compiled = compile_subjects(m, {s});
  ProposalContext ctx(sur, compiled[0]);

  std::map<std::vector<int>, double> prop_freq, rej_freq;
  Rng rng(2025);
  const int N = 100000;
  for (int i = 0; i < N; ++i) {
    auto prop = ctx.propose_path(rng);
    std::vector<int> key = {prop.path.state_at(0.6), prop.path.state_at(1.2),
                            prop.path.n_transitions()};
    prop_freq[key] += 1.0 / N;
  }
  Rng rrng(77);
  int kept = 0;
  std::vector<std::vector<int>> keys;
  while (kept < N) {
    SamplePath p = simulate_path(m, covx, sur.theta_u(), 0, 0.0, 1.2, rrng);
    if (!concordant(p, s)) continue;
    ++kept;
    rej_freq[{p.state_at(0.6), p.state_at(1.2), p.n_transitions()}] += 1.0 / N;
  }
  double tv = 0.0;
  for (const auto& [k, v] : prop_freq) tv += std::abs(v - rej_freq[k]);
  for (const auto& [k, v] : rej_freq)
    if (!prop_freq.count(k)) tv += v;
  CHECK(tv / 2.0 <= 0.02);
}

TEST_CASE("rejection sampler") {
  auto sur = illness_death_surrogate(1.5, 0.5, 2.0);
  const Model& m = sur.model();
  auto covx = m.resolve_covariates({});

  SUBCASE("full-space candidates accept on the first attempt") {
    StateSet full = m.space().all_states();
    SubjectData s;
    s.id = "easy";
    s.records = {{0.0, 0.5, set_of(0), full, 0}, {0.5, 1.0, full, full, 0}};
    Rng rng(3);
    auto res = rejection_sample_path(m, sur.theta_u(), s, covx, rng, 100);
    CHECK(res.accepted);
    CHECK(res.attempts == 1);
  }
  SUBCASE("infeasible data exhaust the attempt budget") {
    SubjectData s;
    s.id = "hard";
    s.records = {{0.0, 0.5, set_of(0), set_of(2), 0}, {0.5, 1.0, set_of(2), set_of(0), 0}};
    Rng rng(3);
    auto res = rejection_sample_path(m, sur.theta_u(), s, covx, rng, 50);
    CHECK(!res.accepted);
    CHECK(res.attempts == 50);
  }
}
