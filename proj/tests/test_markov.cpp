#include "doctest.h"

#include <cmath>
#include <functional>

#include "msm/markov.hpp"
#include "msm/rng.hpp"
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

StateSpace illness_death_space() { return StateSpace(3, {{0, 1}, {0, 2}, {1, 2}}); }

// Kolmogorov forward equation integrated with classical RK4
Eigen::MatrixXd kfe_rk4(const Eigen::MatrixXd& lambda, double t, double step) {
  Eigen::MatrixXd P = Eigen::MatrixXd::Identity(lambda.rows(), lambda.cols());
  int n = static_cast<int>(std::ceil(t / step));
  double h = t / n;
  for (int i = 0; i < n; ++i) {
    Eigen::MatrixXd k1 = P * lambda;
    Eigen::MatrixXd k2 = (P + 0.5 * h * k1) * lambda;
    Eigen::MatrixXd k3 = (P + 0.5 * h * k2) * lambda;
    Eigen::MatrixXd k4 = (P + h * k3) * lambda;
    P += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return P;
}

// brute-force marginal: enumerate candidate sequences, multiply plain
// matrix-exponential snapshot probabilities and exact segment densities
double enumerate_marginal(const MarkovSurrogate& sur, const CompiledSubject& cs) {
  const Eigen::MatrixXd lambda = sur.intensity_matrix(cs.covx);
  const int K = static_cast<int>(lambda.rows());
  std::vector<Eigen::MatrixXd> P;
  for (const auto& rec : cs.recs) P.push_back(transition_matrix(lambda, rec.dt));
  double total = 0.0;
  std::function<void(size_t, int, double)> walk = [&](size_t j, int prev, double prob) {
    if (j == cs.recs.size()) {
      total += prob;
      return;
    }
    const auto& rec = cs.recs[j];
    for (int b = 0; b < K; ++b) {
      if (!contains(rec.to, b)) continue;
      double w;
      if (rec.obstype == 1) {
        int a = first_state(rec.from);
        if (a != prev) continue;
        w = std::exp(lambda(a, a) * rec.dt) * (a == b ? 1.0 : lambda(a, b));
      } else {
        w = P[j](prev, b);
      }
      if (w > 0) walk(j + 1, b, prob * w);
    }
  };
  walk(0, cs.initial_state, 1.0);
  return std::log(total);
}

SubjectData snapshot_subject(const std::string& id, const SamplePath& path,
                             const std::vector<double>& visits, const Covariates& covs = {}) {
  SubjectData s;
  s.id = id;
  s.covariates = covs;
  double prev = path.times.front();
  StateSet prev_set = set_of(path.states.front());
  for (double v : visits) {
    StateSet now = set_of(path.state_at(v));
    s.records.push_back({prev, v, prev_set, now, 0});
    prev = v;
    prev_set = now;
  }
  return s;
}

}  // namespace

TEST_CASE("intensity matrix: structure, forbidden transitions, covariates") {
  StateSpace sp(2, {{0, 1}});
  Model m = exponential_model(sp);
  Eigen::VectorXd theta(1);
  theta << std::log(1.0);
  MarkovSurrogate sur(m, theta);
  auto covx = m.resolve_covariates({});

  Eigen::MatrixXd L = sur.intensity_matrix(covx);
  CHECK(L(0, 0) == doctest::Approx(-1.0));
  CHECK(L(0, 1) == doctest::Approx(1.0));
  CHECK(L(1, 0) == 0.0);
  CHECK(L(1, 1) == 0.0);

  Eigen::MatrixXd Lf = sur.intensity_matrix(covx, {{0, 1}});
  CHECK(Lf.norm() == 0.0);

  Model mc = exponential_model(sp, {"trt"});
  Eigen::VectorXd theta2(2);
  theta2 << std::log(2.0), std::log(0.5);
  MarkovSurrogate sur2(mc, theta2);
  Eigen::MatrixXd Lt = sur2.intensity_matrix(mc.resolve_covariates({{"trt", 1.0}}));
  CHECK(Lt(0, 1) == doctest::Approx(1.0));
  Eigen::MatrixXd Lp = sur2.intensity_matrix(mc.resolve_covariates({{"trt", 0.0}}));
  CHECK(Lp(0, 1) == doctest::Approx(2.0));
}

TEST_CASE("transition matrix: closed form, KFE oracle, dt -> 0, semigroup") {
  SUBCASE("unidirectional two-state") {
    Eigen::MatrixXd L(2, 2);
    double lam = 0.8, t = 1.3;
    L << -lam, lam, 0, 0;
    Eigen::MatrixXd P = transition_matrix(L, t);
    CHECK(P(0, 0) == doctest::Approx(std::exp(-lam * t)).epsilon(1e-12));
    CHECK(P(0, 1) == doctest::Approx(1.0 - std::exp(-lam * t)).epsilon(1e-12));
  }
  SUBCASE("three-state illness-death generator matches RK4 integration of the KFE") {
    Eigen::MatrixXd L(3, 3);
    L << -2.5, 1.5, 1.0, 0, -2.0, 2.0, 0, 0, 0;
    for (double t : {0.25, 1.0}) {
      Eigen::MatrixXd P = transition_matrix(L, t);
      Eigen::MatrixXd Q = kfe_rk4(L, t, 1e-4);
      CHECK((P - Q).cwiseAbs().maxCoeff() < 1e-8);
      for (int i = 0; i < 3; ++i) CHECK(P.row(i).sum() == doctest::Approx(1.0).epsilon(1e-10));
    }
  }
  SUBCASE("first-order accuracy as dt -> 0") {
    Eigen::MatrixXd L(3, 3);
    L << -2.5, 1.5, 1.0, 0, -2.0, 2.0, 0, 0, 0;
    Eigen::MatrixXd I = Eigen::MatrixXd::Identity(3, 3);
    for (double dt : {1e-3, 1e-4, 1e-5}) {
      double err = (transition_matrix(L, dt) - (I + L * dt)).cwiseAbs().maxCoeff();
      CHECK(err < 10.0 * dt * dt);
    }
  }
  SUBCASE("semigroup property") {
    Eigen::MatrixXd L(3, 3);
    L << -1.7, 0.9, 0.8, 0, -0.6, 0.6, 0, 0, 0;
    Eigen::MatrixXd a = transition_matrix(L, 0.7), b = transition_matrix(L, 0.45);
    Eigen::MatrixXd c = transition_matrix(L, 1.15);
    CHECK((a * b - c).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("markov marginal loglik: fully observed path equals the complete-data loglik") {
  auto space = illness_death_space();
  Model m = exponential_model(space);
  Eigen::VectorXd theta(3);
  theta << std::log(1.5), std::log(0.5), std::log(2.0);
  MarkovSurrogate sur(m, theta);

  SamplePath path;
  path.times = {0.0, 0.4, 0.9};
  path.states = {0, 1, 2};
  path.censor_time = 1.0;
  SubjectData s;
  s.id = "full";
  s.records = {{0.0, 0.4, set_of(0), set_of(1), 1},
               {0.4, 0.9, set_of(1), set_of(2), 1},
               {0.9, 1.0, set_of(2), set_of(2), 1}};
  auto compiled = compile_subjects(m, {s});
  double got = markov_marginal_loglik_subject(sur, compiled[0]);
  double want = m.path_loglik(path, {}, theta);
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("markov marginal loglik: inserting a full-space snapshot changes nothing") {
  auto space = illness_death_space();
  Model m = exponential_model(space);
  Rng rng(17);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::VectorXd theta(3);
    for (int i = 0; i < 3; ++i) theta[i] = rng.uniform(-1.0, 0.5);
    MarkovSurrogate sur(m, theta);
    StateSet full = space.all_states();
    SubjectData s;
    s.id = "ck";
    s.records = {{0.0, 0.5, set_of(0), set_of(0) | set_of(1), 0},
                 {0.5, 1.0, set_of(0) | set_of(1), full, 0},
                 {1.0, 1.6, full, set_of(1) | set_of(2), 0}};
    SubjectData s2;
    s2.id = "ck2";
    s2.records = {{0.0, 0.5, set_of(0), set_of(0) | set_of(1), 0},
                  {0.5, 0.75, set_of(0) | set_of(1), full, 0},
                  {0.75, 1.0, full, full, 0},
                  {1.0, 1.6, full, set_of(1) | set_of(2), 0}};
    auto c1 = compile_subjects(m, {s});
    auto c2 = compile_subjects(m, {s2});
    CHECK(markov_marginal_loglik_subject(sur, c1[0]) ==
          doctest::Approx(markov_marginal_loglik_subject(sur, c2[0])).epsilon(1e-10));
  }
}

TEST_CASE("markov marginal loglik: forward recursion equals candidate-sequence enumeration") {
  StateSpace space(5, {{0, 1}, {1, 2}, {1, 3}, {3, 4}});
  Model m = exponential_model(space, {"trt"});
  Rng rng(23);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::VectorXd theta(m.n_params());
    for (int i = 0; i < theta.size(); ++i) theta[i] = rng.uniform(-1.5, 0.5);
    MarkovSurrogate sur(m, theta);
    const StateSet s13 = set_of(0) | set_of(2);
    SubjectData a;
    a.id = "a";
    a.covariates = {{"trt", 1.0}};
    a.records = {{0, 7, set_of(0), s13, 0},
                 {7, 14, s13, s13, 0},
                 {14, 21, s13, s13, 0},
                 {21, 28, s13, set_of(2), 0}};
    SubjectData b;
    b.id = "b";
    b.covariates = {{"trt", 0.0}};
    const double eps = 1.0 / 24.0;
    b.records = {{0, 7, set_of(0), set_of(0), 0},
                 {7, 9 - eps, set_of(0), set_of(1), 0},
                 {9 - eps, 9, set_of(1), set_of(3), 1},
                 {9, 14, set_of(3), set_of(3) | set_of(4), 0},
                 {14, 28, set_of(3) | set_of(4), set_of(4), 0}};
    auto compiled = compile_subjects(m, {a, b});
    for (const auto& cs : compiled) {
      double got = markov_marginal_loglik_subject(sur, cs);
      double want = enumerate_marginal(sur, cs);
      CHECK(got == doctest::Approx(want).epsilon(1e-10));
    }
  }
}

TEST_CASE("markov marginal loglik: infeasible subject raises the subject id") {
  StateSpace space(3, {{0, 1}, {1, 2}});
  Model m = exponential_model(space);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(2);
  MarkovSurrogate sur(m, theta);
  SubjectData s;
  s.id = "who";
  s.records = {{0, 1, set_of(2), set_of(0), 0}};
  auto compiled = compile_subjects(m, {s});
  CHECK_THROWS_WITH_AS(markov_marginal_loglik_subject(sur, compiled[0]),
                       doctest::Contains("who"), InfeasibleSubjectError);
}

TEST_CASE("fit_markov_mle: closed-form exponential MLE on fully observed data") {
  StateSpace sp(2, {{0, 1}});
  Model m = exponential_model(sp);
  std::vector<SubjectData> subjects;
  Rng rng(31);
  double events = 0.0, exposure = 0.0;
  for (int i = 0; i < 60; ++i) {
    SubjectData s;
    s.id = "s" + std::to_string(i);
    double w = rng.exponential(1.7);
    bool censored = (i % 4 == 3);
    double stop = censored ? 0.6 * w : w;
    s.records = {{0.0, stop, set_of(0), set_of(censored ? 0 : 1), 1}};
    exposure += stop;
    if (!censored) events += 1.0;
    subjects.push_back(std::move(s));
  }
  auto compiled = compile_subjects(m, subjects);
  MarkovFit fit = fit_markov_mle(m, compiled);
  CHECK(fit.converged);
  double rate = std::exp(fit.surrogate.theta_u()[0]);
  CHECK(rate == doctest::Approx(events / exposure).epsilon(1e-6));
}

TEST_CASE("fit_markov_mle: recovers illness-death rates from panel data") {
  auto space = illness_death_space();
  Model m = exponential_model(space);
  Eigen::VectorXd truth(3);
  truth << std::log(1.2), std::log(0.5), std::log(1.8);

  std::vector<SubjectData> subjects;
  auto covx = m.resolve_covariates({});
  Rng rng(4242);
  const std::vector<double> visits = {0.25, 0.5, 0.75, 1.0};
  for (int i = 0; i < 500; ++i) {
    SamplePath p = simulate_path(m, covx, truth, 0, 0.0, 1.0, rng);
    subjects.push_back(snapshot_subject("s" + std::to_string(i), p, visits));
  }
  auto compiled = compile_subjects(m, subjects);
  MarkovFit fit = fit_markov_mle(m, compiled);
  REQUIRE(fit.converged);
  auto neg = [&](const Eigen::VectorXd& u) {
    MarkovSurrogate s(m, u);
    return -markov_marginal_loglik(s, compiled);
  };
  Eigen::MatrixXd H = fd_hessian(neg, fit.surrogate.theta_u());
  Eigen::MatrixXd cov = H.inverse();
  for (int i = 0; i < 3; ++i) {
    double se = std::sqrt(cov(i, i));
    CHECK(std::abs(fit.surrogate.theta_u()[i] - truth[i]) < 3.0 * se);
  }
}

TEST_CASE("fit_markov_mle: no events drives the rate to the boundary") {
  StateSpace sp(2, {{0, 1}});
  Model m = exponential_model(sp);
  SubjectData s;
  s.id = "only";
  s.records = {{0.0, 1.0, set_of(0), set_of(0), 0}};
  auto compiled = compile_subjects(m, {s});
  MarkovFit fit = fit_markov_mle(m, compiled);
  CHECK(fit.boundary);  // the rate runs to zero; reported as a finding
}

TEST_CASE("coxian expansion") {
  auto space = illness_death_space();
  Model m = exponential_model(space);

  SUBCASE("two phases on the healthy state of illness-death") {
    auto ex = coxian_expansion(space, {0, 1}, 2, m.hazards());
    CHECK(ex.latent.n_states() == 4);
    CHECK(ex.to_observed == std::vector<int>{0, 0, 1, 2});
    CHECK(ex.entry_state == std::vector<int>{0, 2, 3});
    CHECK(ex.latent_set(set_of(0), false) == (set_of(0) | set_of(1)));
    CHECK(ex.latent_set(set_of(0), true) == set_of(0));
    CHECK(ex.latent_set(set_of(1) | set_of(2), false) == (set_of(2) | set_of(3)));
    Model latent(ex.latent, ex.hazards);
    CHECK(latent.space().n_transitions() == 6);
    CHECK(latent.n_params() == 5);  // 2 exits + tied death + ill->dead + advance
  }
  SUBCASE("single phase is the identity expansion") {
    auto ex = coxian_expansion(space, {0, 1}, 1, m.hazards());
    CHECK(ex.latent.n_states() == 3);
    Model latent(ex.latent, ex.hazards);
    CHECK(latent.n_params() == m.n_params());
  }
  SUBCASE("expanding an absorbing state is a domain error") {
    CHECK_THROWS_AS(coxian_expansion(space, {2, 0}, 2, m.hazards()), std::domain_error);
  }
}

TEST_CASE("coxian-expanded fit improves the likelihood on weibull data") {
  auto space = illness_death_space();
  std::vector<HazardSpec> hz;
  for (const auto& t : space.transitions()) {
    HazardSpec h;
    h.trans = t;
    h.family = t.from == 0 && t.to == 1 ? HazardFamily::Weibull : HazardFamily::Exponential;
    hz.push_back(h);
  }
  Model truth_model(space, hz);
  Eigen::VectorXd truth = Eigen::VectorXd::Zero(truth_model.n_params());
  truth[truth_model.layout().index_of(0, "log_scale")] = std::log(1.5);
  truth[truth_model.layout().index_of(0, "log_shape")] = std::log(2.5);
  truth[truth_model.layout().index_of(1, "log_rate")] = std::log(0.3);
  truth[truth_model.layout().index_of(2, "log_rate")] = std::log(1.0);

  auto covx = truth_model.resolve_covariates({});
  Rng rng(555);
  std::vector<SubjectData> subjects;
  const std::vector<double> visits = {0.2, 0.4, 0.6, 0.8, 1.0};
  for (int i = 0; i < 300; ++i) {
    SamplePath p = simulate_path(truth_model, covx, truth, 0, 0.0, 1.0, rng);
    subjects.push_back(snapshot_subject("s" + std::to_string(i), p, visits));
  }

  Model markov = exponential_model(space);
  auto cm = compile_subjects(markov, subjects);
  MarkovFit plain = fit_markov_mle(markov, cm);
  REQUIRE(plain.converged);

  auto ex = coxian_expansion(space, {0, 1}, 2, markov.hazards());
  Model latent(ex.latent, ex.hazards);
  auto mapped = ex.map_subjects(subjects);
  auto cl = compile_subjects(latent, mapped);
  MarkovFit phase = fit_markov_mle(latent, cl);
  REQUIRE(phase.converged);

  CHECK(phase.loglik > plain.loglik + 2.0);
}
