#include "doctest.h"

#include <cmath>

#include "msm/model.hpp"
#include "msm/rng.hpp"
#include "msm/subject_data.hpp"
#include "test_util.hpp"

using namespace msm;
using test::adaptive_simpson;

namespace {

Model single_transition_model(HazardSpec h) {
  StateSpace space(2, {{0, 1}});
  h.trans = {0, 1};
  return Model(space, {h});
}

Eigen::VectorXd theta_for(const Model& m, const std::vector<double>& constrained_or_beta) {
  Eigen::VectorXd c(m.n_params());
  for (int i = 0; i < m.n_params(); ++i) c[i] = constrained_or_beta[i];
  return m.layout().to_unconstrained(c);
}

}  // namespace

TEST_CASE("bspline basis: partition of unity and clamped endpoints") {
  BSplineBasis basis(2, {0.4, 1.1}, 0.0, 2.0);
  CHECK(basis.n_basis() == 5);
  for (double t : {0.0, 0.1, 0.4, 0.77, 1.1, 1.9, 2.0}) {
    Eigen::VectorXd b = basis.eval(t);
    CHECK(b.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(b.minCoeff() >= 0.0);
  }
  CHECK(basis.eval(0.0)[0] == doctest::Approx(1.0));
  CHECK(basis.eval(2.0)[4] == doctest::Approx(1.0));
}

TEST_CASE("bspline basis: integrals match adaptive quadrature") {
  for (int degree : {0, 1, 2, 3}) {
    BSplineBasis basis(degree, {0.5, 1.2}, 0.0, 2.0);
    for (double t : {0.3, 0.5, 0.9, 1.7, 2.0}) {
      Eigen::VectorXd ib = basis.integral(t);
      for (int l = 0; l < basis.n_basis(); ++l) {
        double oracle =
            adaptive_simpson([&](double u) { return basis.eval(u)[l]; }, 0.0, t, 1e-13);
        CHECK(std::abs(ib[l] - oracle) < 1e-9);
      }
    }
  }
}

TEST_CASE("intensity: worked examples per family") {
  SUBCASE("exponential with covariate: rate 2, beta log 0.5, x = 1") {
    HazardSpec h;
    h.family = HazardFamily::Exponential;
    h.covariates = {"x"};
    Model m = single_transition_model(h);
    auto theta = theta_for(m, {2.0, std::log(0.5)});
    for (double t : {0.0, 0.3, 5.0})
      CHECK(m.intensity(0, t, {{"x", 1.0}}, theta) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("weibull with shape 1 reduces to the exponential rate") {
    HazardSpec h;
    h.family = HazardFamily::Weibull;
    Model m = single_transition_model(h);
    auto theta = theta_for(m, {1.5, 1.0});
    CHECK(m.intensity(0, 0.7, {}, theta) == doctest::Approx(1.5).epsilon(1e-12));
  }
  SUBCASE("degree-0 bspline with one coefficient is constant") {
    HazardSpec h;
    h.family = HazardFamily::BSpline;
    h.degree = 0;
    h.boundary_right = 2.0;
    Model m = single_transition_model(h);
    auto theta = theta_for(m, {0.3});
    CHECK(m.intensity(0, 0.8, {}, theta) == doctest::Approx(0.3).epsilon(1e-12));
  }
  SUBCASE("negative sojourn is a domain error") {
    HazardSpec h;
    Model m = single_transition_model(h);
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(1);
    CHECK_THROWS_AS(m.intensity(0, -0.1, {}, theta), std::domain_error);
  }
  SUBCASE("unknown covariate name is a configuration error") {
    HazardSpec h;
    h.covariates = {"dose"};
    Model m = single_transition_model(h);
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(2);
    CHECK_THROWS_WITH_AS(m.intensity(0, 1.0, {{"age", 1.0}}, theta),
                         doctest::Contains("dose"), std::runtime_error);
  }
}

TEST_CASE("cumulative hazard: worked examples") {
  SUBCASE("exponential unit rate over [0,1]") {
    HazardSpec h;
    Model m = single_transition_model(h);
    auto theta = theta_for(m, {1.0});
    CHECK(m.cumulative_hazard(0, 0.0, 1.0, {}, theta) == doctest::Approx(1.0));
    CHECK_THROWS_AS(m.cumulative_hazard(0, 1.0, 0.5, {}, theta), std::domain_error);
  }
  SUBCASE("weibull matches quadrature of the intensity to 1e-8") {
    HazardSpec h;
    h.family = HazardFamily::Weibull;
    Model m = single_transition_model(h);
    auto theta = theta_for(m, {1.5, 1.25});
    double got = m.cumulative_hazard(0, 0.0, 1.0, {}, theta);
    double oracle =
        adaptive_simpson([&](double t) { return m.intensity(0, t, {}, theta); }, 0.0, 1.0);
    CHECK(std::abs(got - oracle) / oracle < 1e-8);
  }
  SUBCASE("degree-1 bspline, knots {0,1,2}, coefficients 0.5, over [0,2]") {
    HazardSpec h;
    h.family = HazardFamily::BSpline;
    h.degree = 1;
    h.interior_knots = {1.0};
    h.boundary_right = 2.0;
    Model m = single_transition_model(h);
    auto theta = theta_for(m, {0.5, 0.5, 0.5});
    CHECK(m.cumulative_hazard(0, 0.0, 2.0, {}, theta) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("cumulative hazard matches quadrature for every family (property)") {
  Model m = test::mixed_family_model();
  Rng rng(2024);
  const int shape_idx = m.layout().index_of(0, "log_shape");
  REQUIRE(shape_idx >= 0);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd theta(m.n_params());
    for (int i = 0; i < theta.size(); ++i) theta[i] = rng.uniform(-1.0, 1.0);
    // shape >= 1 keeps the weibull intensity finite at zero so plain
    // quadrature from 0 is a valid oracle; shape < 1 is covered below
    theta[shape_idx] = rng.uniform(0.0, 1.0);
    Covariates covs{{"x1", rng.uniform(-1, 1)}, {"x2", rng.uniform(-1, 1)}};
    for (int h = 0; h < 3; ++h) {
      double t1 = rng.uniform(0.1, 3.0);  // crosses the spline boundary too
      double got = m.cumulative_hazard(h, 0.0, t1, covs, theta);
      double oracle = adaptive_simpson(
          [&](double t) { return m.intensity(h, t, covs, theta); }, 0.0, t1, 1e-13);
      CHECK(std::abs(got - oracle) / std::max(1.0, oracle) < 1e-7);
      CHECK(m.cumulative_hazard(h, 0.0, t1 + 0.3, covs, theta) >= got - 1e-12);
      CHECK(m.intensity(h, t1, covs, theta) >= 0.0);
    }
  }
}

TEST_CASE("weibull cumulative hazard with shape < 1 matches quadrature away from zero") {
  HazardSpec h;
  h.family = HazardFamily::Weibull;
  Model m = single_transition_model(h);
  Rng rng(41);
  for (int rep = 0; rep < 10; ++rep) {
    auto theta = theta_for(m, {rng.uniform(0.2, 2.0), rng.uniform(0.3, 0.95)});
    double t0 = rng.uniform(0.05, 0.5), t1 = t0 + rng.uniform(0.1, 2.0);
    double got = m.cumulative_hazard(0, t0, t1, {}, theta);
    double oracle =
        adaptive_simpson([&](double t) { return m.intensity(0, t, {}, theta); }, t0, t1, 1e-13);
    CHECK(std::abs(got - oracle) / std::max(1.0, oracle) < 1e-7);
  }
}

TEST_CASE("survival probability") {
  StateSpace space(3, {{0, 1}, {0, 2}});
  HazardSpec h1, h2;
  h1.trans = {0, 1};
  h2.trans = {0, 2};
  Model m(space, {h1, h2});

  SUBCASE("single exit, unit rate") {
    StateSpace sp2(2, {{0, 1}});
    HazardSpec h;
    h.trans = {0, 1};
    Model m2(sp2, {h});
    auto theta = theta_for(m2, {1.0});
    CHECK(m2.survival_prob(0, 1.0, {}, theta) == doctest::Approx(std::exp(-1.0)));
    CHECK(m2.survival_prob(0, 0.0, {}, theta) == doctest::Approx(1.0));
    CHECK(m2.survival_prob(1, 12.0, {}, theta) == doctest::Approx(1.0));  // absorbing
  }
  SUBCASE("two exits: total hazard 2 over 0.5") {
    auto theta = theta_for(m, {1.5, 0.5});
    CHECK(m.survival_prob(0, 0.5, {}, theta) == doctest::Approx(std::exp(-1.0)));
  }
  SUBCASE("nonincreasing in t") {
    auto theta = theta_for(m, {1.5, 0.5});
    double prev = 1.0;
    for (double t = 0.0; t < 3.0; t += 0.1) {
      double s = m.survival_prob(0, t, {}, theta);
      CHECK(s <= prev + 1e-12);
      CHECK(s > 0.0);
      CHECK(s <= 1.0);
      prev = s;
    }
  }
}

TEST_CASE("path loglik: worked examples") {
  SUBCASE("one censored exponential sojourn") {
    HazardSpec h;
    Model m = single_transition_model(h);
    auto theta = theta_for(m, {2.0});
    SamplePath p;
    p.times = {0.0};
    p.states = {0};
    p.censor_time = 0.5;
    CHECK(m.path_loglik(p, {}, theta) == doctest::Approx(-1.0).epsilon(1e-12));
  }
  SUBCASE("one observed transition") {
    HazardSpec h;
    Model m = single_transition_model(h);
    auto theta = theta_for(m, {2.0});
    SamplePath p;
    p.times = {0.0, 0.5};
    p.states = {0, 1};
    p.censor_time = 0.5;
    CHECK(m.path_loglik(p, {}, theta) == doctest::Approx(std::log(2.0) - 1.0).epsilon(1e-12));
  }
  SUBCASE("multi-segment path matches independent per-segment summation") {
    Model m = test::mixed_family_model();
    Rng rng(7);
    Eigen::VectorXd theta(m.n_params());
    for (int i = 0; i < theta.size(); ++i) theta[i] = rng.uniform(-0.5, 0.5);
    Covariates covs{{"x1", 0.7}, {"x2", -0.3}};
    SamplePath p;
    p.times = {0.0, 0.6, 1.4};
    p.states = {0, 1, 2};
    p.censor_time = 1.4;
    double oracle = 0.0;
    oracle += std::log(m.intensity(0, 0.6, covs, theta));
    oracle -= m.cumulative_hazard(0, 0.0, 0.6, covs, theta);
    oracle -= m.cumulative_hazard(1, 0.0, 0.6, covs, theta);
    oracle += std::log(m.intensity(2, 0.8, covs, theta));
    oracle -= m.cumulative_hazard(2, 0.0, 0.8, covs, theta);
    CHECK(m.path_loglik(p, covs, theta) == doctest::Approx(oracle).epsilon(1e-10));
  }
  SUBCASE("disallowed transition is a domain error") {
    Model m = test::mixed_family_model();
    SamplePath p;
    p.times = {0.0, 1.0};
    p.states = {1, 0};
    p.censor_time = 1.0;
    CHECK_THROWS_AS(m.path_loglik(p, {{"x1", 0.0}, {"x2", 0.0}}, Eigen::VectorXd::Zero(9)),
                    std::domain_error);
  }
}

TEST_CASE("path loglik is additive over independent segments") {
  Model m = test::mixed_family_model();
  Rng rng(11);
  Eigen::VectorXd theta(m.n_params());
  for (int i = 0; i < theta.size(); ++i) theta[i] = rng.uniform(-0.5, 0.5);
  Covariates covs{{"x1", 0.2}, {"x2", 0.9}};
  // transition into state 1, then a censored stretch there: the sojourn clock
  // resets at entry, so the two pieces contribute independently
  SamplePath full;
  full.times = {0.0, 0.8};
  full.states = {0, 1};
  full.censor_time = 2.1;
  SamplePath first;
  first.times = {0.0, 0.8};
  first.states = {0, 1};
  first.censor_time = 0.8;
  SamplePath second;
  second.times = {0.0};
  second.states = {1};
  second.censor_time = 1.3;
  CHECK(m.path_loglik(full, covs, theta) ==
        doctest::Approx(m.path_loglik(first, covs, theta) + m.path_loglik(second, covs, theta))
            .epsilon(1e-12));
}

TEST_CASE("gradient and hessian match finite differences (property)") {
  Model m = test::mixed_family_model();
  Rng rng(99);
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::VectorXd theta(m.n_params());
    for (int i = 0; i < theta.size(); ++i) theta[i] = rng.uniform(-1.0, 1.0);
    Covariates covs{{"x1", rng.uniform(-1, 1)}, {"x2", rng.uniform(-1, 1)}};
    SamplePath p;
    if (rep % 2 == 0) {
      p.times = {0.0, rng.uniform(0.2, 1.0)};
      p.states = {0, 1};
      p.censor_time = p.times[1] + rng.uniform(0.1, 1.5);
    } else {
      p.times = {0.0, rng.uniform(0.2, 1.0)};
      p.states = {0, 2};
      p.censor_time = p.times[1];
    }
    auto covx = m.resolve_covariates(covs);
    auto cp = m.compile_path(p, covx);

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(m.n_params());
    double ll = m.path_loglik_grad(cp, theta, 1.0, grad);
    CHECK(ll == doctest::Approx(m.path_loglik(cp, theta)).epsilon(1e-14));

    auto f = [&](const Eigen::VectorXd& u) { return m.path_loglik(cp, u); };
    Eigen::VectorXd fd(m.n_params());
    for (int i = 0; i < m.n_params(); ++i) {
      Eigen::VectorXd up = theta, dn = theta;
      up[i] += 1e-6;
      dn[i] -= 1e-6;
      fd[i] = (f(up) - f(dn)) / 2e-6;
    }
    for (int i = 0; i < m.n_params(); ++i)
      CHECK(std::abs(grad[i] - fd[i]) / std::max(1.0, std::abs(fd[i])) < 1e-5);

    Eigen::VectorXd g2;
    Eigen::MatrixXd hess;
    m.path_loglik_deriv2(cp, theta, g2, hess);
    CHECK((g2 - grad).lpNorm<Eigen::Infinity>() < 1e-10);
    for (int i = 0; i < m.n_params(); ++i) {
      Eigen::VectorXd up = theta, dn = theta;
      up[i] += 1e-5;
      dn[i] -= 1e-5;
      Eigen::VectorXd gp = Eigen::VectorXd::Zero(m.n_params());
      Eigen::VectorXd gn = Eigen::VectorXd::Zero(m.n_params());
      m.path_loglik_grad(cp, up, 1.0, gp);
      m.path_loglik_grad(cp, dn, 1.0, gn);
      Eigen::VectorXd hcol = (gp - gn) / 2e-5;
      for (int j = 0; j < m.n_params(); ++j)
        CHECK(std::abs(hess(j, i) - hcol[j]) / std::max(1.0, std::abs(hcol[j])) < 2e-5);
    }
  }
}

TEST_CASE("parameter transforms round-trip to 1e-12") {
  Model m = test::mixed_family_model();
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd u(m.n_params());
    for (int i = 0; i < u.size(); ++i) u[i] = rng.uniform(-3.0, 3.0);
    Eigen::VectorXd back = m.layout().to_unconstrained(m.layout().to_constrained(u));
    for (int i = 0; i < u.size(); ++i)
      CHECK(std::abs(back[i] - u[i]) <= 1e-12 * std::max(1.0, std::abs(u[i])));
  }
  CHECK_THROWS_AS(m.layout().to_unconstrained(Eigen::VectorXd::Zero(m.n_params())),
                  std::domain_error);  // positive parameter at zero
}

TEST_CASE("spline extrapolation is flat beyond the right boundary") {
  HazardSpec h;
  h.family = HazardFamily::BSpline;
  h.degree = 2;
  h.interior_knots = {0.5};
  h.boundary_right = 1.0;
  Model m = single_transition_model(h);
  Rng rng(3);
  Eigen::VectorXd theta(m.n_params());
  for (int i = 0; i < theta.size(); ++i) theta[i] = rng.uniform(-1.0, 1.0);
  double edge = m.intensity(0, 1.0, {}, theta);
  CHECK(m.intensity(0, 1.7, {}, theta) == doctest::Approx(edge).epsilon(1e-12));
  CHECK(m.cumulative_hazard(0, 1.0, 1.8, {}, theta) == doctest::Approx(0.8 * edge).epsilon(1e-10));
}

// --- data validation --------------------------------------------------------

namespace {

StateSpace regen5_space() {
  return StateSpace(5, {{0, 1}, {1, 2}, {1, 3}, {3, 4}},
                    {"naive", "pcr_pos", "pcr_neg", "sympt_pcr_pos", "sympt_pcr_neg"});
}

SubjectData participant(const std::string& id, std::vector<DataRecord> recs) {
  SubjectData s;
  s.id = id;
  s.records = std::move(recs);
  return s;
}

}  // namespace

TEST_CASE("validate_subject: coherent weekly-PCR record sets pass") {
  auto space = regen5_space();
  const double eps = 1.0 / 24.0;
  const StateSet s1 = set_of(0), s2 = set_of(1), s3 = set_of(2), s13 = set_of(0) | set_of(2);
  auto p001 = participant("001", {{0, 7, s1, s2, 0},
                                  {7, 14, s2, s2, 0},
                                  {14, 21, s2, s3, 0},
                                  {21, 28, s3, s3, 0}});
  CHECK(validate_subject(p001, space).empty());

  const StateSet s4 = set_of(3), s5 = set_of(4);
  auto p002 = participant("002", {{0, 7, s1, s1, 0},
                                  {7, 9 - eps, s1, s2, 0},
                                  {9 - eps, 9, s2, s4, 1},
                                  {9, 14, s4, s5, 0},
                                  {14, 21, s5, s5, 0},
                                  {21, 28, s5, s5, 0}});
  CHECK(validate_subject(p002, space).empty());

  auto p003 = participant("003", {{0, 7, s1, s13, 0},
                                  {7, 14, s13, s13, 0},
                                  {14, 21, s13, s13, 0},
                                  {21, 28, s13, s3, 0}});
  CHECK(validate_subject(p003, space).empty());
}

TEST_CASE("validate_subject: structural findings") {
  auto space = regen5_space();
  const StateSet s1 = set_of(0), s2 = set_of(1), s3 = set_of(2);

  SUBCASE("overlap") {
    auto s = participant("x", {{0, 7, s1, s2, 0}, {5, 14, s2, s2, 0}});
    auto f = validate_subject(s, space);
    REQUIRE(!f.empty());
    CHECK(f[0].code == "overlap");
  }
  SUBCASE("gap") {
    auto s = participant("x", {{0, 7, s1, s2, 0}, {8, 14, s2, s2, 0}});
    auto f = validate_subject(s, space);
    REQUIRE(!f.empty());
    CHECK(f[0].code == "gap");
  }
  SUBCASE("unreachable candidate under the progressive graph") {
    auto s = participant("x", {{0, 7, s1, s3, 0}, {7, 14, s3, s1, 0}});
    auto f = validate_subject(s, space);
    REQUIRE(!f.empty());
    CHECK(f[0].code == "unreachable");
  }
  SUBCASE("exactly observed segments need singleton sets") {
    auto s = participant("x", {{0, 7, s1, s1 | s2, 1}});
    auto f = validate_subject(s, space);
    REQUIRE(!f.empty());
    CHECK(f[0].code == "o1-nonsingleton");
  }
  SUBCASE("ambiguous initial state") {
    auto s = participant("x", {{0, 7, s1 | s2, s2, 0}});
    auto f = validate_subject(s, space);
    REQUIRE(!f.empty());
    CHECK(f[0].code == "ambiguous-initial");
  }
  SUBCASE("candidate mismatch between adjacent records") {
    auto s = participant("x", {{0, 7, s1, s2, 0}, {7, 14, s1, s2, 0}});
    auto f = validate_subject(s, space);
    REQUIRE(!f.empty());
    CHECK(f[0].code == "candidate-mismatch");
  }
}

TEST_CASE("state space rejects cycles and self-transitions") {
  CHECK_THROWS(StateSpace(2, {{0, 0}}));
  CHECK_THROWS(StateSpace(2, {{0, 1}, {1, 0}}));
  CHECK_THROWS(StateSpace(3, {{0, 1}, {1, 2}, {2, 0}}));
  StateSpace ok(3, {{0, 1}, {1, 2}, {0, 2}});
  CHECK(ok.is_absorbing(2));
  CHECK(!ok.is_absorbing(0));
  CHECK(ok.reachable_from(1) == (set_of(1) | set_of(2)));
}
