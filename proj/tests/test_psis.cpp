#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "msm/psis.hpp"
#include "msm/rng.hpp"

using namespace msm;

namespace {

Eigen::VectorXd lognormal_logw(int m, std::uint64_t seed) {
  Rng r(seed);
  Eigen::VectorXd lw(m);
  for (int i = 0; i < m; ++i) lw[i] = r.normal();
  return lw;
}

}  // namespace

TEST_CASE("pareto_smooth: all-equal weights pass through with khat unavailable") {
  Eigen::VectorXd lw = Eigen::VectorXd::Constant(200, -3.7);
  auto res = pareto_smooth(lw);
  CHECK(!res.smoothed);
  CHECK(!std::isfinite(res.khat));
  CHECK((res.log_weights - lw).norm() == 0.0);
}

TEST_CASE("pareto_smooth: below the size floor weights are returned unchanged") {
  auto lw = lognormal_logw(24, 9);
  auto res = pareto_smooth(lw, 25);
  CHECK(!res.smoothed);
  CHECK(!std::isfinite(res.khat));
  CHECK((res.log_weights - lw).norm() == 0.0);
}

TEST_CASE("pareto_smooth: khat matches an independent reference implementation") {
  // reference values computed with a separate implementation of the
  // Zhang-Stephens profile fit on the identical inputs
  struct Case {
    std::uint64_t seed;
    int kind;
    double ref_khat;
  };
  const Case cases[] = {{101, 0, 0.173728864}, {202, 1, 0.727436659}, {303, 2, 0.321105949}};
  for (const auto& c : cases) {
    Rng r(c.seed);
    Eigen::VectorXd lw(400);
    for (int i = 0; i < 400; ++i) {
      if (c.kind == 0) lw[i] = r.normal();
      if (c.kind == 1) lw[i] = 0.7 * r.exponential(1.0);
      if (c.kind == 2) lw[i] = std::abs(1.3 * r.normal());
    }
    auto res = pareto_smooth(lw);
    CHECK(res.smoothed);
    CHECK(std::abs(res.khat - c.ref_khat) < 0.15);
    // identical tail handling should make the agreement essentially exact
    CHECK(res.khat == doctest::Approx(c.ref_khat).epsilon(1e-6));
  }
}

TEST_CASE("pareto_smooth: smoothing never raises the max and keeps the ordering") {
  Rng r(7);
  for (int rep = 0; rep < 20; ++rep) {
    int m = 50 + static_cast<int>(r.uniform() * 400);
    Eigen::VectorXd lw(m);
    for (int i = 0; i < m; ++i) lw[i] = 2.0 * r.normal() + r.exponential(0.7);
    auto res = pareto_smooth(lw);
    CHECK(res.log_weights.maxCoeff() <= lw.maxCoeff() + 1e-12);
    // order preservation
    std::vector<int> before(m), after(m);
    for (int i = 0; i < m; ++i) before[i] = after[i] = i;
    std::sort(before.begin(), before.end(), [&](int a, int b) { return lw[a] < lw[b]; });
    std::sort(after.begin(), after.end(),
              [&](int a, int b) { return res.log_weights[a] < res.log_weights[b]; });
    // allow ties to permute within equal values
    for (int i = 0; i < m; ++i)
      CHECK(res.log_weights[before[i]] == doctest::Approx(res.log_weights[after[i]]));
    // untouched bulk
    int changed = 0;
    for (int i = 0; i < m; ++i)
      if (res.log_weights[i] != lw[i]) ++changed;
    CHECK(changed <= static_cast<int>(std::ceil(std::min(0.2 * m, 3.0 * std::sqrt(double(m))))));
  }
}

TEST_CASE("pareto_smooth: known heavy tail is flagged above 0.7") {
  Rng r(404);
  Eigen::VectorXd lw(500);
  for (int i = 0; i < 500; ++i) lw[i] = 1.1 * r.exponential(1.0);  // tail index ~ 1.1
  auto res = pareto_smooth(lw);
  CHECK(res.smoothed);
  CHECK(res.khat > 0.7);
}

TEST_CASE("normal quantile") {
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963985).epsilon(1e-7));
  CHECK(normal_quantile(0.8) == doctest::Approx(0.8416212336).epsilon(1e-7));
  CHECK(normal_quantile(0.05) == doctest::Approx(-1.644853627).epsilon(1e-7));
  CHECK_THROWS(normal_quantile(0.0));
}
