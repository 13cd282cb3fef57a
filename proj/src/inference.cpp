#include "msm/inference.hpp"

#include <algorithm>
#include <cmath>

#include "msm/threads.hpp"

namespace msm {

Eigen::MatrixXd observed_fisher(const Model& model, const Pool& pool,
                                const std::vector<CompiledSubject>& subjects,
                                const Eigen::VectorXd& theta_u, int threads) {
  const int P = model.n_params();
  const int n = static_cast<int>(pool.subjects.size());
  std::vector<Eigen::MatrixXd> info(n);
  parallel_for(n, threads, [&](int i) {
    const auto& sp = pool.subjects[i];
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(P, P);
    Eigen::VectorXd mean_score = Eigen::VectorXd::Zero(P);
    Eigen::VectorXd g(P);
    Eigen::MatrixXd h(P, P);
    for (const auto& pe : sp.paths) {
      if (pe.nubar <= 0) continue;
      model.path_loglik_deriv2(pe.compiled, theta_u, g, h);
      if (!g.allFinite() || !h.allFinite())
        throw std::runtime_error("observed_fisher: non-finite derivative for subject '" +
                                 subjects[i].data.id + "'");
      acc.noalias() -= pe.nubar * h;
      acc.noalias() -= pe.nubar * (g * g.transpose());
      mean_score.noalias() += pe.nubar * g;
    }
    acc.noalias() += mean_score * mean_score.transpose();
    info[i] = subjects[i].weight * acc;
  });
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(P, P);
  for (const auto& m : info) total += m;
  return total;
}

MarginalLoglik marginal_loglik(const Pool& pool, const std::vector<CompiledSubject>& subjects) {
  MarginalLoglik out;
  double var = 0.0;
  for (const auto& sp : pool.subjects) {
    const double w = subjects[sp.subject].weight;
    const int M = static_cast<int>(sp.paths.size());
    double lmax = -std::numeric_limits<double>::infinity();
    for (const auto& pe : sp.paths) lmax = std::max(lmax, pe.log_nu);
    if (!std::isfinite(lmax)) {
      out.value = -std::numeric_limits<double>::infinity();
      return out;
    }
    double s = 0.0;
    for (const auto& pe : sp.paths) s += std::exp(pe.log_nu - lmax);
    const double logsum = lmax + std::log(s);
    out.value += w * (sp.log_r + logsum - std::log(static_cast<double>(M)));
    if (M > 1) {
      // Var(log mean) ~ Var(mean)/mean^2 = sum (nu_m/nubar - 1)^2 / (M (M-1))
      double ss = 0.0;
      for (const auto& pe : sp.paths) {
        double ratio = static_cast<double>(M) * std::exp(pe.log_nu - logsum);
        ss += (ratio - 1.0) * (ratio - 1.0);
      }
      var += w * w * ss / (static_cast<double>(M) * (M - 1));
    }
  }
  out.se = std::sqrt(var);
  return out;
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}
std::uint64_t fnv1a_str(std::uint64_t h, const std::string& s) {
  return fnv1a(h, s.data(), s.size());
}
std::uint64_t fnv1a_double(std::uint64_t h, double v) { return fnv1a(h, &v, sizeof(v)); }

constexpr std::uint64_t kFnvBasis = 14695981039346656037ull;

}  // namespace

std::uint64_t fingerprint_subjects(const std::vector<SubjectData>& subjects) {
  std::uint64_t h = kFnvBasis;
  for (const auto& s : subjects) {
    h = fnv1a_str(h, s.id);
    for (const auto& [k, v] : s.covariates) {
      h = fnv1a_str(h, k);
      h = fnv1a_double(h, v);
    }
    for (const auto& r : s.records) {
      h = fnv1a_double(h, r.tstart);
      h = fnv1a_double(h, r.tstop);
      h = fnv1a(h, &r.from, sizeof(r.from));
      h = fnv1a(h, &r.to, sizeof(r.to));
      h = fnv1a(h, &r.obstype, sizeof(r.obstype));
    }
  }
  return h;
}

std::uint64_t fingerprint_surrogate(const MarkovSurrogate& surrogate) {
  std::uint64_t h = kFnvBasis;
  for (const auto& t : surrogate.model().space().transitions()) {
    h = fnv1a(h, &t.from, sizeof(t.from));
    h = fnv1a(h, &t.to, sizeof(t.to));
  }
  for (int i = 0; i < surrogate.theta_u().size(); ++i)
    h = fnv1a_double(h, surrogate.theta_u()[i]);
  return h;
}

namespace {

Model surrogate_structure(const Model& model) {
  std::vector<HazardSpec> hz;
  for (const auto& h : model.hazards()) {
    HazardSpec e;
    e.trans = h.trans;
    e.family = HazardFamily::Exponential;
    e.covariates = h.covariates;
    e.share_params_with = h.share_params_with;
    hz.push_back(std::move(e));
  }
  return Model(model.space(), hz);
}

struct CovarianceOut {
  Eigen::MatrixXd cov;
  bool warning = false;
};

CovarianceOut invert_information(const Eigen::MatrixXd& info) {
  CovarianceOut out;
  Eigen::MatrixXd sym = 0.5 * (info + info.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  out.warning = es.eigenvalues().minCoeff() < 1e-10;
  Eigen::VectorXd inv = es.eigenvalues();
  for (int i = 0; i < inv.size(); ++i) inv[i] = inv[i] > 1e-10 ? 1.0 / inv[i] : 0.0;
  out.cov = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  return out;
}

}  // namespace

FitResult fit_model(const Model& model, const std::vector<SubjectData>& subjects,
                    const MCEMConfig& config) {
  return fit_model(model, subjects, config, nullptr, nullptr, nullptr);
}

FitResult fit_model(const Model& model, const std::vector<SubjectData>& subjects,
                    const MCEMConfig& config, const MarkovSurrogate* surrogate_in,
                    const Eigen::VectorXd* warm_start,
                    const std::vector<double>* subject_weights) {
  auto findings = validate_subjects(subjects, model.space());
  if (!findings.empty()) throw ValidationError(std::move(findings));

  FitResult fit;
  fit.model = model;
  fit.n_subjects = static_cast<int>(subjects.size());
  fit.n_params = model.n_params();
  fit.data_fingerprint = fingerprint_subjects(subjects);

  auto compiled = compile_subjects(model, subjects);
  if (subject_weights) {
    if (subject_weights->size() != subjects.size())
      throw std::invalid_argument("fit_model: one weight per subject required");
    for (size_t i = 0; i < compiled.size(); ++i) compiled[i].weight = (*subject_weights)[i];
  }

  bool all_exponential = true;
  for (const auto& h : model.hazards())
    if (h.family != HazardFamily::Exponential) all_exponential = false;

  // surrogate: exponential structure mirroring the model's graph and formulas
  MarkovSurrogate surrogate;
  if (surrogate_in) {
    surrogate = *surrogate_in;
  } else {
    Model smodel = surrogate_structure(model);
    auto scompiled = compile_subjects(smodel, subjects);
    if (subject_weights)
      for (size_t i = 0; i < scompiled.size(); ++i) scompiled[i].weight = (*subject_weights)[i];
    MarkovFit mfit = fit_markov_mle(smodel, scompiled);
    if (!mfit.converged && !mfit.boundary)
      throw std::runtime_error("surrogate fit did not converge: " + mfit.report.message);
    surrogate = mfit.surrogate;
    if (all_exponential && !config.force_mcem) {
      fit.method = "direct";
      fit.theta_u = surrogate.theta_u();
      fit.converged = mfit.converged;
      fit.message = mfit.boundary ? "boundary: " + mfit.report.message : mfit.report.message;
      fit.loglik.value = mfit.loglik;
      fit.loglik.se = 0.0;
      auto neg_ll = [&](const Eigen::VectorXd& u) {
        MarkovSurrogate s(surrogate.model(), u);
        return -markov_marginal_loglik(s, compiled);
      };
      auto covout = invert_information(fd_hessian(neg_ll, fit.theta_u));
      fit.covariance = covout.cov;
      fit.cov_warning = covout.warning;
      fit.aic = -2.0 * fit.loglik.value + 2.0 * fit.n_params;
      fit.aic_se = 0.0;
      fit.bic = -2.0 * fit.loglik.value + fit.n_params * std::log(double(fit.n_subjects));
      fit.surrogate = surrogate;
      fit.surrogate_fingerprint = fingerprint_surrogate(surrogate);
      return fit;
    }
  }
  fit.surrogate = surrogate;
  fit.surrogate_fingerprint = fingerprint_surrogate(surrogate);

  McemEngine engine(model, compiled, surrogate, config);
  Eigen::VectorXd theta0 =
      warm_start ? *warm_start : McemEngine::init_from_surrogate(model, surrogate);
  McemResult mres = engine.run(theta0);

  fit.method = "mcem";
  fit.theta_u = mres.theta_u;
  fit.converged = mres.converged;
  fit.message = mres.message;
  fit.trace = std::move(mres.trace);
  fit.loglik = marginal_loglik(mres.pool, compiled);
  fit.aic = -2.0 * fit.loglik.value + 2.0 * fit.n_params;
  fit.aic_se = 2.0 * fit.loglik.se;
  fit.bic = -2.0 * fit.loglik.value + fit.n_params * std::log(double(fit.n_subjects));

  auto covout = invert_information(
      observed_fisher(model, mres.pool, compiled, fit.theta_u, config.threads));
  fit.covariance = covout.cov;
  fit.cov_warning = covout.warning;

  const int n = static_cast<int>(mres.pool.subjects.size());
  fit.subject_ess.resize(n);
  fit.subject_khat.resize(n);
  for (int i = 0; i < n; ++i) {
    fit.subject_ess[i] = mres.pool.subjects[i].ess;
    fit.subject_khat[i] = mres.pool.subjects[i].khat;
  }
  return fit;
}

AicComparison compare_fits(const std::vector<const FitResult*>& fits,
                           const std::vector<std::string>& labels) {
  if (fits.size() < 2) throw std::invalid_argument("compare: need at least two fits");
  AicComparison out;
  for (size_t i = 1; i < fits.size(); ++i) {
    if (fits[i]->data_fingerprint != fits[0]->data_fingerprint)
      throw std::runtime_error("compare: fits were produced from different datasets");
    if (fits[i]->surrogate_fingerprint != fits[0]->surrogate_fingerprint &&
        fits[i]->method == "mcem" && fits[0]->method == "mcem")
      throw std::runtime_error(
          "compare: marginal likelihoods are comparable only under a shared surrogate");
  }
  for (size_t i = 0; i < fits.size(); ++i) {
    AicComparison::Row row;
    row.label = labels[i];
    row.loglik = fits[i]->loglik.value;
    row.loglik_se = fits[i]->loglik.se;
    row.p = fits[i]->n_params;
    row.aic = fits[i]->aic;
    row.aic_se = fits[i]->aic_se;
    row.delta_aic = fits[i]->aic - fits[0]->aic;
    row.delta_se = std::sqrt(fits[i]->aic_se * fits[i]->aic_se + fits[0]->aic_se * fits[0]->aic_se);
    row.distinguishable = i == 0 ? true : std::abs(row.delta_aic) > 2.0 * row.delta_se;
    out.rows.push_back(row);
  }
  return out;
}

BootstrapResult bayesian_bootstrap(const FitResult& fit, const std::vector<SubjectData>& subjects,
                                   const MCEMConfig& config, int replicates,
                                   const std::string& strata_covariate, std::uint64_t seed,
                                   int threads) {
  if (replicates < 1) throw std::invalid_argument("bootstrap: replicates must be >= 1");
  const int n = static_cast<int>(subjects.size());
  const int P = fit.model.n_params();

  std::vector<std::vector<int>> strata;
  if (strata_covariate.empty()) {
    strata.emplace_back(n);
    for (int i = 0; i < n; ++i) strata[0][i] = i;
  } else {
    std::map<double, std::vector<int>> by_value;
    for (int i = 0; i < n; ++i) {
      auto it = subjects[i].covariates.find(strata_covariate);
      if (it == subjects[i].covariates.end())
        throw std::runtime_error("bootstrap: stratification covariate '" + strata_covariate +
                                 "' missing for subject " + subjects[i].id);
      by_value[it->second].push_back(i);
    }
    for (auto& [v, idx] : by_value) strata.push_back(std::move(idx));
  }

  BootstrapResult out;
  out.draws.resize(replicates, P);
  out.names = fit.model.layout().names();
  std::vector<char> ok(replicates, 0);

  MCEMConfig rep_config = config;
  rep_config.threads = 1;
  parallel_for(replicates, threads, [&](int b) {
    Rng rng(derive_seed(seed, 0x626f6f74ull, static_cast<std::uint64_t>(b)));
    std::vector<double> w(n, 0.0);
    for (const auto& idx : strata) {
      double tot = 0.0;
      std::vector<double> g(idx.size());
      for (size_t j = 0; j < idx.size(); ++j) {
        g[j] = rng.gamma(1.0);
        tot += g[j];
      }
      for (size_t j = 0; j < idx.size(); ++j)
        w[idx[j]] = static_cast<double>(idx.size()) * g[j] / tot;
    }
    MCEMConfig c = rep_config;
    c.seed = derive_seed(seed, 0x72657067ull, static_cast<std::uint64_t>(b));
    try {
      FitResult rfit = fit_model(fit.model, subjects, c, &fit.surrogate, &fit.theta_u, &w);
      if (rfit.method == "direct" || rfit.converged) {
        out.draws.row(b) = fit.model.layout().to_constrained(rfit.theta_u).transpose();
        ok[b] = 1;
      }
    } catch (const std::exception&) {
      // recorded below as a failed replicate
    }
  });

  Eigen::MatrixXd kept(replicates, P);
  int nkept = 0;
  for (int b = 0; b < replicates; ++b) {
    if (ok[b]) {
      kept.row(nkept++) = out.draws.row(b);
    } else {
      out.failed_replicates.push_back(b);
    }
  }
  out.n_failed = replicates - nkept;
  out.draws = kept.topRows(nkept);
  if (out.n_failed * 10 > replicates)
    throw std::runtime_error("bootstrap: more than 10% of replicates failed to converge (" +
                             std::to_string(out.n_failed) + "/" + std::to_string(replicates) + ")");
  return out;
}

std::map<std::string, FunctionalCI> mc_functional_ci(
    const Model& model, const Eigen::VectorXd& theta_u, const Eigen::MatrixXd& covariance,
    bool cov_warning, const std::vector<Arm>& arms, const std::vector<FunctionalDef>& defs,
    const std::vector<DerivedDef>& derived, double horizon, int n_param_draws, int n_paths,
    double level, std::uint64_t seed, int threads) {
  const bool degenerate = covariance.norm() == 0.0;
  if (cov_warning && !degenerate)
    throw std::runtime_error(
        "mc_functional_ci: covariance is not positive definite; refusing to draw parameters");
  const int P = model.n_params();
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(P, P);
  if (!degenerate) {
    Eigen::LLT<Eigen::MatrixXd> llt(covariance +
                                    1e-12 * Eigen::MatrixXd::Identity(P, P));
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("mc_functional_ci: covariance Cholesky factorization failed");
    L = llt.matrixL();
  }

  // plug-in estimates at theta_hat with a larger cohort
  auto table0 = estimate_functionals(model, theta_u, arms, defs, horizon, 4 * n_paths,
                                     derive_seed(seed, 0xe57ull), threads);
  auto derived0 = eval_derived(derived, table0);

  std::vector<std::string> keys;
  for (const auto& d : defs)
    for (const auto& arm : arms) keys.push_back(d.name + "|" + arm.name);
  for (const auto& d : derived) keys.push_back(d.name);

  Eigen::MatrixXd samples(n_param_draws, static_cast<Eigen::Index>(keys.size()));
  samples.setConstant(std::numeric_limits<double>::quiet_NaN());
  parallel_for(n_param_draws, threads, [&](int r) {
    Rng rng(derive_seed(seed, 0xd7a3ull, static_cast<std::uint64_t>(r)));
    Eigen::VectorXd z(P);
    for (int i = 0; i < P; ++i) z[i] = rng.normal();
    Eigen::VectorXd th = theta_u + L * z;
    auto table = estimate_functionals(model, th, arms, defs, horizon, n_paths,
                                      derive_seed(seed, 0x51ull, static_cast<std::uint64_t>(r)), 1);
    auto der = eval_derived(derived, table);
    int c = 0;
    for (const auto& d : defs)
      for (const auto& arm : arms) {
        const auto& v = table[d.name][arm.name];
        samples(r, c++) = v.defined ? v.value : std::numeric_limits<double>::quiet_NaN();
      }
    for (const auto& d : derived) {
      const auto& v = der[d.name];
      samples(r, c++) = v.defined ? v.value : std::numeric_limits<double>::quiet_NaN();
    }
  });

  std::map<std::string, FunctionalCI> out;
  const double tail = 0.5 * (1.0 - level);
  for (size_t c = 0; c < keys.size(); ++c) {
    FunctionalCI ci;
    std::vector<double> vals;
    for (int r = 0; r < n_param_draws; ++r)
      if (std::isfinite(samples(r, static_cast<Eigen::Index>(c)))) vals.push_back(samples(r, c));
    // plug-in point estimate
    {
      size_t idx = c;
      size_t n_base = defs.size() * arms.size();
      if (idx < n_base) {
        const auto& d = defs[idx / arms.size()];
        const auto& arm = arms[idx % arms.size()];
        const auto& v = table0[d.name][arm.name];
        ci.defined = v.defined;
        ci.estimate = v.value;
      } else {
        const auto& d = derived[idx - n_base];
        const auto& v = derived0[d.name];
        ci.defined = v.defined;
        ci.estimate = v.value;
      }
    }
    if (!vals.empty()) {
      std::sort(vals.begin(), vals.end());
      auto q = [&](double p) {
        double pos = p * (vals.size() - 1);
        size_t lo = static_cast<size_t>(pos);
        size_t hi = std::min(lo + 1, vals.size() - 1);
        double fr = pos - lo;
        return vals[lo] * (1 - fr) + vals[hi] * fr;
      };
      ci.lo = q(tail);
      ci.hi = q(1.0 - tail);
    } else {
      ci.lo = ci.hi = ci.estimate;
    }
    if (degenerate) ci.lo = ci.hi = ci.estimate;
    out[keys[c]] = ci;
  }
  return out;
}

}  // namespace msm
