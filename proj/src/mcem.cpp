#include "msm/mcem.hpp"

#include <algorithm>
#include <cmath>

#include "msm/psis.hpp"
#include "msm/threads.hpp"

namespace msm {

void MCEMConfig::validate() const {
  if (!(ess_factor > 1.0)) throw std::invalid_argument("mcem: ess_factor must be > 1");
  if (!(ascent_alpha > 0 && ascent_alpha < 1))
    throw std::invalid_argument("mcem: ascent alpha must be in (0,1)");
  if (!(stop_gamma > 0 && stop_gamma < 1))
    throw std::invalid_argument("mcem: stopping gamma must be in (0,1)");
  if (!(stop_tol > 0)) throw std::invalid_argument("mcem: stopping tolerance must be > 0");
  if (!(ess_target >= 1)) throw std::invalid_argument("mcem: ess target must be >= 1");
}

bool ascent_decision(double dq, double ase, double alpha) {
  return dq - normal_quantile(1.0 - alpha) * ase > 0.0;
}

bool stopping_decision(double dq, double ase, double gamma, double tol_total) {
  return dq + normal_quantile(1.0 - gamma) * ase < tol_total;
}

McemEngine::McemEngine(const Model& model, const std::vector<CompiledSubject>& subjects,
                       const MarkovSurrogate& surrogate, MCEMConfig config)
    : model_(model), subjects_(&subjects), surrogate_(&surrogate), config_(std::move(config)) {
  config_.validate();
  contexts_.resize(subjects.size());
  pool_.subjects.resize(subjects.size());
  parallel_for(static_cast<int>(subjects.size()), config_.threads, [&](int i) {
    contexts_[i] = std::make_unique<ProposalContext>(surrogate, subjects[i]);
    auto& sp = pool_.subjects[i];
    sp.subject = i;
    sp.target_ess = config_.ess_target;
    sp.log_r = contexts_[i]->log_marginal();
  });
}

void McemEngine::add_paths(int i, int count) {
  auto& sp = pool_.subjects[i];
  Rng rng(derive_seed(config_.seed, 0x70617468ull, static_cast<std::uint64_t>(i),
                      static_cast<std::uint64_t>(sp.draw_rounds)));
  ++sp.draw_rounds;
  const auto& subj = (*subjects_)[i];
  for (int m = 0; m < count; ++m) {
    auto prop = contexts_[i]->propose_path(rng);
    PathEntry pe;
    pe.log_h = prop.log_surrogate;
    pe.compiled = model_.compile_path(prop.path, subj.covx);
    pe.path = std::move(prop.path);
    sp.paths.push_back(std::move(pe));
  }
}

void McemEngine::reweight_subject(int i, const Eigen::VectorXd& theta_u) {
  auto& sp = pool_.subjects[i];
  const int M = static_cast<int>(sp.paths.size());
  Eigen::VectorXd lognu(M);
  bool any_finite = false;
  for (int m = 0; m < M; ++m) {
    auto& pe = sp.paths[m];
    pe.log_f = model_.path_loglik(pe.compiled, theta_u);
    pe.log_nu = pe.log_f - pe.log_h;
    lognu[m] = pe.log_nu;
    if (std::isfinite(pe.log_nu)) any_finite = true;
  }
  if (!any_finite)
    throw ProposalDegeneracyError(
        (*subjects_)[i].data.id, sp.khat,
        "all importance weights for subject '" + (*subjects_)[i].data.id + "' are zero");
  PsisResult ps = pareto_smooth(lognu, config_.min_paths_smoothing);
  sp.khat = ps.khat;
  const double lmax = ps.log_weights.maxCoeff();
  double tot = 0.0;
  for (int m = 0; m < M; ++m) tot += std::exp(ps.log_weights[m] - lmax);
  double inv_sumsq = 0.0;
  for (int m = 0; m < M; ++m) {
    double nb = std::exp(ps.log_weights[m] - lmax) / tot;
    sp.paths[m].nubar = nb;
    inv_sumsq += nb * nb;
  }
  sp.ess = 1.0 / inv_sumsq;
}

void McemEngine::ensure_target_ess(int i, const Eigen::VectorXd& theta_u) {
  auto& sp = pool_.subjects[i];
  const long cap =
      static_cast<long>(std::ceil(config_.ess_cap_factor * std::max(sp.target_ess, 1.0)));
  if (sp.paths.empty()) add_paths(i, static_cast<int>(std::ceil(sp.target_ess)));
  reweight_subject(i, theta_u);
  while (sp.ess < sp.target_ess) {
    const long M = static_cast<long>(sp.paths.size());
    if (M >= cap)
      throw ProposalDegeneracyError(
          (*subjects_)[i].data.id, sp.khat,
          "subject '" + (*subjects_)[i].data.id + "' cannot reach the target ESS (" +
              std::to_string(sp.target_ess) + ") within " + std::to_string(cap) +
              " proposal paths; Pareto khat = " + std::to_string(sp.khat));
    double deficit = sp.target_ess / std::max(sp.ess, 1.0);
    long want = std::min<long>(cap - M, std::max<long>(8, std::lround(M * (deficit - 1.0) + 1)));
    add_paths(i, static_cast<int>(want));
    reweight_subject(i, theta_u);
  }
}

void McemEngine::importance_weights(const Eigen::VectorXd& theta_u) {
  parallel_for(static_cast<int>(pool_.subjects.size()), config_.threads,
               [&](int i) { ensure_target_ess(i, theta_u); });
}

double McemEngine::q_estimate(const Eigen::VectorXd& theta_u) const {
  double q = 0.0;
  for (const auto& sp : pool_.subjects) {
    double qi = 0.0;
    for (const auto& pe : sp.paths)
      if (pe.nubar > 0) qi += pe.nubar * model_.path_loglik(pe.compiled, theta_u);
    q += (*subjects_)[sp.subject].weight * qi;
  }
  return q;
}

McemEngine::MStep McemEngine::maximize_q(const Eigen::VectorXd& theta_start) {
  const int P = model_.n_params();
  const int n = static_cast<int>(pool_.subjects.size());
  const int nthreads = resolve_threads(config_.threads);
  // negative Q and its gradient, deterministic reduction over subjects
  auto fn = [&](const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
    std::vector<double> qi(n, 0.0);
    std::vector<Eigen::VectorXd> gi;
    if (grad) gi.assign(n, Eigen::VectorXd());
    parallel_for(n, nthreads, [&](int i) {
      const auto& sp = pool_.subjects[i];
      double q = 0.0;
      Eigen::VectorXd g = Eigen::VectorXd::Zero(P);
      for (const auto& pe : sp.paths) {
        if (pe.nubar <= 0) continue;
        if (grad)
          q += pe.nubar * model_.path_loglik_grad(pe.compiled, u, pe.nubar, g);
        else
          q += pe.nubar * model_.path_loglik(pe.compiled, u);
      }
      qi[i] = q;
      if (grad) gi[i] = std::move(g);
    });
    double q = 0.0;
    if (grad) grad->setZero(P);
    for (int i = 0; i < n; ++i) {
      const double w = (*subjects_)[i].weight;
      q += w * qi[i];
      if (grad) *grad += w * gi[i];
    }
    if (grad) *grad = -*grad;
    return -q;
  };
  MStep out;
  out.report = minimize_bfgs(fn, theta_start, config_.mstep);
  out.theta = out.report.x;

  // change in Q on this pool, and its asymptotic standard error from the
  // ESS-adjusted weighted variance of per-path log-likelihood differences
  double dq = 0.0, var = 0.0;
  for (const auto& sp : pool_.subjects) {
    const double w = (*subjects_)[sp.subject].weight;
    const int M = static_cast<int>(sp.paths.size());
    Eigen::VectorXd dl(M);
    double dqi = 0.0;
    for (int m = 0; m < M; ++m) {
      const auto& pe = sp.paths[m];
      dl[m] = model_.path_loglik(pe.compiled, out.theta) -
              model_.path_loglik(pe.compiled, theta_start);
      dqi += pe.nubar * dl[m];
    }
    double vi = 0.0;
    for (int m = 0; m < M; ++m)
      vi += sp.paths[m].nubar * (dl[m] - dqi) * (dl[m] - dqi);
    dq += w * dqi;
    var += w * w * vi / std::max(sp.ess, 1.0);
  }
  out.dq = dq;
  out.ase = std::sqrt(std::max(var, 0.0));
  return out;
}

void McemEngine::augment_pool(const Eigen::VectorXd& theta_u) {
  for (auto& sp : pool_.subjects) sp.target_ess *= config_.ess_factor;
  importance_weights(theta_u);
}

Eigen::VectorXd McemEngine::init_from_surrogate(const Model& model,
                                                const MarkovSurrogate& surrogate) {
  const auto& lay = model.layout();
  const auto& slay = surrogate.model().layout();
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(model.n_params());
  for (int h = 0; h < model.space().n_transitions(); ++h) {
    const double log_rate = surrogate.theta_u()[slay.base_off[h]];
    switch (model.hazards()[h].family) {
      case HazardFamily::Exponential:
        theta[lay.base_off[h]] = log_rate;
        break;
      case HazardFamily::Weibull:
        theta[lay.base_off[h]] = log_rate;      // scale = rate
        theta[lay.base_off[h] + 1] = 0.0;       // shape = 1
        break;
      case HazardFamily::BSpline:
        // constant intensity equal to the rate (basis is a partition of unity)
        for (int l = 0; l < lay.base_cnt[h]; ++l) theta[lay.base_off[h] + l] = log_rate;
        break;
    }
    for (int j = 0; j < lay.cov_cnt[h]; ++j)
      theta[lay.cov_off[h] + j] = surrogate.theta_u()[slay.cov_off[h] + j];
  }
  return theta;
}

McemResult McemEngine::run(const Eigen::VectorXd& theta_init) {
  McemResult res;
  Eigen::VectorXd theta = theta_init;
  const double n_weight = [&] {
    double s = 0;
    for (const auto& cs : *subjects_) s += cs.weight;
    return s;
  }();
  const double tol_total = config_.stop_tol * n_weight;

  importance_weights(theta);
  for (int iter = 1; iter <= config_.max_iter; ++iter) {
    MStep step = maximize_q(theta);
    McemIteration tr;
    tr.iter = iter;
    tr.dq = step.dq;
    tr.ase = step.ase;
    tr.q = q_estimate(step.theta);
    tr.n_paths = pool_.total_paths();
    {
      std::vector<double> ess, kh;
      for (const auto& sp : pool_.subjects) {
        ess.push_back(sp.ess);
        if (std::isfinite(sp.khat)) kh.push_back(sp.khat);
      }
      std::sort(ess.begin(), ess.end());
      auto quant = [&](std::vector<double>& v, double p) {
        return v.empty() ? std::numeric_limits<double>::quiet_NaN()
                         : v[static_cast<size_t>(p * (v.size() - 1))];
      };
      tr.ess_min = quant(ess, 0.0);
      tr.ess_q25 = quant(ess, 0.25);
      tr.ess_med = quant(ess, 0.5);
      tr.ess_q75 = quant(ess, 0.75);
      tr.ess_max = quant(ess, 1.0);
      std::sort(kh.begin(), kh.end());
      tr.khat_med = quant(kh, 0.5);
      tr.khat_max = quant(kh, 1.0);
    }
    if (ascent_decision(step.dq, step.ase, config_.ascent_alpha)) {
      tr.accepted = true;
      theta = step.theta;
      res.iterations = iter;
      if (stopping_decision(step.dq, step.ase, config_.stop_gamma, tol_total)) {
        tr.stopped = true;
        res.trace.push_back(tr);
        res.converged = true;
        res.message = "stopping rule satisfied";
        importance_weights(theta);
        break;
      }
      res.trace.push_back(tr);
      importance_weights(theta);
    } else {
      res.trace.push_back(tr);
      augment_pool(theta);
    }
  }
  res.theta_u = theta;
  res.pool = pool_;
  if (!res.converged) {
    res.iterations = config_.max_iter;
    res.message = "maximum MCEM iterations reached without satisfying the stopping rule";
  }
  return res;
}

McemResult run_mcem(const Model& model, const std::vector<CompiledSubject>& subjects,
                    const MarkovSurrogate& surrogate, const MCEMConfig& config,
                    const Eigen::VectorXd* theta_init) {
  McemEngine engine(model, subjects, surrogate, config);
  Eigen::VectorXd theta0 =
      theta_init ? *theta_init : McemEngine::init_from_surrogate(model, surrogate);
  return engine.run(theta0);
}

}  // namespace msm
