#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "msm/io.hpp"
#include "msm/threads.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitNonConvergence = 4;

int default_threads() {
  if (const char* env = std::getenv("MSMFIT_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 0;  // resolve to hardware concurrency
}

struct CommonOpts {
  std::string data_path, model_path, out_dir = ".";
  std::uint64_t seed = 1;
  int threads = default_threads();
};

void add_common(CLI::App* cmd, CommonOpts& o, bool need_model) {
  cmd->add_option("--data", o.data_path, "panel data CSV")->required();
  if (need_model)
    cmd->add_option("--model", o.model_path, "model specification file (JSON)")->required();
  cmd->add_option("--out", o.out_dir, "output directory");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--threads", o.threads, "worker threads (0 = all cores)");
}

std::string out_path(const CommonOpts& o, const std::string& name) {
  std::filesystem::create_directories(o.out_dir);
  return (std::filesystem::path(o.out_dir) / name).string();
}

void print_findings(const std::vector<msm::Finding>& findings) {
  for (const auto& f : findings)
    std::cerr << "  [" << f.subject << "] " << f.code << ": " << f.detail << "\n";
}

int run_validate(const CommonOpts& o) {
  auto subjects = msm::read_panel_csv(o.data_path);
  auto model = msm::read_model_config(o.model_path, &subjects);
  auto findings = msm::validate_subjects(subjects, model.space());
  if (findings.empty()) {
    std::cout << "ok: " << subjects.size() << " subjects, no findings\n";
    return 0;
  }
  std::cerr << findings.size() << " validation finding(s):\n";
  print_findings(findings);
  return kExitValidation;
}

int run_fit(const CommonOpts& o, const msm::MCEMConfig& config) {
  auto subjects = msm::read_panel_csv(o.data_path);
  auto model = msm::read_model_config(o.model_path, &subjects);
  msm::FitResult fit = msm::fit_model(model, subjects, config);
  msm::write_fit_result(out_path(o, "fit.json"), fit);
  if (!fit.trace.empty()) msm::write_trace_ndjson(out_path(o, "trace.ndjson"), fit.trace);
  std::cout << "method: " << fit.method << "\n"
            << "loglik: " << fit.loglik.value << " (mc se " << fit.loglik.se << ")\n"
            << "aic: " << fit.aic << "  bic: " << fit.bic << "\n";
  if (fit.subject_ess.size() > 0) {
    Eigen::VectorXd ess = fit.subject_ess;
    std::sort(ess.data(), ess.data() + ess.size());
    std::cout << "ess per subject: min " << ess[0] << ", median " << ess[ess.size() / 2] << "\n";
    int flagged = 0;
    for (int i = 0; i < fit.subject_khat.size(); ++i)
      if (std::isfinite(fit.subject_khat[i]) && fit.subject_khat[i] > 0.7) ++flagged;
    std::cout << "pareto khat > 0.7: " << flagged << " subject(s)\n";
  }
  if (!fit.converged) {
    std::cerr << "fit did not converge: " << fit.message << "\n";
    return kExitNonConvergence;
  }
  std::cout << "fit written to " << out_path(o, "fit.json") << "\n";
  return 0;
}

int run_simulate(const CommonOpts& o, const std::string& scenario_name, int n) {
  auto scenario = msm::builtin_scenario(scenario_name);
  if (n <= 0) n = scenario.default_n;
  auto cohort = msm::simulate_cohort(scenario, n, o.seed);
  std::vector<std::string> ids;
  for (const auto& s : cohort.subjects) ids.push_back(s.id);
  msm::write_panel_csv(out_path(o, "panel.csv"), cohort.subjects);
  msm::write_truth_csv(out_path(o, "truth.csv"), cohort.paths, ids);
  std::cout << "wrote " << n << " subjects to " << out_path(o, "panel.csv") << "\n";
  return 0;
}

int run_bootstrap(const CommonOpts& o, const msm::MCEMConfig& config, const std::string& fit_path,
                  int reps, const std::string& strata) {
  auto subjects = msm::read_panel_csv(o.data_path);
  msm::FitResult fit = msm::read_fit_result(fit_path);
  auto boot = msm::bayesian_bootstrap(fit, subjects, config, reps, strata, o.seed, o.threads);
  msm::write_bootstrap_csv(out_path(o, "bootstrap.csv"), boot);
  // percentile summary
  std::cout << "replicates kept: " << boot.draws.rows() << " (failed " << boot.n_failed << ")\n";
  std::cout << "parameter,q2.5,q50,q97.5\n";
  for (int c = 0; c < boot.draws.cols(); ++c) {
    Eigen::VectorXd col = boot.draws.col(c);
    std::sort(col.data(), col.data() + col.size());
    auto q = [&](double p) { return col[static_cast<int>(p * (col.size() - 1))]; };
    std::cout << boot.names[c] << "," << q(0.025) << "," << q(0.5) << "," << q(0.975) << "\n";
  }
  return 0;
}

int run_compare(const CommonOpts& o, const std::vector<std::string>& fit_paths) {
  std::vector<msm::FitResult> fits;
  std::vector<const msm::FitResult*> ptrs;
  std::vector<std::string> labels;
  for (const auto& p : fit_paths) {
    fits.push_back(msm::read_fit_result(p));
    labels.push_back(std::filesystem::path(p).stem().string());
  }
  for (const auto& f : fits) ptrs.push_back(&f);
  auto table = msm::compare_fits(ptrs, labels);
  std::ofstream out(out_path(o, "compare.csv"));
  out << "model,loglik,loglik_mc_se,p,aic,aic_mc_se,delta_aic,delta_mc_se,distinguishable\n";
  for (const auto& r : table.rows) {
    out << r.label << "," << msm::format_double(r.loglik) << "," << msm::format_double(r.loglik_se)
        << "," << r.p << "," << msm::format_double(r.aic) << "," << msm::format_double(r.aic_se)
        << "," << msm::format_double(r.delta_aic) << "," << msm::format_double(r.delta_se) << ","
        << (r.distinguishable ? 1 : 0) << "\n";
    std::cout << r.label << ": aic " << r.aic << " (delta " << r.delta_aic << " +- " << r.delta_se
              << ")\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multistate semi-Markov models for interval-censored panel data"};
  app.require_subcommand(1);

  CommonOpts opts;
  msm::MCEMConfig config;
  std::string scenario, strata, fit_path;
  std::vector<std::string> fit_paths;
  int n_subjects = 0, boot_reps = 0;

  auto* fit = app.add_subcommand("fit", "fit a model to panel data");
  add_common(fit, opts, true);
  fit->add_option("--ess-target", config.ess_target, "initial per-subject ESS target");
  fit->add_option("--ess-factor", config.ess_factor, "pool augmentation factor");
  fit->add_option("--alpha", config.ascent_alpha, "ascent confidence level");
  fit->add_option("--gamma", config.stop_gamma, "stopping confidence level");
  fit->add_option("--tol", config.stop_tol, "stopping tolerance per subject");
  fit->add_option("--max-iter", config.max_iter, "maximum MCEM iterations");
  fit->add_flag("--force-mcem", config.force_mcem, "run MCEM even for all-exponential models");

  auto* sim = app.add_subcommand("simulate", "simulate a built-in scenario");
  sim->add_option("--scenario", scenario, "illness_death_q | illness_death_m | trial9 | trial9_reduced5")
      ->required();
  sim->add_option("--n", n_subjects, "cohort size (default: scenario-specific)");
  sim->add_option("--out", opts.out_dir, "output directory");
  sim->add_option("--seed", opts.seed, "master seed");

  auto* boot = app.add_subcommand("bootstrap", "Bayesian bootstrap for a fitted model");
  add_common(boot, opts, false);
  boot->add_option("--fit", fit_path, "fit result JSON from a previous run")->required();
  boot->add_option("--boot-reps", boot_reps, "number of bootstrap replicates")->required();
  boot->add_option("--strata", strata, "covariate to stratify the bootstrap weights");
  boot->add_option("--ess-target", config.ess_target, "initial per-subject ESS target");
  boot->add_option("--max-iter", config.max_iter, "maximum MCEM iterations");

  auto* cmp = app.add_subcommand("compare", "AIC table across fits on identical data");
  cmp->add_option("--fits", fit_paths, "fit result files (first is the baseline)")
      ->required()
      ->expected(2, 100);
  cmp->add_option("--out", opts.out_dir, "output directory");

  auto* val = app.add_subcommand("validate", "validate panel data against a model");
  add_common(val, opts, true);

  CLI11_PARSE(app, argc, argv);
  config.seed = opts.seed;
  config.threads = opts.threads;

  try {
    if (app.got_subcommand("validate")) return run_validate(opts);
    if (app.got_subcommand("fit")) return run_fit(opts, config);
    if (app.got_subcommand("simulate")) return run_simulate(opts, scenario, n_subjects);
    if (app.got_subcommand("bootstrap"))
      return run_bootstrap(opts, config, fit_path, boot_reps, strata);
    if (app.got_subcommand("compare")) return run_compare(opts, fit_paths);
  } catch (const msm::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    print_findings(e.findings);
    return kExitValidation;
  } catch (const msm::InfeasibleSubjectError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const msm::ProposalDegeneracyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return 0;
}
