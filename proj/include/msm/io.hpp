#ifndef MSM_IO_HPP
#define MSM_IO_HPP

#include <string>
#include <vector>

#include "json.hpp"
#include "msm/inference.hpp"
#include "msm/model.hpp"
#include "msm/subject_data.hpp"

namespace msm {

// Long-format panel CSV: id,tstart,tstop,statefrom,stateto,obstype,<covariates...>
// Candidate sets use single labels ("3") or bracketed sets ("[1|3]").
std::vector<SubjectData> read_panel_csv(const std::string& path);
void write_panel_csv(const std::string& path, const std::vector<SubjectData>& subjects);

// one row per path segment: id,entry_time,state,censor_time
void write_truth_csv(const std::string& path, const std::vector<SamplePath>& paths,
                     const std::vector<std::string>& ids);

// Model specification: states, transitions, per-transition family and
// covariates. Unknown keys are an error. A bspline transition without
// boundary_right takes the largest record tstop in `data`.
Model parse_model_config(const nlohmann::json& config, const std::vector<SubjectData>* data);
Model read_model_config(const std::string& path, const std::vector<SubjectData>* data);
nlohmann::ordered_json model_to_config(const Model& model);

nlohmann::ordered_json fit_to_json(const FitResult& fit);
void write_fit_result(const std::string& path, const FitResult& fit);
// Restores everything needed for comparisons and model-based functional
// estimation (parameters, covariance, marginal likelihood, fingerprints).
FitResult read_fit_result(const std::string& path);

void write_trace_ndjson(const std::string& path, const std::vector<McemIteration>& trace);
void write_bootstrap_csv(const std::string& path, const BootstrapResult& boot);

std::string format_double(double v);  // shortest round-trip representation

}  // namespace msm

#endif
