#ifndef MSM_SUBJECT_DATA_HPP
#define MSM_SUBJECT_DATA_HPP

#include <string>
#include <vector>

#include "msm/model.hpp"
#include "msm/state_space.hpp"

namespace msm {

// One observation record over (tstart, tstop].
//   obstype 0: snapshot; the state at tstop lies in `to`
//   obstype 1: the segment is exactly observed; `from`/`to` are singletons and
//              from != to means the transition happened at tstop
struct DataRecord {
  double tstart = 0, tstop = 0;
  StateSet from = 0, to = 0;
  int obstype = 0;
};

struct SubjectData {
  std::string id;
  Covariates covariates;
  std::vector<DataRecord> records;

  double t0() const { return records.front().tstart; }
  double t_end() const { return records.back().tstop; }
};

struct Finding {
  std::string subject;
  std::string code;
  std::string detail;
};

// Structural checks: record tiling, candidate-set sanity, obstype-1 contract,
// and forward reachability of every candidate set under the transition graph.
std::vector<Finding> validate_subject(const SubjectData& subject, const StateSpace& space);

std::vector<Finding> validate_subjects(const std::vector<SubjectData>& subjects,
                                       const StateSpace& space);

}  // namespace msm

#endif
