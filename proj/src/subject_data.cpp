#include "msm/subject_data.hpp"

#include <cmath>
#include <sstream>

namespace msm {

namespace {

std::string set_to_string(StateSet set, const StateSpace& space) {
  std::ostringstream os;
  os << "{";
  bool first = true;
  for (int s = 0; s < space.n_states(); ++s)
    if (contains(set, s)) {
      if (!first) os << ",";
      os << space.label(s);
      first = false;
    }
  os << "}";
  return os.str();
}

}  // namespace

std::vector<Finding> validate_subject(const SubjectData& subject, const StateSpace& space) {
  std::vector<Finding> out;
  auto add = [&](const std::string& code, const std::string& detail) {
    out.push_back({subject.id, code, detail});
  };
  const auto& recs = subject.records;
  if (recs.empty()) {
    add("no-records", "subject has no observation records");
    return out;
  }
  for (size_t j = 0; j < recs.size(); ++j) {
    const auto& r = recs[j];
    std::string at = "record " + std::to_string(j + 1);
    if (!(r.tstart < r.tstop)) add("bad-interval", at + ": tstart must be < tstop");
    if (!space.valid_set(r.from) || !space.valid_set(r.to))
      add("empty-candidate-set", at + ": candidate sets must be nonempty subsets of the state space");
    if (r.obstype == 1) {
      if (set_size(r.from) != 1 || set_size(r.to) != 1)
        add("o1-nonsingleton", at + ": exactly observed segments need singleton candidate sets");
      else {
        int a = first_state(r.from), b = first_state(r.to);
        if (a != b && space.transition_index(a, b) < 0)
          add("impossible-transition",
              at + ": observed transition " + space.label(a) + "->" + space.label(b) + " is not allowed");
      }
    } else if (r.obstype != 0) {
      add("bad-obstype", at + ": obstype must be 0 or 1");
    }
    if (j > 0) {
      const auto& prev = recs[j - 1];
      if (r.tstart > prev.tstop + 1e-12)
        add("gap", at + ": records leave a gap after " + std::to_string(prev.tstop));
      if (r.tstart < prev.tstop - 1e-12)
        add("overlap", at + ": record overlaps the previous one");
      if (r.from != prev.to)
        add("candidate-mismatch",
            at + ": statefrom " + set_to_string(r.from, space) +
                " does not match the previous stateto " + set_to_string(prev.to, space));
    }
  }
  if (set_size(recs.front().from) != 1)
    add("ambiguous-initial", "initial state must be known (singleton candidate set)");
  if (!out.empty()) return out;  // reachability analysis assumes a well-formed grid

  StateSet possible = recs.front().from;
  for (size_t j = 0; j < recs.size(); ++j) {
    const auto& r = recs[j];
    StateSet next = 0;
    if (r.obstype == 1) {
      int a = first_state(r.from), b = first_state(r.to);
      if (contains(possible, a)) next = r.to;
      (void)b;
    } else {
      for (int s = 0; s < space.n_states(); ++s)
        if (contains(possible, s)) next |= space.reachable_from(s);
      next &= r.to;
    }
    if (next == 0) {
      add("unreachable", "record " + std::to_string(j + 1) + ": no state in " +
                             set_to_string(r.to, space) +
                             " is reachable from the states consistent with earlier records");
      return out;
    }
    possible = next;
  }
  return out;
}

std::vector<Finding> validate_subjects(const std::vector<SubjectData>& subjects,
                                       const StateSpace& space) {
  std::vector<Finding> out;
  for (const auto& s : subjects) {
    auto f = validate_subject(s, space);
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

}  // namespace msm
