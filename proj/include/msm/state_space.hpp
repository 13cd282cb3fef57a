#ifndef MSM_STATE_SPACE_HPP
#define MSM_STATE_SPACE_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace msm {

// States are integer-coded 1..K. Internally we use 0-based indices; the
// public surface (CSV, config, error messages) speaks 1-based labels.
using StateSet = std::uint32_t;  // bitmask over 0-based state indices, K <= 32

inline StateSet set_of(int s0) { return StateSet{1u} << s0; }
inline bool contains(StateSet set, int s0) { return (set >> s0) & 1u; }
inline int set_size(StateSet set) { return __builtin_popcount(set); }
inline int first_state(StateSet set) { return __builtin_ctz(set); }

struct Transition {
  int from = -1;  // 0-based
  int to = -1;
  bool operator==(const Transition&) const = default;
};

// Directed acyclic transition structure over states 1..K. Progressive models
// only: construction rejects cycles and self-transitions.
class StateSpace {
 public:
  StateSpace() = default;
  StateSpace(int n_states, std::vector<Transition> transitions,
             std::vector<std::string> labels = {});

  int n_states() const { return n_states_; }
  const std::vector<Transition>& transitions() const { return transitions_; }
  int n_transitions() const { return static_cast<int>(transitions_.size()); }
  const std::string& label(int s0) const { return labels_[s0]; }

  // transition index of (from,to), or -1 if not an allowed transition
  int transition_index(int from0, int to0) const;
  bool is_absorbing(int s0) const { return exits_[s0].empty(); }
  // indices into transitions() of the exits of state s0
  const std::vector<int>& exits(int s0) const { return exits_[s0]; }
  // states reachable from s0 through the graph, including s0 itself
  StateSet reachable_from(int s0) const { return reach_[s0]; }
  StateSet all_states() const {
    return n_states_ == 32 ? ~StateSet{0} : (StateSet{1u} << n_states_) - 1u;
  }
  // every state in `set` is a valid 0-based index
  bool valid_set(StateSet set) const { return set != 0 && (set & ~all_states()) == 0; }

 private:
  int n_states_ = 0;
  std::vector<Transition> transitions_;
  std::vector<std::string> labels_;
  std::vector<std::vector<int>> exits_;
  std::vector<StateSet> reach_;
};

}  // namespace msm

#endif
