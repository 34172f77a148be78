#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "equirl/group.hpp"

namespace equirl {

/// Explicit finite POMDP (S, A, Omega, b0, T, R, O) plus the first-step
/// observation table O0(s, o), which has no preceding action.
struct Pomdp {
  int num_states = 0;
  int num_actions = 0;
  int num_observations = 0;
  double discount = 0.99;
  std::vector<double> b0;                   ///< S
  std::vector<double> transition;           ///< S x A x S
  std::vector<double> reward;               ///< S x A
  std::vector<double> observation;          ///< A x S x Omega, O(a, s', o)
  std::vector<double> initial_observation;  ///< S x Omega, O0(s, o)

  Pomdp() = default;
  Pomdp(int states, int actions, int observations, double gamma = 0.99);

  double& T(int s, int a, int s2) { return transition[(static_cast<size_t>(s) * num_actions + a) * num_states + s2]; }
  double T(int s, int a, int s2) const { return transition[(static_cast<size_t>(s) * num_actions + a) * num_states + s2]; }
  double& R(int s, int a) { return reward[static_cast<size_t>(s) * num_actions + a]; }
  double R(int s, int a) const { return reward[static_cast<size_t>(s) * num_actions + a]; }
  double& O(int a, int s2, int o) { return observation[(static_cast<size_t>(a) * num_states + s2) * num_observations + o]; }
  double O(int a, int s2, int o) const {
    return observation[(static_cast<size_t>(a) * num_states + s2) * num_observations + o];
  }
  double& O0(int s, int o) { return initial_observation[static_cast<size_t>(s) * num_observations + o]; }
  double O0(int s, int o) const { return initial_observation[static_cast<size_t>(s) * num_observations + o]; }

  /// Throws invalid_pomdp unless every distribution is nonnegative and sums to 1 within 1e-12.
  void validate() const;
};

/// Permutation action of a finite group on S, A and Omega.
struct GroupActionBinding {
  Group group = Group::cyclic(1);
  std::vector<std::vector<int>> state_map;   ///< [g][s] -> g.s
  std::vector<std::vector<int>> action_map;  ///< [g][a] -> g.a
  std::vector<std::vector<int>> obs_map;     ///< [g][o] -> g.o

  int state(int g, int s) const { return state_map[g][s]; }
  int action(int g, int a) const { return action_map[g][a]; }
  int obs(int g, int o) const { return obs_map[g][o]; }

  /// Bijectivity and map(gh) = map(g) o map(h); throws invalid_pomdp.
  void validate(const Pomdp& pomdp) const;
};

/// Identity-only binding (the trivial group).
GroupActionBinding trivial_binding(const Pomdp& pomdp);

/// Cyclic group acting on each of S, A, Omega by rotating consecutive blocks of
/// `group.order()` indices (sizes must be multiples of the order).
GroupActionBinding block_cyclic_binding(const Group& group, const Pomdp& pomdp);

/// (o0, a0, o1, ..., o_t): observations.size() == actions.size() + 1.
struct History {
  std::vector<int> observations;
  std::vector<int> actions;

  int length() const { return static_cast<int>(actions.size()); }
  bool operator==(const History&) const = default;
};

std::string to_string(const History& h);

/// g h = (g o0, g a0, ..., g o_t).
History act_on_history(const GroupActionBinding& binding, int g, const History& h);

struct InvarianceViolation {
  std::string table;        ///< "T", "R", "O", "O0" or "b0"
  std::vector<int> index;   ///< table indices of the original entry
  int element = 0;
  double value = 0.0;
  double transformed = 0.0;  ///< the entry at the g-transformed indices
};

struct InvarianceReport {
  bool pass = true;
  size_t checked = 0;
  std::vector<InvarianceViolation> violations;
  bool pass_T = true, pass_R = true, pass_O = true, pass_O0 = true, pass_b0 = true;
};

/// Exhaustively checks T(gs, ga, gs') = T(s, a, s'), R(gs, ga) = R(s, a),
/// O(ga, gs', go) = O(a, s', o), O0(gs, go) = O0(s, o), b0(gs) = b0(s).
InvarianceReport check_invariance(const Pomdp& pomdp, const GroupActionBinding& binding, double tolerance = 1e-12);

using Belief = Vector;

/// Pr(s | o0) proportional to b0(s) O0(s, o0).
Belief initial_belief(const Pomdp& pomdp, int o0);
/// Pr(o | b, a) = sum_s b(s) sum_s' T(s, a, s') O(a, s', o).
double observation_probability(const Pomdp& pomdp, const Belief& b, int a, int o);
/// Pr(s' | h a o) proportional to E_{s|h}[T(s, a, s')] O(a, s', o).
Belief belief_update(const Pomdp& pomdp, const Belief& b, int a, int o);
Belief belief(const Pomdp& pomdp, const History& h);

/// Transition and reward of the fully observable MDP over histories.
class HistoryMdp {
 public:
  explicit HistoryMdp(const Pomdp& pomdp) : pomdp_(&pomdp) {}

  /// Pr(o | h, a) when next = h a o, else 0.
  double transition(const History& h, int a, const History& next) const;
  /// E_{s|h}[R(s, a)].
  double reward(const History& h, int a) const;

 private:
  const Pomdp* pomdp_;
};

/// Hash-consed tree of all reachable histories up to a depth (number of actions).
class HistoryTree {
 public:
  struct Node {
    int parent = -1;
    int action = -1;       ///< action leading here (-1 for roots)
    int observation = -1;  ///< last observation
    int depth = 0;
    double step_probability = 1.0;  ///< Pr(o | parent, a), or Pr(o0) for roots
    Belief belief;
  };

  static HistoryTree build(const Pomdp& pomdp, int depth, size_t node_budget);

  const std::vector<Node>& nodes() const { return nodes_; }
  size_t size() const { return nodes_.size(); }
  int max_depth() const { return depth_; }
  /// Node id of h, or -1 if h is unreachable or deeper than the tree.
  int find(const History& h) const;
  int child(int node, int action, int observation) const;
  int root(int observation) const;
  History history(int node) const;

 private:
  std::uint64_t key(int node, int action, int observation) const;

  int depth_ = 0;
  int num_actions_ = 0;
  int num_observations_ = 0;
  std::vector<Node> nodes_;
  std::vector<int> roots_;  ///< indexed by observation
  std::unordered_map<std::uint64_t, int> children_;
};

/// Finite-horizon optimal action values over the reachable history tree:
/// Q_H = 0, Q_t(h, a) = R(h, a) + gamma sum_o Pr(o | h, a) max_a' Q_{t+1}(hao, a').
struct ExactQ {
  HistoryTree tree;
  int horizon = 0;
  std::vector<std::vector<double>> q;    ///< [node][action]
  std::vector<double> value;             ///< max_a q
  std::vector<std::vector<int>> greedy;  ///< argmax set within 1e-9

  double reward(const Pomdp& pomdp, int node, int action) const;
};

ExactQ exact_q(const Pomdp& pomdp, int horizon, size_t node_budget = 5'000'000);

struct Lemma1Report {
  bool pass = true;
  double max_deviation = 0.0;
  size_t histories = 0;
  // witness of the largest deviation (or of an unreachable transformed history)
  std::optional<History> witness_history;
  int witness_state = -1;
  int witness_element = -1;
  bool witness_unreachable = false;
};

/// max over reachable h, s, g of |Pr(g s | g h) - Pr(s | h)|; pass iff < tolerance.
Lemma1Report verify_lemma1(const Pomdp& pomdp, const GroupActionBinding& binding, int depth,
                           size_t node_budget = 5'000'000, double tolerance = 1e-12);

struct Theorem1Report {
  bool pass = true;
  bool policy_equivariant = true;
  double max_q_deviation = 0.0;
  double max_v_deviation = 0.0;
  size_t pairs = 0;
  std::optional<History> witness_history;
  int witness_action = -1;
  int witness_element = -1;
  double witness_q = 0.0;
  double witness_q_transformed = 0.0;
  bool witness_unreachable = false;
};

/// Compares Q*(gh, ga) with Q*(h, a), V*(gh) with V*(h), and argmax sets
/// argmax Q*(gh, .) = g argmax Q*(h, .) over all reachable h and all g.
Theorem1Report verify_theorem1(const Pomdp& pomdp, const GroupActionBinding& binding, int horizon,
                               size_t node_budget = 5'000'000, double tolerance = 1e-9);
Theorem1Report verify_theorem1(const ExactQ& solved, const GroupActionBinding& binding, double tolerance = 1e-9);

/// Dense random tables (every entry positive before normalization).
Pomdp random_pomdp(int states, int actions, int observations, std::mt19937_64& rng, double gamma = 0.9);
/// Replaces every table by its mean over the group orbit, which enforces invariance.
Pomdp group_average(const Pomdp& pomdp, const GroupActionBinding& binding);

/// Plain-text tables, one line per nonzero entry:
///   pomdp 1
///   states S / actions A / observations O / discount g
///   b0 s p | T s a s' p | R s a r | O a s' o p | O0 s o p
void write_pomdp(std::ostream& out, const Pomdp& pomdp);
Pomdp read_pomdp(std::istream& in);

}  // namespace equirl
