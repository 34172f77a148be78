#include "equirl/pomdp.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace equirl {

Pomdp::Pomdp(int states, int actions, int observations, double gamma)
    : num_states(states),
      num_actions(actions),
      num_observations(observations),
      discount(gamma),
      b0(states, 0.0),
      transition(static_cast<size_t>(states) * actions * states, 0.0),
      reward(static_cast<size_t>(states) * actions, 0.0),
      observation(static_cast<size_t>(actions) * states * observations, 0.0),
      initial_observation(static_cast<size_t>(states) * observations, 0.0) {
  if (states <= 0 || actions <= 0 || observations <= 0)
    throw Error(ErrorCode::invalid_pomdp, "sizes must be positive");
}

namespace {

void check_distribution(const double* p, int n, const std::string& what) {
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    if (p[i] < 0.0 || !std::isfinite(p[i])) throw Error(ErrorCode::invalid_pomdp, what + " has a negative entry");
    total += p[i];
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw Error(ErrorCode::invalid_pomdp, what + " sums to " + std::to_string(total));
}

}  // namespace

void Pomdp::validate() const {
  if (discount < 0.0 || discount >= 1.0) throw Error(ErrorCode::invalid_pomdp, "discount must lie in [0, 1)");
  check_distribution(b0.data(), num_states, "b0");
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a)
      check_distribution(&transition[(static_cast<size_t>(s) * num_actions + a) * num_states], num_states,
                         "T(" + std::to_string(s) + "," + std::to_string(a) + ",.)");
    check_distribution(&initial_observation[static_cast<size_t>(s) * num_observations], num_observations,
                       "O0(" + std::to_string(s) + ",.)");
  }
  for (int a = 0; a < num_actions; ++a)
    for (int s = 0; s < num_states; ++s)
      check_distribution(&observation[(static_cast<size_t>(a) * num_states + s) * num_observations], num_observations,
                         "O(" + std::to_string(a) + "," + std::to_string(s) + ",.)");
}

// ---------------------------------------------------------------------------
// Bindings

namespace {

void check_map_family(const Group& group, const std::vector<std::vector<int>>& maps, int n, const char* what) {
  if (static_cast<int>(maps.size()) != group.order())
    throw Error(ErrorCode::invalid_pomdp, std::string(what) + " map count != group order");
  for (int g = 0; g < group.order(); ++g) {
    if (static_cast<int>(maps[g].size()) != n) throw Error(ErrorCode::invalid_pomdp, std::string(what) + " map size");
    std::vector<bool> seen(n, false);
    for (int x : maps[g]) {
      if (x < 0 || x >= n || seen[x])
        throw Error(ErrorCode::invalid_pomdp, std::string(what) + " map of element " + std::to_string(g) + " is not a bijection");
      seen[x] = true;
    }
  }
  for (int i = 0; i < n; ++i)
    if (maps[0][i] != i) throw Error(ErrorCode::invalid_pomdp, std::string(what) + " identity map moves " + std::to_string(i));
  for (int g = 0; g < group.order(); ++g)
    for (int h = 0; h < group.order(); ++h)
      for (int i = 0; i < n; ++i)
        if (maps[group.compose(g, h)][i] != maps[g][maps[h][i]])
          throw Error(ErrorCode::invalid_pomdp, std::string(what) + " maps do not respect composition");
}

std::vector<std::vector<int>> block_cyclic_maps(const Group& group, int n) {
  const int k = group.order();
  if (n % k != 0) throw Error(ErrorCode::invalid_pomdp, "size " + std::to_string(n) + " not a multiple of " + group.name());
  std::vector<std::vector<int>> maps(k, std::vector<int>(n));
  for (int g = 0; g < k; ++g)
    for (int i = 0; i < n; ++i) maps[g][i] = (i / k) * k + (i % k + g) % k;
  return maps;
}

std::vector<std::vector<int>> identity_maps(int n) {
  std::vector<int> id(n);
  for (int i = 0; i < n; ++i) id[i] = i;
  return {id};
}

}  // namespace

void GroupActionBinding::validate(const Pomdp& pomdp) const {
  check_map_family(group, state_map, pomdp.num_states, "state");
  check_map_family(group, action_map, pomdp.num_actions, "action");
  check_map_family(group, obs_map, pomdp.num_observations, "observation");
}

GroupActionBinding trivial_binding(const Pomdp& pomdp) {
  return {Group::cyclic(1), identity_maps(pomdp.num_states), identity_maps(pomdp.num_actions),
          identity_maps(pomdp.num_observations)};
}

GroupActionBinding block_cyclic_binding(const Group& group, const Pomdp& pomdp) {
  return {group, block_cyclic_maps(group, pomdp.num_states), block_cyclic_maps(group, pomdp.num_actions),
          block_cyclic_maps(group, pomdp.num_observations)};
}

std::string to_string(const History& h) {
  std::ostringstream os;
  os << "(o" << h.observations.front();
  for (size_t t = 0; t < h.actions.size(); ++t) os << ", a" << h.actions[t] << ", o" << h.observations[t + 1];
  os << ")";
  return os.str();
}

History act_on_history(const GroupActionBinding& binding, int g, const History& h) {
  binding.group.check_element(g);
  History out;
  out.observations.reserve(h.observations.size());
  out.actions.reserve(h.actions.size());
  for (int o : h.observations) out.observations.push_back(binding.obs(g, o));
  for (int a : h.actions) out.actions.push_back(binding.action(g, a));
  return out;
}

// ---------------------------------------------------------------------------
// Invariance

InvarianceReport check_invariance(const Pomdp& p, const GroupActionBinding& bind, double tol) {
  bind.validate(p);
  InvarianceReport rep;
  auto record = [&](const char* table, std::vector<int> idx, int g, double v, double gv, bool& flag) {
    ++rep.checked;
    if (std::abs(v - gv) <= tol) return;
    rep.pass = false;
    flag = false;
    rep.violations.push_back({table, std::move(idx), g, v, gv});
  };
  for (int g = 1; g < bind.group.order(); ++g) {
    for (int s = 0; s < p.num_states; ++s) {
      const int gs = bind.state(g, s);
      record("b0", {s}, g, p.b0[s], p.b0[gs], rep.pass_b0);
      for (int o = 0; o < p.num_observations; ++o)
        record("O0", {s, o}, g, p.O0(s, o), p.O0(gs, bind.obs(g, o)), rep.pass_O0);
      for (int a = 0; a < p.num_actions; ++a) {
        const int ga = bind.action(g, a);
        record("R", {s, a}, g, p.R(s, a), p.R(gs, ga), rep.pass_R);
        for (int s2 = 0; s2 < p.num_states; ++s2)
          record("T", {s, a, s2}, g, p.T(s, a, s2), p.T(gs, ga, bind.state(g, s2)), rep.pass_T);
      }
    }
    for (int a = 0; a < p.num_actions; ++a)
      for (int s2 = 0; s2 < p.num_states; ++s2)
        for (int o = 0; o < p.num_observations; ++o)
          record("O", {a, s2, o}, g, p.O(a, s2, o), p.O(bind.action(g, a), bind.state(g, s2), bind.obs(g, o)),
                 rep.pass_O);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Beliefs

namespace {

/// Unnormalized E_{s|b}[T(s, a, .)].
Vector predict(const Pomdp& p, const Belief& b, int a) {
  Vector out = Vector::Zero(p.num_states);
  for (int s = 0; s < p.num_states; ++s) {
    if (b(s) == 0.0) continue;
    const double* row = &p.transition[(static_cast<size_t>(s) * p.num_actions + a) * p.num_states];
    for (int s2 = 0; s2 < p.num_states; ++s2) out(s2) += b(s) * row[s2];
  }
  return out;
}

void check_indices(const Pomdp& p, int a, int o) {
  if (a < 0 || a >= p.num_actions) throw Error(ErrorCode::invalid_action, "action " + std::to_string(a));
  if (o < 0 || o >= p.num_observations) throw Error(ErrorCode::impossible_observation, "observation " + std::to_string(o));
}

}  // namespace

Belief initial_belief(const Pomdp& p, int o0) {
  check_indices(p, 0, o0);
  Belief b(p.num_states);
  for (int s = 0; s < p.num_states; ++s) b(s) = p.b0[s] * p.O0(s, o0);
  const double z = b.sum();
  if (z <= 0.0) throw Error(ErrorCode::impossible_observation, "initial observation " + std::to_string(o0));
  return b / z;
}

double observation_probability(const Pomdp& p, const Belief& b, int a, int o) {
  check_indices(p, a, o);
  const Vector pred = predict(p, b, a);
  double total = 0.0;
  for (int s2 = 0; s2 < p.num_states; ++s2) total += pred(s2) * p.O(a, s2, o);
  return total;
}

Belief belief_update(const Pomdp& p, const Belief& b, int a, int o) {
  check_indices(p, a, o);
  Vector post = predict(p, b, a);
  for (int s2 = 0; s2 < p.num_states; ++s2) post(s2) *= p.O(a, s2, o);
  const double z = post.sum();
  if (z <= 0.0)
    throw Error(ErrorCode::impossible_observation,
                "Pr(o=" + std::to_string(o) + " | b, a=" + std::to_string(a) + ") = 0");
  return post / z;
}

Belief belief(const Pomdp& p, const History& h) {
  if (h.observations.size() != h.actions.size() + 1)
    throw Error(ErrorCode::shape, "history must alternate observations and actions");
  Belief b = initial_belief(p, h.observations.front());
  for (size_t t = 0; t < h.actions.size(); ++t) b = belief_update(p, b, h.actions[t], h.observations[t + 1]);
  return b;
}

double HistoryMdp::transition(const History& h, int a, const History& next) const {
  if (next.actions.size() != h.actions.size() + 1) return 0.0;
  for (size_t t = 0; t < h.actions.size(); ++t)
    if (next.actions[t] != h.actions[t]) return 0.0;
  for (size_t t = 0; t < h.observations.size(); ++t)
    if (next.observations[t] != h.observations[t]) return 0.0;
  if (next.actions.back() != a) return 0.0;
  return observation_probability(*pomdp_, belief(*pomdp_, h), a, next.observations.back());
}

double HistoryMdp::reward(const History& h, int a) const {
  const Belief b = belief(*pomdp_, h);
  double r = 0.0;
  for (int s = 0; s < pomdp_->num_states; ++s) r += b(s) * pomdp_->R(s, a);
  return r;
}

// ---------------------------------------------------------------------------
// History tree

std::uint64_t HistoryTree::key(int node, int action, int observation) const {
  return (static_cast<std::uint64_t>(node) * num_actions_ + action) * num_observations_ + observation;
}

HistoryTree HistoryTree::build(const Pomdp& p, int depth, size_t budget) {
  HistoryTree tree;
  tree.depth_ = depth;
  tree.num_actions_ = p.num_actions;
  tree.num_observations_ = p.num_observations;
  tree.roots_.assign(p.num_observations, -1);
  auto add = [&](Node n) {
    if (tree.nodes_.size() >= budget)
      throw Error(ErrorCode::budget, "history tree exceeds node budget " + std::to_string(budget) + " at depth " +
                                         std::to_string(n.depth) + " (" + std::to_string(tree.nodes_.size()) +
                                         " nodes so far)");
    tree.nodes_.push_back(std::move(n));
    return static_cast<int>(tree.nodes_.size()) - 1;
  };
  for (int o = 0; o < p.num_observations; ++o) {
    double z = 0.0;
    for (int s = 0; s < p.num_states; ++s) z += p.b0[s] * p.O0(s, o);
    if (z <= 0.0) continue;
    tree.roots_[o] = add({-1, -1, o, 0, z, initial_belief(p, o)});
  }
  // Nodes are appended breadth-first, so a single forward sweep expands every level.
  for (size_t id = 0; id < tree.nodes_.size(); ++id) {
    if (tree.nodes_[id].depth >= depth) continue;
    for (int a = 0; a < p.num_actions; ++a) {
      const Vector pred = predict(p, tree.nodes_[id].belief, a);
      for (int o = 0; o < p.num_observations; ++o) {
        Vector post(p.num_states);
        for (int s2 = 0; s2 < p.num_states; ++s2) post(s2) = pred(s2) * p.O(a, s2, o);
        const double z = post.sum();
        if (z <= 0.0) continue;
        const int child = add({static_cast<int>(id), a, o, tree.nodes_[id].depth + 1, z, post / z});
        tree.children_.emplace(tree.key(static_cast<int>(id), a, o), child);
      }
    }
  }
  return tree;
}

int HistoryTree::root(int observation) const {
  if (observation < 0 || observation >= num_observations_) return -1;
  return roots_[observation];
}

int HistoryTree::child(int node, int action, int observation) const {
  auto it = children_.find(key(node, action, observation));
  return it == children_.end() ? -1 : it->second;
}

int HistoryTree::find(const History& h) const {
  if (h.observations.size() != h.actions.size() + 1 || h.length() > depth_) return -1;
  int node = root(h.observations.front());
  for (size_t t = 0; node >= 0 && t < h.actions.size(); ++t) node = child(node, h.actions[t], h.observations[t + 1]);
  return node;
}

History HistoryTree::history(int node) const {
  History h;
  while (node >= 0) {
    h.observations.push_back(nodes_[node].observation);
    if (nodes_[node].action >= 0) h.actions.push_back(nodes_[node].action);
    node = nodes_[node].parent;
  }
  std::reverse(h.observations.begin(), h.observations.end());
  std::reverse(h.actions.begin(), h.actions.end());
  return h;
}

// ---------------------------------------------------------------------------
// Exact Q

double ExactQ::reward(const Pomdp& p, int node, int action) const {
  const Belief& b = tree.nodes()[node].belief;
  double r = 0.0;
  for (int s = 0; s < p.num_states; ++s) r += b(s) * p.R(s, action);
  return r;
}

ExactQ exact_q(const Pomdp& p, int horizon, size_t budget) {
  if (horizon < 0) throw Error(ErrorCode::shape, "horizon must be >= 0");
  ExactQ out;
  out.horizon = horizon;
  out.tree = HistoryTree::build(p, horizon, budget);
  const auto& nodes = out.tree.nodes();
  const size_t n = nodes.size();
  out.q.assign(n, std::vector<double>(p.num_actions, 0.0));
  out.value.assign(n, 0.0);
  out.greedy.assign(n, {});
  // Children always follow their parent, so a reverse sweep sees finished subtrees.
  for (size_t i = n; i-- > 0;) {
    const auto& node = nodes[i];
    auto& q = out.q[i];
    if (node.depth < horizon) {
      for (int a = 0; a < p.num_actions; ++a) q[a] += out.reward(p, static_cast<int>(i), a);
    }
    double best = q[0];
    for (double v : q) best = std::max(best, v);
    out.value[i] = best;
    for (int a = 0; a < p.num_actions; ++a)
      if (q[a] >= best - 1e-9) out.greedy[i].push_back(a);
    if (node.parent >= 0) out.q[node.parent][node.action] += p.discount * node.step_probability * best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Verification

Lemma1Report verify_lemma1(const Pomdp& p, const GroupActionBinding& bind, int depth, size_t budget, double tol) {
  bind.validate(p);
  const HistoryTree tree = HistoryTree::build(p, depth, budget);
  Lemma1Report rep;
  for (size_t id = 0; id < tree.size(); ++id) {
    ++rep.histories;
    const History h = tree.history(static_cast<int>(id));
    const Belief& b = tree.nodes()[id].belief;
    for (int g = 0; g < bind.group.order(); ++g) {
      const int gid = tree.find(act_on_history(bind, g, h));
      if (gid < 0) {
        if (!rep.witness_unreachable) {
          rep.pass = false;
          rep.max_deviation = std::max(rep.max_deviation, 1.0);
          rep.witness_history = h;
          rep.witness_element = g;
          rep.witness_state = -1;
          rep.witness_unreachable = true;
        }
        continue;
      }
      const Belief& gb = tree.nodes()[gid].belief;
      for (int s = 0; s < p.num_states; ++s) {
        const double dev = std::abs(gb(bind.state(g, s)) - b(s));
        if (dev > rep.max_deviation) {
          rep.max_deviation = dev;
          if (!rep.witness_unreachable) {
            rep.witness_history = h;
            rep.witness_state = s;
            rep.witness_element = g;
          }
        }
      }
    }
  }
  if (rep.max_deviation >= tol) rep.pass = false;
  return rep;
}

Theorem1Report verify_theorem1(const ExactQ& solved, const GroupActionBinding& bind, double tol) {
  const auto& tree = solved.tree;
  Theorem1Report rep;
  auto witness = [&](const History& h, int a, int g, double q, double gq, bool unreachable) {
    rep.witness_history = h;
    rep.witness_action = a;
    rep.witness_element = g;
    rep.witness_q = q;
    rep.witness_q_transformed = gq;
    rep.witness_unreachable = unreachable;
  };
  for (size_t id = 0; id < tree.size(); ++id) {
    const History h = tree.history(static_cast<int>(id));
    const auto& q = solved.q[id];
    const int na = static_cast<int>(q.size());
    for (int g = 0; g < bind.group.order(); ++g) {
      const int gid = tree.find(act_on_history(bind, g, h));
      if (gid < 0) {
        if (rep.pass || !rep.witness_unreachable) witness(h, -1, g, solved.value[id], 0.0, true);
        rep.pass = false;
        rep.policy_equivariant = false;
        continue;
      }
      const auto& gq = solved.q[gid];
      for (int a = 0; a < na; ++a) {
        ++rep.pairs;
        const double dev = std::abs(gq[bind.action(g, a)] - q[a]);
        if (dev > rep.max_q_deviation) {
          rep.max_q_deviation = dev;
          if (!rep.witness_unreachable) witness(h, a, g, q[a], gq[bind.action(g, a)], false);
        }
      }
      rep.max_v_deviation = std::max(rep.max_v_deviation, std::abs(solved.value[gid] - solved.value[id]));
      std::vector<int> mapped;
      for (int a : solved.greedy[id]) mapped.push_back(bind.action(g, a));
      std::sort(mapped.begin(), mapped.end());
      if (mapped != solved.greedy[gid]) rep.policy_equivariant = false;
    }
  }
  if (rep.max_q_deviation >= tol || rep.max_v_deviation >= tol || !rep.policy_equivariant) rep.pass = false;
  return rep;
}

Theorem1Report verify_theorem1(const Pomdp& p, const GroupActionBinding& bind, int horizon, size_t budget,
                               double tol) {
  bind.validate(p);
  return verify_theorem1(exact_q(p, horizon, budget), bind, tol);
}

// ---------------------------------------------------------------------------
// Generators

Pomdp random_pomdp(int S, int A, int O, std::mt19937_64& rng, double gamma) {
  Pomdp p(S, A, O, gamma);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  auto fill_rows = [&](std::vector<double>& t, int width) {
    for (size_t i = 0; i < t.size(); i += width) {
      double z = 0.0;
      for (int k = 0; k < width; ++k) z += (t[i + k] = u(rng));
      for (int k = 0; k < width; ++k) t[i + k] /= z;
    }
  };
  fill_rows(p.b0, S);
  fill_rows(p.transition, S);
  fill_rows(p.observation, O);
  fill_rows(p.initial_observation, O);
  std::normal_distribution<double> n;
  for (auto& r : p.reward) r = n(rng);
  return p;
}

Pomdp group_average(const Pomdp& p, const GroupActionBinding& bind) {
  bind.validate(p);
  Pomdp out(p.num_states, p.num_actions, p.num_observations, p.discount);
  const double k = bind.group.order();
  for (int g = 0; g < bind.group.order(); ++g)
    for (int s = 0; s < p.num_states; ++s) {
      const int gs = bind.state(g, s);
      out.b0[s] += p.b0[gs] / k;
      for (int o = 0; o < p.num_observations; ++o) out.O0(s, o) += p.O0(gs, bind.obs(g, o)) / k;
      for (int a = 0; a < p.num_actions; ++a) {
        const int ga = bind.action(g, a);
        out.R(s, a) += p.R(gs, ga) / k;
        for (int s2 = 0; s2 < p.num_states; ++s2) out.T(s, a, s2) += p.T(gs, ga, bind.state(g, s2)) / k;
        for (int o = 0; o < p.num_observations; ++o)
          out.O(a, s, o) += p.O(ga, gs, bind.obs(g, o)) / k;
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Text format

void write_pomdp(std::ostream& out, const Pomdp& p) {
  out << "pomdp 1\n"
      << "states " << p.num_states << "\nactions " << p.num_actions << "\nobservations " << p.num_observations
      << "\ndiscount " << std::setprecision(17) << p.discount << "\n";
  for (int s = 0; s < p.num_states; ++s)
    if (p.b0[s] != 0.0) out << "b0 " << s << " " << p.b0[s] << "\n";
  for (int s = 0; s < p.num_states; ++s)
    for (int a = 0; a < p.num_actions; ++a)
      for (int s2 = 0; s2 < p.num_states; ++s2)
        if (p.T(s, a, s2) != 0.0) out << "T " << s << " " << a << " " << s2 << " " << p.T(s, a, s2) << "\n";
  for (int s = 0; s < p.num_states; ++s)
    for (int a = 0; a < p.num_actions; ++a)
      if (p.R(s, a) != 0.0) out << "R " << s << " " << a << " " << p.R(s, a) << "\n";
  for (int a = 0; a < p.num_actions; ++a)
    for (int s2 = 0; s2 < p.num_states; ++s2)
      for (int o = 0; o < p.num_observations; ++o)
        if (p.O(a, s2, o) != 0.0) out << "O " << a << " " << s2 << " " << o << " " << p.O(a, s2, o) << "\n";
  for (int s = 0; s < p.num_states; ++s)
    for (int o = 0; o < p.num_observations; ++o)
      if (p.O0(s, o) != 0.0) out << "O0 " << s << " " << o << " " << p.O0(s, o) << "\n";
}

Pomdp read_pomdp(std::istream& in) {
  std::string line, tag;
  int version = 0, S = -1, A = -1, O = -1;
  double gamma = 0.99;
  Pomdp p;
  bool sized = false;
  int lineno = 0;
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::parse, "pomdp line " + std::to_string(lineno) + ": " + why);
  };
  auto in_range = [&](int v, int n) {
    if (v < 0 || v >= n) fail("index " + std::to_string(v) + " out of range");
    return v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ls >> tag;
    if (tag == "pomdp") {
      ls >> version;
      if (version != 1) fail("unsupported version");
      continue;
    }
    if (tag == "states") { ls >> S; continue; }
    if (tag == "actions") { ls >> A; continue; }
    if (tag == "observations") { ls >> O; continue; }
    if (tag == "discount") { ls >> gamma; continue; }
    if (!sized) {
      if (S <= 0 || A <= 0 || O <= 0) fail("sizes must precede table entries");
      p = Pomdp(S, A, O, gamma);
      sized = true;
    }
    int i = 0, j = 0, k = 0;
    double v = 0.0;
    if (tag == "b0") {
      ls >> i >> v;
      p.b0[in_range(i, S)] = v;
    } else if (tag == "T") {
      ls >> i >> j >> k >> v;
      p.T(in_range(i, S), in_range(j, A), in_range(k, S)) = v;
    } else if (tag == "R") {
      ls >> i >> j >> v;
      p.R(in_range(i, S), in_range(j, A)) = v;
    } else if (tag == "O") {
      ls >> i >> j >> k >> v;
      p.O(in_range(i, A), in_range(j, S), in_range(k, O)) = v;
    } else if (tag == "O0") {
      ls >> i >> j >> v;
      p.O0(in_range(i, S), in_range(j, O)) = v;
    } else {
      fail("unknown tag '" + tag + "'");
    }
    if (ls.fail()) fail("malformed entry");
  }
  if (version != 1) throw Error(ErrorCode::parse, "missing 'pomdp 1' header");
  if (!sized) p = Pomdp(S, A, O, gamma);
  p.validate();
  return p;
}

}  // namespace equirl
