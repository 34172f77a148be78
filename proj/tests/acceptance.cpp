// Acceptance run: one PASS/FAIL line per criterion, exit 0 iff all pass.
//   acceptance [--only 1,3,...] [--work DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

#include "equirl/agent.hpp"
#include "equirl/gradcheck.hpp"

using namespace equirl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

EnvConfig line(int h) {
  EnvConfig e;
  e.kind = EnvKind::carflag1d;
  e.carflag1d.half_size = h;
  return e;
}

EnvConfig grid(int n, int offset = 0) {
  EnvConfig e;
  e.kind = EnvKind::carflag2d;
  e.carflag2d.grid_size = n;
  e.carflag2d.offset = offset;
  return e;
}

fs::path work_dir;

// ---------------------------------------------------------------------------

std::vector<Representation> reps_of(const Group& g) {
  std::vector<Representation> r = {Representation::trivial(g), Representation::regular(g), Representation::standard(g)};
  if (g.kind() == GroupKind::cyclic) {
    r.push_back(Representation::grid(Representation::regular(g), 3, 3));
    r.push_back(Representation::grid(direct_sum({Representation::trivial(g), Representation::trivial(g)}), 4, 4));
  } else {
    r.push_back(Representation::sign(g));
    r.push_back(direct_sum({Representation::sign(g), Representation::sign(g)}));
  }
  r.push_back(direct_sum({Representation::trivial(g), Representation::regular(g)}));
  return r;
}

Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  int count = 0;
  for (const Group& g : {Group::cyclic(4), Group::reflection()}) {
    for (const auto& rho : reps_of(g)) {
      ++count;
      const Matrix id = Matrix::Identity(rho.dimension(), rho.dimension());
      worst = std::max(worst, (rho.matrix(0) - id).cwiseAbs().maxCoeff());
      for (int a = 0; a < g.order(); ++a) {
        worst = std::max(worst, (rho.matrix(a) * rho.matrix(g.inverse(a)) - id).cwiseAbs().maxCoeff());
        for (int b = 0; b < g.order(); ++b)
          worst = std::max(worst, (rho.matrix(g.compose(a, b)) - rho.matrix(a) * rho.matrix(b)).cwiseAbs().maxCoeff());
      }
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 1e-12 && secs < 1.0,
          std::to_string(count) + " representations, max residual " + fmt("%.2e", worst) + ", " + fmt("%.3f", secs) + " s"};
}

// dim Hom_G(V, W) = mean_g chi_V(g) chi_W(g) for real orthogonal representations.
int character_count(const Representation& in, const Representation& out) {
  double s = 0.0;
  const int n = in.group().order();
  for (int g = 0; g < n; ++g) s += in.matrix(g).trace() * out.matrix(g).trace();
  return static_cast<int>(std::lround(s / n));
}

Outcome criterion2() {
  bool ok = true;
  double residual = 0.0, ortho = 0.0;
  int pairs = 0;
  std::ostringstream bad;
  for (const Group& g : {Group::cyclic(4), Group::reflection()}) {
    std::vector<Representation> reps = {Representation::trivial(g), Representation::regular(g)};
    if (g.kind() == GroupKind::cyclic)
      reps.push_back(Representation::standard(g));
    else
      reps.push_back(Representation::sign(g));
    reps.push_back(direct_sum({reps[1], reps[2]}));
    reps.push_back(direct_sum({reps[2], reps[2], reps[0]}));
    for (const auto& in : reps)
      for (const auto& out : reps) {
        ++pairs;
        const auto basis = solve_intertwiner_basis(in, out);
        const int expect = character_count(in, out);
        if (basis.count() != expect) {
          ok = false;
          bad << " " << in.name() << "->" << out.name() << " got " << basis.count() << " expected " << expect;
        }
        for (int i = 0; i < basis.count(); ++i) {
          for (int e = 0; e < g.order(); ++e)
            residual = std::max(residual,
                                (out.matrix(e) * basis.basis[i] - basis.basis[i] * in.matrix(e)).cwiseAbs().maxCoeff());
          for (int j = 0; j < basis.count(); ++j)
            ortho = std::max(ortho, std::abs((basis.basis[i].array() * basis.basis[j].array()).sum() - (i == j)));
        }
      }
  }
  const Group c4 = Group::cyclic(4), c2 = Group::reflection();
  const int reg = solve_intertwiner_basis(Representation::regular(c4), Representation::regular(c4)).count();
  const int sign = solve_intertwiner_basis(Representation::sign(c2), Representation::trivial(c2)).count();
  ok = ok && reg == 4 && sign == 0 && residual < 1e-10 && ortho < 1e-10;
  return {ok, std::to_string(pairs) + " pairs match character counts" + bad.str() + "; regular->regular C4 = " +
                  std::to_string(reg) + ", sign->trivial C2 = " + std::to_string(sign) + ", constraint residual " +
                  fmt("%.2e", residual)};
}

// ---------------------------------------------------------------------------

// Stops at the first network whose residual exceeds stop_above: the suite has failed.
EquivarianceReport suite(const EnvConfig& env, const NetworkConfig& cfg, int networks, std::mt19937_64& rng,
                         double stop_above = std::numeric_limits<double>::infinity()) {
  EquivarianceReport total;
  for (int n = 0; n < networks && total.max_residual() <= stop_above; ++n) {
    PolicyNetwork net(env, cfg, rng);
    const auto hist = random_histories(env, 10, 50, rng);
    const auto r = check_policy_equivariance(net, hist, rng);
    total.max_actor_residual = std::max(total.max_actor_residual, r.max_actor_residual);
    total.max_critic_residual = std::max(total.max_critic_residual, r.max_critic_residual);
    total.sequences += r.sequences;
  }
  return total;
}

Outcome criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(3);
  NetworkConfig zero;
  NetworkConfig random = zero;
  random.lstm_init = InitMode::random;
  // 50 networks on each environment: 100 in total.
  double pass_residual = 0.0, fail_residual = std::numeric_limits<double>::infinity();
  size_t histories = 0;
  for (const auto& env : {line(25), grid(7)}) {
    const auto ok = suite(env, zero, 50, rng);
    pass_residual = std::max(pass_residual, ok.max_residual());
    histories += ok.sequences;
    fail_residual = std::min(fail_residual, suite(env, random, 50, rng, 1e-3).max_residual());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {pass_residual < 1e-8 && fail_residual > 1e-3 && secs < 60.0,
          "100 networks x " + std::to_string(histories / 100) + " histories, zero init max residual " +
              fmt("%.2e", pass_residual) + "; random init residual " + fmt("%.3f", fail_residual) + "; " +
              fmt("%.1f", secs) + " s"};
}

Outcome criterion4() {
  double prim = 0.0;
  std::string worst;
  for (const auto& c : check_primitives(4)) {
    if (c.result.max_relative_error >= prim) worst = c.name;
    prim = std::max(prim, c.result.max_relative_error);
  }
  double loss = 0.0;
  for (const auto& env : {line(3), grid(3)})
    for (auto v : {NetworkVariant::equi, NetworkVariant::plain}) {
      std::mt19937_64 rng(4);
      NetworkConfig cfg;
      cfg.variant = v;
      cfg.hidden_fields = 1;
      cfg.conv_fields = 1;
      cfg.conv_layers = 1;
      cfg.lstm_init = InitMode::random;
      PolicyNetwork net(env, cfg, rng);
      RolloutWorker w(env, 3, 2, net);
      RolloutBatch b;
      bool ended = false;
      for (int it = 0; it < 50 && !ended; ++it) {
        b = collect_rollouts(net, w, 4);
        ended = (b.terminal.array() + b.truncated.array()).maxCoeff() > 0.0;
      }
      // Random biases keep conv pre-activations off the ReLU kink.
      std::normal_distribution<double> nd(0.0, 0.3);
      for (auto* p : net.parameters())
        if (p->name.find("bias") != std::string::npos)
          for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value(i) = nd(rng);
      AgentConfig ac;
      ac.entropy_coef = 0.05;
      const auto targets = compute_returns(b, 0.9);
      const auto r = gradient_check([&](Tape& t) { return a2c_loss(t, net, b, targets, ac).total; }, net.parameters());
      loss = std::max(loss, ended ? r.max_relative_error : 1.0);
    }
  return {prim < 1e-4 && loss < 1e-4, "primitives max rel error " + fmt("%.2e", prim) + " (" + worst +
                                          "), recurrent A2C loss max rel error " + fmt("%.2e", loss)};
}

// ---------------------------------------------------------------------------

Outcome criterion5() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ex = export_pomdp(grid(3));
  const auto r = verify_lemma1(ex.pomdp, ex.binding, 5);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {r.pass && r.max_deviation < 1e-12 && secs < 60.0,
          std::to_string(r.histories) + " histories to depth 5, max belief deviation " + fmt("%.2e", r.max_deviation) +
              ", " + fmt("%.2f", secs) + " s"};
}

Outcome criterion6() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ex = export_pomdp(grid(3), 0.99);
  const auto r = verify_theorem1(ex.pomdp, ex.binding, 6);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto asym = export_pomdp(grid(3, 1), 0.99);
  const auto v = verify_theorem1(asym.pomdp, asym.binding, 6);
  const bool witness = !v.pass && v.witness_history.has_value();
  std::string w;
  if (witness)
    w = to_string(*v.witness_history) + " g=" + std::to_string(v.witness_element) + " " +
        fmt("%.4f", v.witness_q) + " vs " + fmt("%.4f", v.witness_q_transformed);
  return {r.pass && r.policy_equivariant && r.max_q_deviation < 1e-9 && secs < 300.0 && witness,
          std::to_string(r.pairs) + " (h, a, g) checks, max |dQ| " + fmt("%.2e", r.max_q_deviation) +
              ", argmax sets correspond " + (r.policy_equivariant ? "yes" : "no") + ", " + fmt("%.2f", secs) +
              " s; offset 1 violation " + (witness ? w : "NOT found")};
}

Outcome criterion7() {
  const auto cfg = grid(3);
  const auto ex = export_pomdp(cfg);
  const Pomdp& p = ex.pomdp;
  int mismatches = 0;
  for (int seed = 0; seed < 1000; ++seed) {
    const auto env = make_env(cfg, env_seed(7, seed));
    env->reset();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto draw = [&](auto&& prob, int n) {
      const double x = u(rng);
      double acc = 0.0;
      for (int i = 0; i < n; ++i)
        if (x < (acc += prob(i))) return i;
      return n - 1;
    };
    // Table-driven episode from the same start state.
    int s = env->state_index();
    bool ok = p.b0[s] > 0.0 && draw([&](int o) { return p.O0(s, o); }, p.num_observations) == env->observation_index();
    for (int t = 0; ok && t < 60; ++t) {
      const int a = static_cast<int>(rng() % 4);
      const auto sim = env->step(a);
      const int s2 = draw([&](int x) { return p.T(s, a, x); }, p.num_states);
      const int o = draw([&](int x) { return p.O(a, s2, x); }, p.num_observations);
      ok = s2 == env->state_index() && o == env->observation_index() && p.R(s, a) == sim.reward;
      s = s2;
      if (sim.terminal) {
        // The table keeps the ended state absorbing with zero reward.
        for (int b = 0; b < 4; ++b) ok = ok && p.T(s, b, s) == 1.0 && p.R(s, b) == 0.0;
        break;
      }
      if (sim.truncated) break;
    }
    mismatches += !ok;
  }
  const auto q = exact_q(p, 6);
  const auto ev = evaluate_exact(q, cfg, 200, 7);
  return {mismatches == 0 && ev.success_rate == 1.0,
          std::to_string(1000 - mismatches) + "/1000 traces coincide; exact greedy success " +
              fmt("%.3f", ev.success_rate) + " over 200 episodes"};
}

// ---------------------------------------------------------------------------

AgentConfig learning_config(NetworkVariant v, std::uint64_t seed) {
  AgentConfig ac;
  ac.network.variant = v;
  ac.network.hidden_fields = 32;
  ac.n_steps = 10;
  ac.optimizer.learning_rate = 1e-3;
  ac.total_steps = 300000;
  ac.eval_interval = 10000;
  ac.eval_episodes = 100;
  ac.stop_at_success = 0.9;
  ac.seed = seed;
  return ac;
}

double median4(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return 0.5 * (v[1] + v[2]);
}

Outcome criterion8() {
  const auto env = line(10);
  const double never = std::numeric_limits<double>::infinity();
  std::ostringstream os;
  std::vector<double> equi, plain;
  for (auto v : {NetworkVariant::equi, NetworkVariant::plain}) {
    const auto t0 = std::chrono::steady_clock::now();
    os << to_string(v) << " [";
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const fs::path dir = work_dir / ("c8-" + to_string(v) + "-" + std::to_string(seed));
      const auto res = train(env, learning_config(v, seed), dir.string());
      const auto hit = res.steps_to(0.9);
      (v == NetworkVariant::equi ? equi : plain).push_back(hit ? static_cast<double>(*hit) : never);
      os << (seed ? " " : "") << (hit ? std::to_string(*hit) : "-");
    }
    const double mins = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    os << "] " << fmt("%.1f", mins) << " min; ";
  }
  const int reached = static_cast<int>(std::count_if(equi.begin(), equi.end(), [&](double s) { return s < never; }));
  const double me = median4(equi), mp = median4(plain);
  os << "equi reached 0.9 on " << reached << "/4, median steps-to-0.9 equi " << (me < never ? fmt("%.0f", me) : "never")
     << " vs plain " << (mp < never ? fmt("%.0f", mp) : "never");
  return {reached >= 3 && me < mp, os.str()};
}

Outcome criterion9() {
  std::mt19937_64 rng(9);
  double worst = 0.0;
  int checked = 0;
  // Weights after the criterion 8 training runs, where available.
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const fs::path ckpt = work_dir / ("c8-equi-" + std::to_string(seed)) / "final.ckpt";
    if (!fs::exists(ckpt)) continue;
    std::mt19937_64 init(0);
    PolicyNetwork net(line(10), learning_config(NetworkVariant::equi, seed).network, init);
    load_checkpoint(ckpt.string(), net.parameters());
    worst = std::max(worst, check_policy_equivariance(net, random_histories(line(10), 10, 50, rng), rng).max_residual());
    ++checked;
  }
  // Aggressive updates on both environments, checked along the way.
  for (const auto& env : {line(10), grid(5)}) {
    AgentConfig ac;
    ac.network.hidden_fields = 4;
    ac.network.conv_fields = 2;
    ac.optimizer.learning_rate = 1e-2;
    ac.max_grad_norm = 10.0;
    PolicyNetwork net(env, ac.network, rng);
    Optimizer opt(ac.optimizer);
    RolloutWorker w(env, 8, 9, net);
    for (int step = 1; step <= 300; ++step) {
      a2c_update(net, opt, collect_rollouts(net, w, 5), ac);
      if (step == 1 || step == 30 || step == 300) {
        worst = std::max(worst, check_policy_equivariance(net, random_histories(env, 10, 50, rng), rng).max_residual());
        ++checked;
      }
    }
  }
  return {worst < 1e-8, std::to_string(checked) + " trained networks, max residual " + fmt("%.2e", worst)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome criterion10() {
  bool ok = true;
  std::ostringstream os;
  int i = 0;
  for (const auto& env : {line(10), grid(5)}) {
    AgentConfig ac;
    ac.network.hidden_fields = 8;
    ac.network.conv_fields = 4;
    ac.total_steps = env.kind == EnvKind::carflag1d ? 20000 : 5000;
    ac.eval_interval = ac.total_steps / 4;
    ac.eval_episodes = 50;
    ac.seed = 10;
    std::string csv[2], ckpt[2];
    for (int run = 0; run < 2; ++run) {
      const fs::path dir = work_dir / ("c10-" + std::to_string(i) + "-" + std::to_string(run));
      fs::remove_all(dir);
      train(env, ac, dir.string());
      csv[run] = slurp(dir / "curve.csv");
      ckpt[run] = slurp(dir / "final.ckpt");
    }
    const bool same = csv[0] == csv[1] && ckpt[0] == ckpt[1] && !csv[0].empty();
    ok = ok && same;
    os << (i ? "; " : "") << env.name() << " curve+checkpoint " << (same ? "identical" : "DIFFER");
    ++i;
  }
  return {ok, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  work_dir = fs::temp_directory_path() / "equirl_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string n; std::getline(ss, n, ',');) only.insert(std::stoi(n));
    } else if (a == "--work" && i + 1 < argc) {
      work_dir = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--only 1,3,...] [--work DIR]\n";
      return 2;
    }
  }
  fs::create_directories(work_dir);

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
      {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10},
  };
  bool all = true;
  for (const auto& [n, fn] : criteria) {
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
