// equirl: train, evaluate and verify group-equivariant recurrent agents.
//
// Exit codes: 0 success / check passed, 1 runtime failure / check failed,
// 2 usage or configuration error.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "equirl/agent.hpp"
#include "equirl/gradcheck.hpp"
#include "equirl/run_config.hpp"

using namespace equirl;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// flag name -> settings key
const std::vector<std::pair<std::string, std::string>> kFlags = {
    {"--seed", "run.seed"},
    {"--out", "run.out"},
    {"--env", "env.kind"},
    {"--half-size", "env.half_size"},
    {"--grid-size", "env.grid_size"},
    {"--offset", "env.offset"},
    {"--info-radius", "env.info_radius"},
    {"--max-steps", "env.max_steps"},
    {"--group", "group.kind"},
    {"--agent", "agent.variant"},
    {"--lstm-init", "agent.lstm_init"},
    {"--hidden", "agent.hidden_fields"},
    {"--conv-fields", "agent.conv_fields"},
    {"--conv-layers", "agent.conv_layers"},
    {"--num-envs", "agent.num_envs"},
    {"--n-steps", "agent.n_steps"},
    {"--gamma", "agent.gamma"},
    {"--lr", "agent.learning_rate"},
    {"--entropy-coef", "agent.entropy_coef"},
    {"--value-coef", "agent.value_coef"},
    {"--steps", "agent.total_steps"},
    {"--eval-interval", "agent.eval_interval"},
    {"--eval-episodes", "agent.eval_episodes"},
    {"--stop-at", "agent.stop_at_success"},
    {"--networks", "verify.networks"},
    {"--histories", "verify.histories"},
    {"--depth", "verify.depth"},
    {"--horizon", "verify.horizon"},
    {"--discount", "verify.discount"},
    {"--node-budget", "verify.node_budget"},
    {"--episodes", "verify.episodes"},
};

struct Cli {
  std::string config;
  std::map<std::string, std::string> flags;  // settings key -> raw value
  bool greedy = false;
};

Settings load_settings(const Cli& cli) {
  Settings s;
  if (!cli.config.empty()) {
    if (!fs::exists(cli.config)) throw Error(ErrorCode::config, "config file " + cli.config + " not found");
    s.load_file(cli.config);
  }
  for (const auto& [key, value] : cli.flags) s.set(key, value);
  if (cli.greedy) s.set("agent.eval_greedy", "true");
  return s;
}

std::string run_dir(Settings& s, const RunConfig& r) {
  if (!r.out.empty()) return r.out;
  const std::string dir = default_run_root() + "/" + r.env.name() + "-" + to_string(r.agent.network.variant) +
                          "-seed" + std::to_string(r.agent.seed);
  s.set("run.out", dir);
  return dir;
}

void write_manifest(const std::string& dir, const Settings& s) {
  fs::create_directories(dir);
  std::ofstream out(dir + "/manifest.ini");
  if (!out) throw Error(ErrorCode::config, "cannot write " + dir + "/manifest.ini");
  out << s.manifest();
}

int verdict(bool pass) {
  std::cout << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? 0 : 1;
}

// ---------------------------------------------------------------------------

int cmd_train(Settings s) {
  const RunConfig r = s.resolve();
  const std::string dir = run_dir(s, r);
  write_manifest(dir, s);
  std::cout << curve_header() << "\n";
  const auto res = train(r.env, r.agent, dir, [](const CurveRow& row) { std::cout << format_curve_row(row) << std::endl; });
  if (auto hit = res.steps_to(0.9))
    std::cerr << "reached success 0.9 at step " << *hit << "\n";
  std::cerr << "wrote " << dir << "/curve.csv\n";
  return 0;
}

void dump_trace(PolicyNetwork& net, const EnvConfig& env, bool greedy, std::uint64_t seed, int transform) {
  auto e = make_env(env, seed);
  e->reset();
  if (transform != 0) e->set_state(act_on_state(env, transform, e->state()));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  NetState st = net.initial_state(1, rng);
  Tape tape;
  const auto bound = net.bind(tape);
  Vector obs = e->observe();
  std::cout << e->describe(e->state()) << "\n";
  while (true) {
    const auto out = net.step(bound, tape.constant(obs.transpose()), {tape.constant(st.actor_h), tape.constant(st.actor_c)},
                              {tape.constant(st.critic_h), tape.constant(st.critic_c)});
    st = {out.actor.h.value(), out.actor.c.value(), out.critic.h.value(), out.critic.c.value()};
    const Matrix logp = ad::log_softmax(out.logits).value();
    Eigen::Index a = 0;
    if (greedy) {
      logp.row(0).maxCoeff(&a);
    } else {
      const double u = unif(rng);
      double acc = 0.0;
      for (a = 0; a + 1 < logp.cols(); ++a)
        if (u < (acc += std::exp(logp(0, a)))) break;
    }
    const auto r = e->step(static_cast<int>(a));
    obs = r.observation;
    std::cout << "  a=" << a << " p=" << std::exp(logp(0, a)) << " v=" << out.value.value()(0, 0) << " r=" << r.reward
              << " -> " << e->describe(e->state()) << (r.terminal ? " terminal" : "") << (r.truncated ? " truncated" : "")
              << "\n";
    if (r.done()) break;
  }
}

int cmd_eval(Settings s, const std::string& checkpoint, int transform, int trace) {
  const RunConfig r = s.resolve();
  std::mt19937_64 init(env_seed(r.agent.seed, -3));
  PolicyNetwork net(r.env, r.agent.network, init);
  if (transform < 0 || transform >= net.symmetry().group.order())
    throw UsageError("--transform must be a group element in [0, " + std::to_string(net.symmetry().group.order()) + ")");
  std::string ckpt = checkpoint;
  if (ckpt.empty() && !r.out.empty()) ckpt = r.out + "/final.ckpt";
  if (!ckpt.empty()) {
    load_checkpoint(ckpt, net.parameters());
    std::cout << "checkpoint " << ckpt << "\n";
  } else {
    std::cout << "checkpoint none (freshly initialized network)\n";
  }
  const auto res = evaluate(net, r.env, r.agent.eval_episodes, r.agent.eval_greedy, r.agent.seed, transform);
  std::cout << "episodes " << res.episodes << "\nsuccess_rate " << res.success_rate << "\nmean_return "
            << res.mean_return << "\n";
  for (int i = 0; i < trace; ++i) {
    std::cout << "trace " << i << "\n";
    dump_trace(net, r.env, r.agent.eval_greedy, env_seed(r.agent.seed, i), transform);
  }
  return 0;
}

// ---------------------------------------------------------------------------

int verify_equivariance(const RunConfig& r) {
  std::mt19937_64 rng(r.agent.seed);
  EquivarianceReport total;
  for (int n = 0; n < r.verify.networks; ++n) {
    PolicyNetwork net(r.env, r.agent.network, rng);
    const auto hist = random_histories(r.env, r.verify.histories, r.verify.max_length, rng);
    const auto rep = check_policy_equivariance(net, hist, rng);
    total.max_actor_residual = std::max(total.max_actor_residual, rep.max_actor_residual);
    total.max_critic_residual = std::max(total.max_critic_residual, rep.max_critic_residual);
    total.sequences += rep.sequences;
  }
  std::cout << "networks " << r.verify.networks << " histories " << total.sequences << " variant "
            << to_string(r.agent.network.variant) << " lstm_init "
            << (r.agent.network.lstm_init == InitMode::zero ? "zero" : "random") << "\n"
            << "max actor residual " << total.max_actor_residual << "\nmax critic residual "
            << total.max_critic_residual << "\n";
  return verdict(total.max_residual() < 1e-8);
}

int verify_invariance(const RunConfig& r) {
  const auto ex = export_pomdp(r.env, r.verify.discount);
  const auto rep = check_invariance(ex.pomdp, ex.binding);
  std::cout << "entries checked " << rep.checked << "\nviolations " << rep.violations.size() << "\n"
            << "T " << rep.pass_T << " R " << rep.pass_R << " O " << rep.pass_O << " O0 " << rep.pass_O0 << " b0 "
            << rep.pass_b0 << "\n";
  for (size_t i = 0; i < std::min<size_t>(rep.violations.size(), 5); ++i) {
    const auto& v = rep.violations[i];
    std::cout << "  " << v.table << "(";
    for (size_t k = 0; k < v.index.size(); ++k) std::cout << (k ? "," : "") << v.index[k];
    std::cout << ") g=" << v.element << " value " << v.value << " transformed " << v.transformed << "\n";
  }
  return verdict(rep.pass);
}

int verify_lemma1(const RunConfig& r) {
  const auto ex = export_pomdp(r.env, r.verify.discount);
  const auto rep = verify_lemma1(ex.pomdp, ex.binding, r.verify.depth, r.verify.node_budget);
  std::cout << "depth " << r.verify.depth << " histories " << rep.histories << "\nmax belief deviation "
            << rep.max_deviation << "\n";
  if (!rep.pass && rep.witness_history)
    std::cout << "witness h=" << to_string(*rep.witness_history) << " s=" << rep.witness_state
              << " g=" << rep.witness_element << (rep.witness_unreachable ? " (g h unreachable)" : "") << "\n";
  return verdict(rep.pass);
}

int verify_theorem1(const RunConfig& r) {
  const auto ex = export_pomdp(r.env, r.verify.discount);
  const auto rep = verify_theorem1(ex.pomdp, ex.binding, r.verify.horizon, r.verify.node_budget);
  std::cout << "horizon " << r.verify.horizon << " discount " << r.verify.discount << " (h, a) pairs " << rep.pairs
            << "\nmax |Q(gh, ga) - Q(h, a)| " << rep.max_q_deviation << "\nmax |V(gh) - V(h)| "
            << rep.max_v_deviation << "\ngreedy sets correspond " << (rep.policy_equivariant ? "yes" : "no") << "\n";
  if (!rep.pass && rep.witness_history)
    std::cout << "witness h=" << to_string(*rep.witness_history) << " g=" << rep.witness_element
              << (rep.witness_action >= 0 ? " a=" + std::to_string(rep.witness_action) + " Q(h,a)=" : " V(h)=")
              << rep.witness_q << (rep.witness_action >= 0 ? " Q(gh,ga)=" : " V(gh)=") << rep.witness_q_transformed
              << (rep.witness_unreachable ? " (g h unreachable)" : "") << "\n";
  return verdict(rep.pass);
}

int verify_gradcheck(const RunConfig& r) {
  double worst = 0.0;
  for (const auto& c : check_primitives(r.agent.seed)) {
    std::cout << "primitive " << c.name << " " << c.result.max_relative_error << "\n";
    worst = std::max(worst, c.result.max_relative_error);
  }
  // Full recurrent loss on a short segment of a toy-sized network.
  NetworkConfig toy = r.agent.network;
  toy.hidden_fields = 1;
  toy.conv_fields = 1;
  toy.conv_layers = 1;
  toy.lstm_init = InitMode::random;
  std::mt19937_64 rng(r.agent.seed);
  PolicyNetwork net(r.env, toy, rng);
  RolloutWorker w(r.env, 3, r.agent.seed, net);
  const auto batch = collect_rollouts(net, w, 4);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto* p : net.parameters())
    if (p->name.find("bias") != std::string::npos)
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value(i) = nd(rng);
  const auto targets = compute_returns(batch, r.agent.gamma);
  const auto res = gradient_check([&](Tape& t) { return a2c_loss(t, net, batch, targets, r.agent).total; },
                                  net.parameters());
  std::cout << "a2c loss max relative error " << res.max_relative_error << " at " << res.worst_parameter << "["
            << res.worst_index << "] analytic " << res.analytic << " numeric " << res.numeric << "\n";
  return verdict(std::max(worst, res.max_relative_error) < 1e-4);
}

int cmd_verify(const Settings& s, const std::string& suite) {
  static const std::set<std::string> suites = {"equivariance", "invariance", "lemma1", "theorem1", "gradcheck"};
  if (!suites.count(suite))
    throw UsageError("unknown suite '" + suite + "' (equivariance | invariance | lemma1 | theorem1 | gradcheck)");
  const RunConfig r = s.resolve();
  std::cout << "suite " << suite << " env " << r.env.name() << "\n";
  if (suite == "equivariance") return verify_equivariance(r);
  if (suite == "invariance") return verify_invariance(r);
  if (suite == "lemma1") return verify_lemma1(r);
  if (suite == "theorem1") return verify_theorem1(r);
  return verify_gradcheck(r);
}

// ---------------------------------------------------------------------------

int cmd_oracle(Settings s) {
  const RunConfig r = s.resolve();
  const std::string dir = run_dir(s, r);
  const auto ex = export_pomdp(r.env, r.verify.discount);
  const auto solved = exact_q(ex.pomdp, r.verify.horizon, r.verify.node_budget);
  write_manifest(dir, s);

  std::ofstream q(dir + "/q_table.csv");
  q << "node,depth,history,action,q,greedy\n";
  q.precision(17);
  const auto& nodes = solved.tree.nodes();
  for (size_t n = 0; n < nodes.size(); ++n) {
    if (nodes[n].depth >= solved.horizon) continue;
    const std::string h = to_string(solved.tree.history(static_cast<int>(n)));
    for (int a = 0; a < ex.pomdp.num_actions; ++a) {
      const auto& g = solved.greedy[n];
      q << n << "," << nodes[n].depth << ",\"" << h << "\"," << a << "," << solved.q[n][a] << ","
        << (std::find(g.begin(), g.end(), a) != g.end()) << "\n";
    }
  }

  // Bellman spot checks: recompute Q from children one step down.
  std::mt19937_64 rng(r.agent.seed);
  std::uniform_int_distribution<size_t> pick(0, nodes.size() - 1);
  std::vector<std::vector<std::pair<int, int>>> kids(nodes.size());
  for (size_t n = 0; n < nodes.size(); ++n)
    if (nodes[n].parent >= 0) kids[nodes[n].parent].push_back({static_cast<int>(n), nodes[n].action});
  double bellman = 0.0;
  int checks = 0;
  for (int i = 0; i < 1000; ++i) {
    const size_t n = pick(rng);
    if (nodes[n].depth >= solved.horizon) continue;
    for (int a = 0; a < ex.pomdp.num_actions; ++a) {
      double expect = solved.reward(ex.pomdp, static_cast<int>(n), a);
      for (auto [c, ca] : kids[n])
        if (ca == a) expect += ex.pomdp.discount * nodes[c].step_probability * solved.value[c];
      bellman = std::max(bellman, std::abs(expect - solved.q[n][a]));
      ++checks;
    }
  }
  const auto ev = evaluate_exact(solved, r.env, r.verify.episodes, r.agent.seed);

  std::ostringstream summary;
  summary << "env " << r.env.name() << "\nstates " << ex.pomdp.num_states << "\nhorizon " << solved.horizon
          << "\ntree nodes " << nodes.size() << "\nbellman checks " << checks << "\nmax bellman residual " << bellman
          << "\ngreedy episodes " << ev.episodes << "\ngreedy success_rate " << ev.success_rate
          << "\ngreedy mean_return " << ev.mean_return << "\n";
  std::ofstream(dir + "/oracle.txt") << summary.str();
  std::cout << summary.str() << "wrote " << dir << "/q_table.csv\n";
  return bellman < 1e-9 ? 0 : 1;
}

int cmd_plotdata(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<std::vector<CurveRow>> curves;
  for (const auto& in : inputs) curves.push_back(read_curve(fs::is_directory(in) ? in + "/curve.csv" : in));
  const auto rows = aggregate_curves(curves);
  std::ofstream file;
  if (!out.empty()) {
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    file.open(out);
    if (!file) throw Error(ErrorCode::config, "cannot write " + out);
  }
  std::ostream& os = out.empty() ? std::cout : file;
  os << aggregate_header() << "\n";
  for (const auto& row : rows) os << format_aggregate_row(row) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group-equivariant recurrent actor-critic: training, evaluation and verification"};
  app.require_subcommand(1);
  app.fallthrough();
  Cli cli;
  app.add_option("--config", cli.config, "INI file with [env] [group] [agent] [verify] [run] sections");
  for (const auto& [flag, key] : kFlags)
    app.add_option_function<std::string>(flag, [&cli, key = key](const std::string& v) { cli.flags[key] = v; },
                                         "sets " + key);
  app.add_flag("--greedy", cli.greedy, "greedy evaluation (agent.eval_greedy)");

  auto* train_cmd = app.add_subcommand("train", "train an agent, writing curve.csv, manifest.ini and checkpoints");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string checkpoint;
  int transform = 0, trace = 0;
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file (default <out>/final.ckpt)");
  eval_cmd->add_option("--transform", transform, "group element applied to every reset");
  eval_cmd->add_option("--trace", trace, "print this many episode traces");
  auto* verify_cmd = app.add_subcommand("verify", "run a verification suite");
  std::string suite;
  verify_cmd->add_option("suite", suite, "equivariance | invariance | lemma1 | theorem1 | gradcheck")->required();
  auto* oracle_cmd = app.add_subcommand("oracle", "solve the exported POMDP exactly and play its greedy policy");
  auto* plot_cmd = app.add_subcommand("plotdata", "aggregate curves across seeds (mean and population std)");
  std::vector<std::string> inputs;
  std::string plot_out;
  plot_cmd->add_option("runs", inputs, "run directories or curve CSV files")->required();
  plot_cmd->add_option("-o,--output", plot_out, "output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*plot_cmd) return cmd_plotdata(inputs, plot_out);
    Settings s = load_settings(cli);
    if (*train_cmd) return cmd_train(s);
    if (*eval_cmd) return cmd_eval(s, checkpoint, transform, trace);
    if (*verify_cmd) return cmd_verify(s, suite);
    if (*oracle_cmd) return cmd_oracle(s);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::config ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
