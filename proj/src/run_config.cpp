#include "equirl/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdlib>
#include <sstream>

namespace equirl {

namespace {

std::string text(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string text(long v) { return std::to_string(v); }
std::string text(int v) { return std::to_string(v); }
std::string text(bool v) { return v ? "true" : "false"; }

template <class T>
T number(const std::string& key, const std::string& s) {
  T v{};
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size())
    throw Error(ErrorCode::config, key + ": '" + s + "' is not a valid number");
  return v;
}

bool boolean(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw Error(ErrorCode::config, key + ": '" + s + "' is not a boolean");
}

std::map<std::string, std::string> defaults() {
  const RunConfig r;
  const auto& e1 = r.env.carflag1d;
  const auto& e2 = r.env.carflag2d;
  const auto& a = r.agent;
  const auto& v = r.verify;
  return {
      {"env.kind", r.env.name()},
      {"env.half_size", text(e1.half_size)},
      {"env.grid_size", text(e2.grid_size)},
      {"env.offset", text(e1.offset)},
      {"env.info_radius", text(e2.info_radius)},
      {"env.max_steps", text(e1.max_steps)},
      {"env.step_reward", text(e1.step_reward)},
      {"env.goal_reward", text(e1.goal_reward)},
      {"env.red_reward", text(e1.red_reward)},
      {"group.kind", r.group},
      {"agent.variant", to_string(a.network.variant)},
      {"agent.lstm_init", a.network.lstm_init == InitMode::zero ? "zero" : "random"},
      {"agent.hidden_fields", text(a.network.hidden_fields)},
      {"agent.conv_fields", text(a.network.conv_fields)},
      {"agent.conv_layers", text(a.network.conv_layers)},
      {"agent.candidate_tanh_twice", text(a.network.candidate_tanh_twice)},
      {"agent.num_envs", text(a.num_envs)},
      {"agent.n_steps", text(a.n_steps)},
      {"agent.gamma", text(a.gamma)},
      {"agent.optimizer", a.optimizer.kind == OptimizerConfig::Kind::adam ? "adam" : "sgd"},
      {"agent.learning_rate", text(a.optimizer.learning_rate)},
      {"agent.value_coef", text(a.value_coef)},
      {"agent.entropy_coef", text(a.entropy_coef)},
      {"agent.max_grad_norm", text(a.max_grad_norm)},
      {"agent.total_steps", text(a.total_steps)},
      {"agent.eval_interval", text(a.eval_interval)},
      {"agent.eval_episodes", text(a.eval_episodes)},
      {"agent.eval_greedy", text(a.eval_greedy)},
      {"agent.stop_at_success", ""},
      {"verify.networks", text(v.networks)},
      {"verify.histories", text(v.histories)},
      {"verify.max_length", text(v.max_length)},
      {"verify.depth", text(v.depth)},
      {"verify.horizon", text(v.horizon)},
      {"verify.discount", text(v.discount)},
      {"verify.node_budget", text(v.node_budget)},
      {"verify.episodes", text(v.episodes)},
      {"run.seed", std::to_string(a.seed)},
      {"run.out", r.out},
  };
}

}  // namespace

Settings::Settings() : values_(defaults()) {}

void Settings::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorCode::config, "unknown setting '" + key + "'");
  it->second = value;
}

const std::string& Settings::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorCode::config, "unknown setting '" + key + "'");
  return it->second;
}

void Settings::load_file(const std::string& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorCode::config, e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw Error(ErrorCode::config, path + ": key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      if (!values_.count(full)) throw Error(ErrorCode::config, path + ": unknown setting '" + full + "'");
      values_[full] = value.get_value<std::string>();
    }
  }
}

RunConfig Settings::resolve() const {
  RunConfig r;
  auto i = [&](const char* k) { return number<int>(k, get(k)); };
  auto l = [&](const char* k) { return number<long>(k, get(k)); };
  auto d = [&](const char* k) { return number<double>(k, get(k)); };
  auto b = [&](const char* k) { return boolean(k, get(k)); };

  const std::string kind = get("env.kind");
  if (kind == "carflag1d")
    r.env.kind = EnvKind::carflag1d;
  else if (kind == "carflag2d")
    r.env.kind = EnvKind::carflag2d;
  else
    throw Error(ErrorCode::config, "env.kind: unknown env '" + kind + "' (carflag1d | carflag2d)");
  auto& e1 = r.env.carflag1d;
  auto& e2 = r.env.carflag2d;
  e1.half_size = i("env.half_size");
  e2.grid_size = i("env.grid_size");
  e1.offset = e2.offset = i("env.offset");
  e2.info_radius = i("env.info_radius");
  e1.max_steps = e2.max_steps = i("env.max_steps");
  e1.step_reward = d("env.step_reward");
  e1.goal_reward = e2.goal_reward = d("env.goal_reward");
  e1.red_reward = d("env.red_reward");
  r.env.validate();

  r.group = get("group.kind");
  const std::string native = r.env.kind == EnvKind::carflag1d ? "reflection-2" : "cyclic-4";
  if (r.group != "auto" && r.group != native)
    throw Error(ErrorCode::config, "group '" + r.group + "' is not supported for " + kind + "; its symmetry is " + native);

  auto& a = r.agent;
  a.network.variant = parse_variant(get("agent.variant"));
  const std::string init = get("agent.lstm_init");
  if (init != "zero" && init != "random")
    throw Error(ErrorCode::config, "agent.lstm_init: '" + init + "' (zero | random)");
  a.network.lstm_init = init == "zero" ? InitMode::zero : InitMode::random;
  a.network.hidden_fields = i("agent.hidden_fields");
  a.network.conv_fields = i("agent.conv_fields");
  a.network.conv_layers = i("agent.conv_layers");
  a.network.candidate_tanh_twice = b("agent.candidate_tanh_twice");
  if (a.network.hidden_fields < 1 || a.network.conv_fields < 1 || a.network.conv_layers < 0)
    throw Error(ErrorCode::config, "network sizes must be positive");
  a.num_envs = i("agent.num_envs");
  a.n_steps = i("agent.n_steps");
  a.gamma = d("agent.gamma");
  const std::string opt = get("agent.optimizer");
  if (opt != "adam" && opt != "sgd") throw Error(ErrorCode::config, "agent.optimizer: '" + opt + "' (adam | sgd)");
  a.optimizer.kind = opt == "adam" ? OptimizerConfig::Kind::adam : OptimizerConfig::Kind::sgd;
  a.optimizer.learning_rate = d("agent.learning_rate");
  a.value_coef = d("agent.value_coef");
  a.entropy_coef = d("agent.entropy_coef");
  a.max_grad_norm = d("agent.max_grad_norm");
  a.total_steps = l("agent.total_steps");
  a.eval_interval = l("agent.eval_interval");
  a.eval_episodes = i("agent.eval_episodes");
  a.eval_greedy = b("agent.eval_greedy");
  if (!get("agent.stop_at_success").empty()) a.stop_at_success = d("agent.stop_at_success");
  a.seed = number<std::uint64_t>("run.seed", get("run.seed"));
  a.validate();

  auto& v = r.verify;
  v.networks = i("verify.networks");
  v.histories = i("verify.histories");
  v.max_length = i("verify.max_length");
  v.depth = i("verify.depth");
  v.horizon = i("verify.horizon");
  v.discount = d("verify.discount");
  v.node_budget = l("verify.node_budget");
  v.episodes = i("verify.episodes");
  if (v.networks < 1 || v.histories < 1 || v.max_length < 1 || v.depth < 0 || v.horizon < 0 || v.episodes < 1 ||
      v.node_budget < 1)
    throw Error(ErrorCode::config, "verify sizes must be positive");
  if (v.discount < 0.0 || v.discount >= 1.0) throw Error(ErrorCode::config, "verify.discount must lie in [0, 1)");

  r.out = get("run.out");
  return r;
}

std::string Settings::manifest() const {
  std::ostringstream os;
  std::string section;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      os << (section.empty() ? "" : "\n") << "[" << s << "]\n";
      section = s;
    }
    os << key.substr(dot + 1) << " = " << value << "\n";
  }
  return os.str();
}

std::string default_run_root() {
  const char* root = std::getenv("EQUIRL_RUN_ROOT");
  return root && *root ? root : "runs";
}

}  // namespace equirl
