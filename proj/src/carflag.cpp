#include "equirl/carflag.hpp"

#include <cstdlib>
#include <sstream>

namespace equirl {

void CarFlag1dConfig::validate() const {
  if (half_size < 2) throw Error(ErrorCode::config, "carflag1d half_size must be >= 2");
  if (std::abs(offset) >= half_size)
    throw Error(ErrorCode::config, "carflag1d |offset| must be < half_size");
  if (max_steps < 1) throw Error(ErrorCode::config, "max_steps must be >= 1");
}

void CarFlag2dConfig::validate() const {
  if (grid_size < 3 || grid_size % 2 == 0) throw Error(ErrorCode::config, "carflag2d grid_size must be odd and >= 3");
  if (info_radius < 0) throw Error(ErrorCode::config, "info_radius must be >= 0");
  const int c = grid_size / 2;
  if (c - info_radius < 0 || c + offset - info_radius < 0 || c + offset + info_radius >= grid_size)
    throw Error(ErrorCode::config, "information region leaves the grid");
  if (max_steps < 1) throw Error(ErrorCode::config, "max_steps must be >= 1");
}

bool CarFlag2dConfig::in_info_region(int row, int col) const {
  const int c = grid_size / 2;
  return std::abs(row - c) <= info_radius && std::abs(col - (c + offset)) <= info_radius;
}

void EnvConfig::validate() const {
  if (kind == EnvKind::carflag1d)
    carflag1d.validate();
  else
    carflag2d.validate();
}

std::string EnvConfig::name() const { return kind == EnvKind::carflag1d ? "carflag1d" : "carflag2d"; }

// ---------------------------------------------------------------------------

Vector Env::reset() {
  const auto& starts = start_states();
  std::uniform_int_distribution<size_t> pick(0, starts.size() - 1);
  state_ = starts[pick(rng_)];
  state_.steps = 0;
  return encode(state_);
}

StepResult Env::step(int action) {
  if (action < 0 || action >= num_actions())
    throw Error(ErrorCode::invalid_action, "action " + std::to_string(action) + " outside [0, " +
                                               std::to_string(num_actions()) + ")");
  EnvState next = move(state_, action);
  next.steps = state_.steps + 1;
  StepResult out;
  out.reward = reward(next, out.terminal, out.success);
  out.truncated = !out.terminal && next.steps > max_steps();
  state_ = next;
  out.observation = encode(state_);
  return out;
}

// ---------------------------------------------------------------------------

CarFlag1d::CarFlag1d(CarFlag1dConfig config, std::uint64_t seed) : Env(seed), config_(config) {
  config_.validate();
  for (int goal : {-1, 1})
    for (int x = -config_.half_size + 1; x < config_.half_size; ++x)
      if (x != config_.offset) starts_.push_back({x, goal, 0});
  state_ = starts_.front();
}

int CarFlag1d::side(const EnvState& s) const { return s.agent == config_.offset ? s.goal : 0; }

Vector CarFlag1d::encode(const EnvState& s) const {
  Vector v(2);
  v << static_cast<double>(s.agent) / config_.half_size, side(s);
  return v;
}

int CarFlag1d::observation_index(const EnvState& s) const { return (s.agent + config_.half_size) * 3 + side(s) + 1; }

int CarFlag1d::state_index(const EnvState& s) const { return (s.agent + config_.half_size) * 2 + (s.goal > 0); }

std::string CarFlag1d::describe(const EnvState& s) const {
  std::ostringstream os;
  os << "t=" << s.steps << " pos=" << s.agent << " goal=" << (s.goal > 0 ? "right" : "left") << " side=" << side(s);
  return os.str();
}

std::vector<EnvState> CarFlag1d::all_states() const {
  std::vector<EnvState> out;
  for (int x = -config_.half_size; x <= config_.half_size; ++x)
    for (int goal : {-1, 1}) out.push_back({x, goal, 0});
  return out;
}

EnvState CarFlag1d::move(const EnvState& s, int action) const {
  EnvState n = s;
  n.agent = std::clamp(s.agent + (action == carflag1d::right ? 1 : -1), -config_.half_size, config_.half_size);
  return n;
}

double CarFlag1d::reward(const EnvState& next, bool& terminal, bool& success) const {
  terminal = std::abs(next.agent) == config_.half_size;
  success = terminal && next.agent == next.goal * config_.half_size;
  if (!terminal) return config_.step_reward;
  return success ? config_.goal_reward : config_.red_reward;
}

// ---------------------------------------------------------------------------

CarFlag2d::CarFlag2d(CarFlag2dConfig config, std::uint64_t seed) : Env(seed), config_(config) {
  config_.validate();
  const int n = config_.grid_size;
  for (int a = 0; a < cells(); ++a) {
    if (config_.in_info_region(a / n, a % n)) continue;
    for (int g = 0; g < cells(); ++g) {
      if (config_.in_info_region(g / n, g % n)) continue;
      if (std::abs(a / n - g / n) + std::abs(a % n - g % n) >= 2) starts_.push_back({a, g, 0});
    }
  }
  if (starts_.empty()) throw Error(ErrorCode::placement, "no valid agent/goal placement");
  state_ = starts_.front();
}

bool CarFlag2d::goal_visible(const EnvState& s) const {
  return config_.in_info_region(s.agent / config_.grid_size, s.agent % config_.grid_size);
}

Vector CarFlag2d::encode(const EnvState& s) const {
  Vector v = Vector::Zero(2 * cells());
  v(s.agent) = 1.0;
  if (goal_visible(s)) v(cells() + s.goal) = 1.0;
  return v;
}

int CarFlag2d::observation_index(const EnvState& s) const {
  return s.agent * (cells() + 1) + (goal_visible(s) ? s.goal + 1 : 0);
}

int CarFlag2d::state_index(const EnvState& s) const { return s.agent * cells() + s.goal; }

std::string CarFlag2d::describe(const EnvState& s) const {
  const int n = config_.grid_size;
  std::ostringstream os;
  os << "t=" << s.steps << " agent=(" << s.agent / n << "," << s.agent % n << ") goal=(" << s.goal / n << ","
     << s.goal % n << ")" << (goal_visible(s) ? " visible" : "");
  return os.str();
}

std::vector<EnvState> CarFlag2d::all_states() const {
  std::vector<EnvState> out;
  for (int a = 0; a < cells(); ++a)
    for (int g = 0; g < cells(); ++g) out.push_back({a, g, 0});
  return out;
}

EnvState CarFlag2d::move(const EnvState& s, int action) const {
  static constexpr int dr[] = {0, -1, 0, 1};
  static constexpr int dc[] = {1, 0, -1, 0};
  const int n = config_.grid_size;
  const int r = std::clamp(s.agent / n + dr[action], 0, n - 1);
  const int c = std::clamp(s.agent % n + dc[action], 0, n - 1);
  EnvState next = s;
  next.agent = r * n + c;
  return next;
}

double CarFlag2d::reward(const EnvState& next, bool& terminal, bool& success) const {
  terminal = success = next.agent == next.goal;
  return success ? config_.goal_reward : 0.0;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Env> make_env(const EnvConfig& config, std::uint64_t seed) {
  if (config.kind == EnvKind::carflag1d) return std::make_unique<CarFlag1d>(config.carflag1d, seed);
  return std::make_unique<CarFlag2d>(config.carflag2d, seed);
}

std::uint64_t env_seed(std::uint64_t seed, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x9e3779b9u};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

EnvSymmetry env_symmetry(const EnvConfig& config) {
  if (config.kind == EnvKind::carflag1d) {
    const Group g = Group::reflection();
    const Representation s = Representation::sign(g);
    return {g, direct_sum({s, s}), Representation::regular(g), {s, s}, 0};
  }
  const Group g = Group::cyclic(4);
  const Representation t = Representation::trivial(g);
  const int n = config.carflag2d.grid_size;
  return {g, Representation::grid(direct_sum({t, t}), n, n), Representation::regular(g), {t, t}, n};
}

EnvState act_on_state(const EnvConfig& config, int g, const EnvState& s) {
  EnvState out = s;
  if (config.kind == EnvKind::carflag1d) {
    Group::reflection().check_element(g);
    if (g == 1) {
      out.agent = -s.agent;
      out.goal = -s.goal;
    }
    return out;
  }
  const int n = config.carflag2d.grid_size;
  const auto map = grid_pixel_map(Group::cyclic(4), g, n, n);
  out.agent = map[s.agent];
  out.goal = map[s.goal];
  return out;
}

int act_on_action(const EnvConfig& config, int g, int action) {
  if (config.kind == EnvKind::carflag1d) {
    Group::reflection().check_element(g);
    return g == 1 ? 1 - action : action;
  }
  Group::cyclic(4).check_element(g);
  return (action + g) % 4;
}

int act_on_observation_index(const EnvConfig& config, int g, int o) {
  if (config.kind == EnvKind::carflag1d) {
    Group::reflection().check_element(g);
    if (g == 0) return o;
    const int h = config.carflag1d.half_size;
    const int pos = o / 3 - h, side = o % 3 - 1;
    return (-pos + h) * 3 + (-side + 1);
  }
  const int n = config.carflag2d.grid_size;
  const int cells = n * n;
  const auto map = grid_pixel_map(Group::cyclic(4), g, n, n);
  const int agent = o / (cells + 1), goal = o % (cells + 1);
  return map[agent] * (cells + 1) + (goal == 0 ? 0 : map[goal - 1] + 1);
}

ExportedPomdp export_pomdp(const EnvConfig& config, double discount, int max_states) {
  config.validate();
  const auto env = make_env(config, 0);
  const int S = env->num_state_indices(), A = env->num_actions(), O = env->num_observation_indices();
  if (S > max_states)
    throw Error(ErrorCode::budget, config.name() + " export has " + std::to_string(S) + " states, limit " +
                                       std::to_string(max_states));
  Pomdp p(S, A, O, discount);
  for (const EnvState& s : env->all_states()) {
    const int si = env->state_index(s);
    const int oi = env->observation_index(s);
    p.O0(si, oi) = 1.0;
    for (int a = 0; a < A; ++a) p.O(a, si, oi) = 1.0;
    bool ended = false, success = false;
    (void)env->reward(s, ended, success);
    for (int a = 0; a < A; ++a) {
      if (ended) {
        p.T(si, a, si) = 1.0;
        continue;
      }
      const EnvState next = env->move(s, a);
      bool terminal = false;
      p.T(si, a, env->state_index(next)) = 1.0;
      p.R(si, a) = env->reward(next, terminal, success);
    }
  }
  const auto& starts = env->start_states();
  for (const EnvState& s : starts) p.b0[env->state_index(s)] += 1.0 / static_cast<double>(starts.size());

  const EnvSymmetry sym = env_symmetry(config);
  GroupActionBinding bind{sym.group, {}, {}, {}};
  const auto states = env->all_states();
  for (int g = 0; g < sym.group.order(); ++g) {
    std::vector<int> sm(S), am(A), om(O);
    for (const EnvState& s : states) sm[env->state_index(s)] = env->state_index(act_on_state(config, g, s));
    for (int a = 0; a < A; ++a) am[a] = act_on_action(config, g, a);
    for (int o = 0; o < O; ++o) om[o] = act_on_observation_index(config, g, o);
    bind.state_map.push_back(std::move(sm));
    bind.action_map.push_back(std::move(am));
    bind.obs_map.push_back(std::move(om));
  }
  bind.validate(p);
  return {std::move(p), std::move(bind)};
}

}  // namespace equirl
