#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "equirl/equivariant.hpp"
#include "equirl/pomdp.hpp"

namespace equirl {

/// Car on the integer line [-H, H]; green and red flags at the two ends, the
/// goal side is revealed only at the information cell (position = offset).
struct CarFlag1dConfig {
  int half_size = 25;
  int offset = 0;
  int max_steps = 50;
  double step_reward = -0.01;
  double goal_reward = 1.0;
  double red_reward = -1.0;

  void validate() const;
};

/// Agent and goal on an N x N grid. The goal is visible only while the agent
/// stands in the information region: a (2r+1)^2 square centred on the middle
/// cell, shifted `offset` columns.
struct CarFlag2dConfig {
  int grid_size = 7;
  int offset = 0;
  int info_radius = 0;
  int max_steps = 50;
  double goal_reward = 1.0;

  void validate() const;
  bool in_info_region(int row, int col) const;
};

enum class EnvKind { carflag1d, carflag2d };

struct EnvConfig {
  EnvKind kind = EnvKind::carflag1d;
  CarFlag1dConfig carflag1d;
  CarFlag2dConfig carflag2d;

  void validate() const;
  std::string name() const;
};

/// 1D: agent = position, goal = +1 or -1 (side of the green flag).
/// 2D: agent and goal are flat cells row * N + col.
struct EnvState {
  int agent = 0;
  int goal = 0;
  int steps = 0;

  bool operator==(const EnvState&) const = default;
};

struct StepResult {
  Vector observation;
  double reward = 0.0;
  bool terminal = false;   ///< a flag or the goal was reached
  bool truncated = false;  ///< step limit exceeded without terminating
  bool success = false;    ///< terminal at the goal

  bool done() const { return terminal || truncated; }
};

namespace carflag1d {
inline constexpr int left = 0;
inline constexpr int right = 1;
}  // namespace carflag1d

namespace carflag2d {
inline constexpr int right = 0;
inline constexpr int up = 1;
inline constexpr int left = 2;
inline constexpr int down = 3;
}  // namespace carflag2d

class Env {
 public:
  explicit Env(std::uint64_t seed) : rng_(seed) {}
  virtual ~Env() = default;

  virtual int observation_dim() const = 0;
  virtual int num_actions() const = 0;
  /// Number of discrete observations / states of the exported tables.
  virtual int num_observation_indices() const = 0;
  virtual int num_state_indices() const = 0;

  /// Samples a start state from the env's own stream.
  Vector reset();
  void reseed(std::uint64_t seed) { rng_.seed(seed); }
  /// Throws invalid_action for an action outside the action set.
  StepResult step(int action);

  Vector observe() const { return encode(state_); }
  int observation_index() const { return observation_index(state_); }
  int state_index() const { return state_index(state_); }

  const EnvState& state() const { return state_; }
  void set_state(const EnvState& s) { state_ = s; }

  virtual Vector encode(const EnvState& s) const = 0;
  virtual int observation_index(const EnvState& s) const = 0;
  virtual int state_index(const EnvState& s) const = 0;
  virtual std::string describe(const EnvState& s) const = 0;

  /// Start states; reset draws one uniformly.
  virtual const std::vector<EnvState>& start_states() const = 0;
  /// Every state in state_index order (step counter 0).
  virtual std::vector<EnvState> all_states() const = 0;
  /// Moves the agent without touching the step counter.
  virtual EnvState move(const EnvState& s, int action) const = 0;
  /// Reward for arriving in `next`; sets whether the episode terminates there.
  virtual double reward(const EnvState& next, bool& terminal, bool& success) const = 0;
  virtual int max_steps() const = 0;

 protected:
  EnvState state_;

 private:
  std::mt19937_64 rng_;
};

class CarFlag1d : public Env {
 public:
  CarFlag1d(CarFlag1dConfig config, std::uint64_t seed);

  int observation_dim() const override { return 2; }
  int num_actions() const override { return 2; }
  int num_observation_indices() const override { return (2 * config_.half_size + 1) * 3; }
  int num_state_indices() const override { return (2 * config_.half_size + 1) * 2; }

  /// [position / H, side]; side is +-1 at the information cell, else 0.
  Vector encode(const EnvState& s) const override;
  /// (position + H) * 3 + (side + 1).
  int observation_index(const EnvState& s) const override;
  /// (position + H) * 2 + (goal > 0).
  int state_index(const EnvState& s) const override;
  std::string describe(const EnvState& s) const override;

  const std::vector<EnvState>& start_states() const override { return starts_; }
  std::vector<EnvState> all_states() const override;
  EnvState move(const EnvState& s, int action) const override;
  double reward(const EnvState& next, bool& terminal, bool& success) const override;
  int max_steps() const override { return config_.max_steps; }

  int side(const EnvState& s) const;
  const CarFlag1dConfig& config() const { return config_; }

 private:
  CarFlag1dConfig config_;
  std::vector<EnvState> starts_;
};

class CarFlag2d : public Env {
 public:
  CarFlag2d(CarFlag2dConfig config, std::uint64_t seed);

  int observation_dim() const override { return 2 * cells(); }
  int num_actions() const override { return 4; }
  /// agent cell x (goal hidden, or visible at one of N^2 cells).
  int num_observation_indices() const override { return cells() * (cells() + 1); }
  int num_state_indices() const override { return cells() * cells(); }

  /// Channel-major 2 x N x N image: agent one-hot, then goal one-hot when visible.
  Vector encode(const EnvState& s) const override;
  /// agent * (N^2 + 1) + (visible ? goal + 1 : 0).
  int observation_index(const EnvState& s) const override;
  /// agent * N^2 + goal.
  int state_index(const EnvState& s) const override;
  std::string describe(const EnvState& s) const override;

  /// Agent and goal at Manhattan distance >= 2, both outside the information region.
  const std::vector<EnvState>& start_states() const override { return starts_; }
  std::vector<EnvState> all_states() const override;
  EnvState move(const EnvState& s, int action) const override;
  double reward(const EnvState& next, bool& terminal, bool& success) const override;
  int max_steps() const override { return config_.max_steps; }

  bool goal_visible(const EnvState& s) const;
  int cells() const { return config_.grid_size * config_.grid_size; }
  const CarFlag2dConfig& config() const { return config_; }

 private:
  CarFlag2dConfig config_;
  std::vector<EnvState> starts_;
};

std::unique_ptr<Env> make_env(const EnvConfig& config, std::uint64_t seed);

/// Per-env stream seed derived from the run seed and the env index.
std::uint64_t env_seed(std::uint64_t seed, int index);

/// The symmetry group of the symmetric variant and how it acts on the network's
/// observation vector and action logits.
struct EnvSymmetry {
  Group group = Group::cyclic(1);
  Representation observation;  ///< on the encoded observation vector
  Representation action;       ///< on the action logits
  FieldType input_fields;      ///< 1D: [sign, sign]; 2D: per-pixel channels [trivial, trivial]
  int grid_size = 0;           ///< 0 for non-spatial observations
};

EnvSymmetry env_symmetry(const EnvConfig& config);
EnvState act_on_state(const EnvConfig& config, int g, const EnvState& s);
int act_on_action(const EnvConfig& config, int g, int action);
/// The same action on the discrete observation index of the exported tables.
int act_on_observation_index(const EnvConfig& config, int g, int observation);

struct ExportedPomdp {
  Pomdp pomdp;
  GroupActionBinding binding;
};

/// Explicit tables of the env's step/reset semantics (no step counter: states
/// where the episode has ended are absorbing with zero reward). The binding is
/// the symmetric variant's group action regardless of the offset.
ExportedPomdp export_pomdp(const EnvConfig& config, double discount = 0.99, int max_states = 20000);

}  // namespace equirl
