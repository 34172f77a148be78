#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "equirl/autodiff.hpp"
#include "equirl/carflag.hpp"
#include "equirl/equivariant.hpp"

namespace equirl {

enum class NetworkVariant { equi, plain, equi_actor_only, equi_critic_only };

NetworkVariant parse_variant(const std::string& name);
std::string to_string(NetworkVariant v);

struct NetworkConfig {
  NetworkVariant variant = NetworkVariant::equi;
  int hidden_fields = 16;  ///< regular fields in the LSTM state and head hidden layer
  int conv_fields = 8;     ///< regular fields per 3x3 conv layer (2D only)
  int conv_layers = 2;     ///< 3x3 padding-1 layers before the full-extent conv (2D only)
  InitMode lstm_init = InitMode::zero;
  bool candidate_tanh_twice = true;
};

/// Recurrent state of both towers, batch x hidden_dim each.
struct NetState {
  Matrix actor_h, actor_c, critic_h, critic_c;
};

/// Actor and critic towers, each: [conv extractor (2D)] -> LSTM -> outputter.
/// The actor ends in the action representation, the critic in the trivial one.
class PolicyNetwork {
 public:
  PolicyNetwork(const EnvConfig& env, const NetworkConfig& config, std::mt19937_64& rng);
  PolicyNetwork(const PolicyNetwork&) = delete;
  PolicyNetwork& operator=(const PolicyNetwork&) = delete;

  struct Tower;
  /// Weights realized on one tape; valid while that tape lives.
  struct Bound {
    Tape* tape = nullptr;
    std::vector<Linear::Realized> actor_convs, critic_convs;
    Linear::Realized actor_gates, critic_gates;
    Head::Realized actor_head, critic_head;
  };
  struct Output {
    Var logits;  ///< batch x |A|
    Var value;   ///< batch x 1
    LstmState actor, critic;
  };

  Bound bind(Tape& tape);
  Output step(const Bound& bound, const Var& observation, const LstmState& actor, const LstmState& critic);

  /// Fresh episode state for `batch` rows (zero, or random per row).
  NetState initial_state(int batch, std::mt19937_64& rng) const;

  std::vector<Parameter*> parameters();
  const EnvSymmetry& symmetry() const { return symmetry_; }
  const NetworkConfig& config() const { return config_; }
  int observation_dim() const { return obs_dim_; }
  int num_actions() const { return num_actions_; }
  int hidden_dim() const;

  ~PolicyNetwork();

 private:
  EnvSymmetry symmetry_;
  NetworkConfig config_;
  int obs_dim_;
  int num_actions_;
  std::unique_ptr<Tower> actor_, critic_;
};

/// Runs the network from its initial state over each observation sequence and
/// its g-transforms; residuals of logits vs rho_a(g) logits and of values.
struct EquivarianceReport {
  double max_actor_residual = 0.0;
  double max_critic_residual = 0.0;
  size_t sequences = 0;
  double max_residual() const { return std::max(max_actor_residual, max_critic_residual); }
};

EquivarianceReport check_policy_equivariance(PolicyNetwork& net, const std::vector<std::vector<Vector>>& sequences,
                                             std::mt19937_64& rng);

/// Observation sequences of random-action episodes (length 1..max_length).
std::vector<std::vector<Vector>> random_histories(const EnvConfig& env, int count, int max_length,
                                                  std::mt19937_64& rng);

struct AgentConfig {
  NetworkConfig network;
  int num_envs = 16;
  int n_steps = 5;
  double gamma = 0.99;
  OptimizerConfig optimizer;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double max_grad_norm = 0.5;
  long total_steps = 300000;
  long eval_interval = 10000;
  int eval_episodes = 100;
  bool eval_greedy = false;
  std::uint64_t seed = 0;
  std::optional<double> stop_at_success;  ///< end at the first evaluation reaching this rate

  void validate() const;
};

struct RolloutBatch {
  int steps = 0;
  int envs = 0;
  std::vector<Matrix> observations;        ///< [t] envs x obs_dim
  std::vector<std::vector<int>> actions;   ///< [t][env]
  Matrix rewards, terminal, truncated;     ///< steps x envs (flags are 0/1)
  Matrix values, log_probs, entropies;     ///< steps x envs, recorded at collection
  Matrix truncation_values;                ///< steps x envs: V of the final observation where truncated
  Vector bootstrap;                        ///< envs: V of the observation after the segment
  NetState start;                          ///< carried state at the segment start
  std::vector<NetState> resets;            ///< [t] fresh states used for rows done at t
  std::vector<double> episode_returns;     ///< episodes finished in this segment
  std::vector<bool> episode_successes;
};

/// Parallel envs plus the per-env recurrent state carried across segments.
class RolloutWorker {
 public:
  RolloutWorker(const EnvConfig& env, int num_envs, std::uint64_t seed, PolicyNetwork& net);

  int num_envs() const { return static_cast<int>(envs_.size()); }
  Env& env(int i) { return *envs_[i]; }
  const Matrix& observations() const { return obs_; }
  const NetState& state() const { return state_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  friend RolloutBatch collect_rollouts(PolicyNetwork&, RolloutWorker&, int);
  std::vector<std::unique_ptr<Env>> envs_;
  Matrix obs_;
  NetState state_;
  std::vector<double> running_return_;
  std::mt19937_64 rng_;
};

RolloutBatch collect_rollouts(PolicyNetwork& net, RolloutWorker& worker, int n_steps);

struct ReturnTargets {
  Matrix returns;     ///< steps x envs
  Matrix advantages;  ///< returns - recorded values
};

/// G_t = r_t + gamma * (0 if terminal, V(final obs) if truncated, else G_{t+1}),
/// with G after the last step = bootstrap.
ReturnTargets compute_returns(const RolloutBatch& batch, double gamma);

struct LossTerms {
  Var total;
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
};

/// Replays the segment from batch.start with gradients and builds
/// -mean(A log pi) + c_v mean((G - V)^2) - c_e mean(H).
LossTerms a2c_loss(Tape& tape, PolicyNetwork& net, const RolloutBatch& batch, const ReturnTargets& targets,
                   const AgentConfig& config);

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double grad_norm = 0.0;
};

UpdateStats a2c_update(PolicyNetwork& net, Optimizer& optimizer, const RolloutBatch& batch, const AgentConfig& config);

struct EvalResult {
  double success_rate = 0.0;
  double mean_return = 0.0;
  int episodes = 0;
};

/// Runs `episodes` fresh episodes in lockstep. `transform` applies group
/// element g to every reset (paired evaluation); 0 is the plain env.
EvalResult evaluate(PolicyNetwork& net, const EnvConfig& env, int episodes, bool greedy, std::uint64_t seed,
                    int transform = 0);

/// Plays the greedy policy of an exact history-tree solution (lowest action
/// index among ties) in the simulator. Episodes longer than the solved horizon
/// fall back to action 0.
EvalResult evaluate_exact(const ExactQ& solved, const EnvConfig& env, int episodes, std::uint64_t seed);

struct CurveRow {
  long step = 0;
  long episodes = 0;
  double success_rate = 0.0;
  double mean_return = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  std::uint64_t seed = 0;
};

std::string curve_header();
std::string format_curve_row(const CurveRow& row);

struct TrainResult {
  std::vector<CurveRow> curve;
  std::optional<long> steps_to(double success) const;
};

/// Parses a curve CSV written by train; throws parse on a bad header or row.
std::vector<CurveRow> read_curve(const std::string& path);

/// Success and return across seeds at one eval step (population std).
struct AggregateRow {
  long step = 0;
  int seeds = 0;
  double success_mean = 0.0, success_std = 0.0;
  double return_mean = 0.0, return_std = 0.0;
};

std::string aggregate_header();
std::string format_aggregate_row(const AggregateRow& row);
/// Throws alignment unless every curve has the same eval steps.
std::vector<AggregateRow> aggregate_curves(const std::vector<std::vector<CurveRow>>& curves);

/// Alternates collection and updates; evaluates every eval_interval env steps
/// and at the end. With out_dir set, writes curve.csv (rows flushed as they are
/// produced), best.ckpt and final.ckpt.
TrainResult train(const EnvConfig& env, const AgentConfig& config, const std::string& out_dir = "",
                  const std::function<void(const CurveRow&)>& on_eval = {});

}  // namespace equirl
