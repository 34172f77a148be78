#include "equirl/agent.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace equirl {

NetworkVariant parse_variant(const std::string& name) {
  if (name == "equi") return NetworkVariant::equi;
  if (name == "plain") return NetworkVariant::plain;
  if (name == "equi-actor-only") return NetworkVariant::equi_actor_only;
  if (name == "equi-critic-only") return NetworkVariant::equi_critic_only;
  throw Error(ErrorCode::config, "unknown network variant '" + name + "'");
}

std::string to_string(NetworkVariant v) {
  switch (v) {
    case NetworkVariant::equi: return "equi";
    case NetworkVariant::plain: return "plain";
    case NetworkVariant::equi_actor_only: return "equi-actor-only";
    case NetworkVariant::equi_critic_only: return "equi-critic-only";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Network

struct PolicyNetwork::Tower {
  std::vector<std::unique_ptr<Conv2d>> convs;
  std::unique_ptr<LstmCell> lstm;
  std::unique_ptr<Head> head;

  Tower(const std::string& name, const EnvSymmetry& sym, const NetworkConfig& cfg, const FieldType& out,
        Constraint constraint, std::mt19937_64& rng) {
    const Representation reg = Representation::regular(sym.group);
    const FieldType hidden = repeat(reg, cfg.hidden_fields);
    FieldType lstm_in = sym.input_fields;
    if (sym.grid_size > 0) {
      const int n = sym.grid_size;
      FieldType in = sym.input_fields;
      for (int l = 0; l < cfg.conv_layers; ++l) {
        const FieldType conv_out = repeat(reg, cfg.conv_fields);
        convs.push_back(std::make_unique<Conv2d>(name + ".conv" + std::to_string(l), in, conv_out, 3, 1, n, n,
                                                 constraint, rng));
        in = conv_out;
      }
      // Full-extent kernel collapses the grid to a single pixel of hidden fields.
      convs.push_back(std::make_unique<Conv2d>(name + ".conv" + std::to_string(cfg.conv_layers), in, hidden, n, 0, n,
                                               n, constraint, rng));
      lstm_in = hidden;
    }
    lstm = std::make_unique<LstmCell>(name + ".lstm", lstm_in, hidden, constraint, rng, cfg.candidate_tanh_twice);
    head = std::make_unique<Head>(name + ".head", hidden, hidden, out, constraint, rng);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& c : convs)
      for (auto* p : c->parameters()) out.push_back(p);
    for (auto* p : lstm->parameters()) out.push_back(p);
    for (auto* p : head->parameters()) out.push_back(p);
    return out;
  }

  std::pair<Var, LstmState> step(std::vector<Linear::Realized> const& conv_w, const Linear::Realized& gates,
                                 const Head::Realized& head_w, const Var& obs, const LstmState& state) {
    Var x = obs;
    for (size_t i = 0; i < convs.size(); ++i) x = ad::relu(convs[i]->apply(conv_w[i], x));
    const LstmState next = lstm->step(gates, x, state);
    return {Head::apply(head_w, next.h), next};
  }
};

PolicyNetwork::PolicyNetwork(const EnvConfig& env, const NetworkConfig& config, std::mt19937_64& rng)
    : symmetry_(env_symmetry(env)), config_(config) {
  env.validate();
  if (config.hidden_fields < 1 || (symmetry_.grid_size > 0 && config.conv_layers > 0 && config.conv_fields < 1))
    throw Error(ErrorCode::config, "network widths must be positive");
  if (config.conv_layers < 0) throw Error(ErrorCode::config, "conv_layers must be >= 0");
  const auto probe = make_env(env, 0);
  obs_dim_ = probe->observation_dim();
  num_actions_ = probe->num_actions();
  const bool equi_actor = config.variant == NetworkVariant::equi || config.variant == NetworkVariant::equi_actor_only;
  const bool equi_critic = config.variant == NetworkVariant::equi || config.variant == NetworkVariant::equi_critic_only;
  auto constraint = [](bool e) { return e ? Constraint::equivariant : Constraint::dense; };
  actor_ = std::make_unique<Tower>("actor", symmetry_, config, FieldType{symmetry_.action}, constraint(equi_actor), rng);
  critic_ = std::make_unique<Tower>("critic", symmetry_, config, FieldType{Representation::trivial(symmetry_.group)},
                                    constraint(equi_critic), rng);
}

PolicyNetwork::~PolicyNetwork() = default;

int PolicyNetwork::hidden_dim() const { return actor_->lstm->hidden_dim(); }

std::vector<Parameter*> PolicyNetwork::parameters() {
  auto out = actor_->parameters();
  for (auto* p : critic_->parameters()) out.push_back(p);
  return out;
}

PolicyNetwork::Bound PolicyNetwork::bind(Tape& tape) {
  Bound b;
  b.tape = &tape;
  for (auto& c : actor_->convs) b.actor_convs.push_back(c->patch_linear().realize(tape));
  for (auto& c : critic_->convs) b.critic_convs.push_back(c->patch_linear().realize(tape));
  b.actor_gates = actor_->lstm->gates().realize(tape);
  b.critic_gates = critic_->lstm->gates().realize(tape);
  b.actor_head = actor_->head->realize(tape);
  b.critic_head = critic_->head->realize(tape);
  return b;
}

PolicyNetwork::Output PolicyNetwork::step(const Bound& b, const Var& obs, const LstmState& actor,
                                          const LstmState& critic) {
  if (obs.cols() != obs_dim_)
    throw Error(ErrorCode::shape, "observation has " + std::to_string(obs.cols()) + " features, expected " +
                                      std::to_string(obs_dim_));
  auto [logits, a] = actor_->step(b.actor_convs, b.actor_gates, b.actor_head, obs, actor);
  auto [value, c] = critic_->step(b.critic_convs, b.critic_gates, b.critic_head, obs, critic);
  return {logits, value, a, c};
}

NetState PolicyNetwork::initial_state(int batch, std::mt19937_64& rng) const {
  auto [ah, ac] = equirl::initial_state(batch, hidden_dim(), config_.lstm_init, rng);
  auto [ch, cc] = equirl::initial_state(batch, critic_->lstm->hidden_dim(), config_.lstm_init, rng);
  return {ah, ac, ch, cc};
}

// ---------------------------------------------------------------------------
// Equivariance suite

EquivarianceReport check_policy_equivariance(PolicyNetwork& net, const std::vector<std::vector<Vector>>& sequences,
                                             std::mt19937_64& rng) {
  const auto& sym = net.symmetry();
  const int k = sym.group.order();
  std::vector<Matrix> rho_obs(k), rho_act(k);
  for (int g = 0; g < k; ++g) {
    rho_obs[g] = sym.observation.matrix(g);
    rho_act[g] = sym.action.matrix(g);
  }
  EquivarianceReport rep;
  for (const auto& seq : sequences) {
    ++rep.sequences;
    // Row g carries the g-transformed sequence; every row starts from the same state.
    const NetState one = net.initial_state(1, rng);
    auto tile = [k](const Matrix& m) { return m.replicate(k, 1).eval(); };
    Tape tape;
    const auto bound = net.bind(tape);
    LstmState a{tape.constant(tile(one.actor_h)), tape.constant(tile(one.actor_c))};
    LstmState c{tape.constant(tile(one.critic_h)), tape.constant(tile(one.critic_c))};
    for (const Vector& o : seq) {
      Matrix obs(k, o.size());
      for (int g = 0; g < k; ++g) obs.row(g) = (rho_obs[g] * o).transpose();
      const auto out = net.step(bound, tape.constant(obs), a, c);
      const Matrix& logits = out.logits.value();
      const Matrix& values = out.value.value();
      const Vector base = logits.row(0).transpose();
      for (int g = 1; g < k; ++g) {
        rep.max_actor_residual =
            std::max(rep.max_actor_residual, (logits.row(g).transpose() - rho_act[g] * base).cwiseAbs().maxCoeff());
        rep.max_critic_residual = std::max(rep.max_critic_residual, std::abs(values(g, 0) - values(0, 0)));
      }
      a = out.actor;
      c = out.critic;
    }
  }
  return rep;
}

std::vector<std::vector<Vector>> random_histories(const EnvConfig& env, int count, int max_length,
                                                  std::mt19937_64& rng) {
  std::vector<std::vector<Vector>> out;
  std::uniform_int_distribution<int> len(1, max_length);
  for (int i = 0; i < count; ++i) {
    auto e = make_env(env, rng());
    std::vector<Vector> seq{e->reset()};
    const int n = len(rng);
    std::uniform_int_distribution<int> act(0, e->num_actions() - 1);
    while (static_cast<int>(seq.size()) < n) {
      const auto r = e->step(act(rng));
      seq.push_back(r.observation);
      if (r.done()) break;
    }
    out.push_back(std::move(seq));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rollouts

void AgentConfig::validate() const {
  if (gamma < 0.0 || gamma >= 1.0) throw Error(ErrorCode::config, "gamma must lie in [0, 1)");
  if (value_coef < 0.0 || entropy_coef < 0.0) throw Error(ErrorCode::config, "loss coefficients must be >= 0");
  if (num_envs < 1 || n_steps < 1) throw Error(ErrorCode::config, "num_envs and n_steps must be >= 1");
  if (total_steps < 0 || eval_interval < 1 || eval_episodes < 1)
    throw Error(ErrorCode::config, "steps, eval interval and eval episodes must be positive");
  if (max_grad_norm <= 0.0) throw Error(ErrorCode::config, "max_grad_norm must be > 0");
  if (optimizer.learning_rate <= 0.0) throw Error(ErrorCode::config, "learning rate must be > 0");
}

RolloutWorker::RolloutWorker(const EnvConfig& env, int num_envs, std::uint64_t seed, PolicyNetwork& net)
    : rng_(env_seed(seed, -1)) {
  for (int i = 0; i < num_envs; ++i) envs_.push_back(make_env(env, env_seed(seed, i)));
  obs_.resize(num_envs, envs_.front()->observation_dim());
  for (int i = 0; i < num_envs; ++i) obs_.row(i) = envs_[i]->reset().transpose();
  state_ = net.initial_state(num_envs, rng_);
  running_return_.assign(num_envs, 0.0);
}

namespace {

int sample(const Eigen::RowVectorXd& logp, double u) {
  double acc = 0.0;
  for (Eigen::Index a = 0; a < logp.size(); ++a) {
    acc += std::exp(logp(a));
    if (u < acc) return static_cast<int>(a);
  }
  return static_cast<int>(logp.size()) - 1;
}

void overwrite_rows(NetState& s, const NetState& fresh, const std::vector<int>& rows) {
  for (int r : rows) {
    s.actor_h.row(r) = fresh.actor_h.row(r);
    s.actor_c.row(r) = fresh.actor_c.row(r);
    s.critic_h.row(r) = fresh.critic_h.row(r);
    s.critic_c.row(r) = fresh.critic_c.row(r);
  }
}

}  // namespace

RolloutBatch collect_rollouts(PolicyNetwork& net, RolloutWorker& w, int n_steps) {
  const int B = w.num_envs();
  RolloutBatch b;
  b.steps = n_steps;
  b.envs = B;
  b.start = w.state_;
  b.rewards = b.terminal = b.truncated = Matrix::Zero(n_steps, B);
  b.values = b.log_probs = b.entropies = b.truncation_values = Matrix::Zero(n_steps, B);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Tape tape;
  const auto bound = net.bind(tape);
  NetState state = w.state_;
  for (int t = 0; t < n_steps; ++t) {
    b.observations.push_back(w.obs_);
    const auto out = net.step(bound, tape.constant(w.obs_), {tape.constant(state.actor_h), tape.constant(state.actor_c)},
                              {tape.constant(state.critic_h), tape.constant(state.critic_c)});
    const Matrix logp = ad::log_softmax(out.logits).value();
    std::vector<int> actions(B);
    for (int e = 0; e < B; ++e) {
      actions[e] = sample(logp.row(e), unif(w.rng_));
      b.log_probs(t, e) = logp(e, actions[e]);
      b.entropies(t, e) = -(logp.row(e).array().exp() * logp.row(e).array()).sum();
      b.values(t, e) = out.value.value()(e, 0);
    }
    b.actions.push_back(actions);
    state = {out.actor.h.value(), out.actor.c.value(), out.critic.h.value(), out.critic.c.value()};

    std::vector<int> done, truncated;
    Matrix final_obs = w.obs_;
    for (int e = 0; e < B; ++e) {
      StepResult r;
      try {
        r = w.envs_[e]->step(actions[e]);
      } catch (const Error& err) {
        throw Error(err.code(), "env " + std::to_string(e) + ": " + err.what());
      }
      b.rewards(t, e) = r.reward;
      b.terminal(t, e) = r.terminal;
      b.truncated(t, e) = r.truncated;
      w.obs_.row(e) = r.observation.transpose();
      final_obs.row(e) = r.observation.transpose();
      w.running_return_[e] += r.reward;
      if (r.done()) {
        done.push_back(e);
        b.episode_returns.push_back(w.running_return_[e]);
        b.episode_successes.push_back(r.success);
        w.running_return_[e] = 0.0;
      }
      if (r.truncated) truncated.push_back(e);
    }
    if (!truncated.empty()) {
      const auto tail = net.step(bound, tape.constant(final_obs), {tape.constant(state.actor_h), tape.constant(state.actor_c)},
                                 {tape.constant(state.critic_h), tape.constant(state.critic_c)});
      for (int e : truncated) b.truncation_values(t, e) = tail.value.value()(e, 0);
    }
    NetState fresh = net.initial_state(B, w.rng_);
    for (int e : done) w.obs_.row(e) = w.envs_[e]->reset().transpose();
    overwrite_rows(state, fresh, done);
    b.resets.push_back(std::move(fresh));
  }
  const auto last = net.step(bound, tape.constant(w.obs_), {tape.constant(state.actor_h), tape.constant(state.actor_c)},
                             {tape.constant(state.critic_h), tape.constant(state.critic_c)});
  b.bootstrap = last.value.value().col(0);
  w.state_ = state;
  return b;
}

ReturnTargets compute_returns(const RolloutBatch& b, double gamma) {
  ReturnTargets out{Matrix::Zero(b.steps, b.envs), Matrix::Zero(b.steps, b.envs)};
  for (int e = 0; e < b.envs; ++e) {
    double next = b.bootstrap(e);
    for (int t = b.steps - 1; t >= 0; --t) {
      double cont = next;
      if (b.terminal(t, e) != 0.0) cont = 0.0;
      else if (b.truncated(t, e) != 0.0) cont = b.truncation_values(t, e);
      next = b.rewards(t, e) + gamma * cont;
      out.returns(t, e) = next;
    }
  }
  out.advantages = out.returns - b.values;
  return out;
}

// ---------------------------------------------------------------------------
// Update

LossTerms a2c_loss(Tape& tape, PolicyNetwork& net, const RolloutBatch& b, const ReturnTargets& targets,
                   const AgentConfig& cfg) {
  const auto bound = net.bind(tape);
  LstmState a{tape.constant(b.start.actor_h), tape.constant(b.start.actor_c)};
  LstmState c{tape.constant(b.start.critic_h), tape.constant(b.start.critic_c)};
  Var pg, vl, ent;
  for (int t = 0; t < b.steps; ++t) {
    const auto out = net.step(bound, tape.constant(b.observations[t]), a, c);
    const Var logp = ad::log_softmax(out.logits);
    const Var lp = ad::gather(logp, b.actions[t]);
    const Var h = ad::row_sum(ad::hadamard(ad::exp(logp), logp));  // -entropy
    const Var adv = tape.constant(targets.advantages.row(t).transpose());
    const Var ret = tape.constant(targets.returns.row(t).transpose());
    const Var pg_t = ad::sum(ad::hadamard(lp, adv));
    const Var vl_t = ad::sum(ad::square(ad::sub(out.value, ret)));
    const Var ent_t = ad::scale(ad::sum(h), -1.0);
    pg = t == 0 ? pg_t : ad::add(pg, pg_t);
    vl = t == 0 ? vl_t : ad::add(vl, vl_t);
    ent = t == 0 ? ent_t : ad::add(ent, ent_t);

    a = out.actor;
    c = out.critic;
    Matrix keep = Matrix::Ones(b.envs, 1);
    for (int e = 0; e < b.envs; ++e)
      if (b.terminal(t, e) != 0.0 || b.truncated(t, e) != 0.0) keep(e, 0) = 0.0;
    if (keep.minCoeff() == 0.0) {
      auto reset = [&](const Var& v, const Matrix& fresh) {
        const Matrix mask = keep.replicate(1, v.cols());
        const Matrix fill = fresh.cwiseProduct((1.0 - mask.array()).matrix());
        return ad::add(ad::hadamard(v, tape.constant(mask)), tape.constant(fill));
      };
      const NetState& fresh = b.resets[t];
      a = {reset(a.h, fresh.actor_h), reset(a.c, fresh.actor_c)};
      c = {reset(c.h, fresh.critic_h), reset(c.c, fresh.critic_c)};
    }
  }
  const double n = static_cast<double>(b.steps) * b.envs;
  LossTerms out;
  out.policy = -pg.value()(0, 0) / n;
  out.value = vl.value()(0, 0) / n;
  out.entropy = ent.value()(0, 0) / n;
  out.total = ad::add(ad::add(ad::scale(pg, -1.0 / n), ad::scale(vl, cfg.value_coef / n)),
                      ad::scale(ent, -cfg.entropy_coef / n));
  return out;
}

UpdateStats a2c_update(PolicyNetwork& net, Optimizer& opt, const RolloutBatch& b, const AgentConfig& cfg) {
  const auto params = net.parameters();
  for (auto* p : params) p->zero_grad();
  const ReturnTargets targets = compute_returns(b, cfg.gamma);
  Tape tape;
  const LossTerms loss = a2c_loss(tape, net, b, targets, cfg);
  const double total = loss.total.value()(0, 0);
  if (!std::isfinite(total)) {
    std::ostringstream os;
    os << "non-finite loss " << total << " (policy " << loss.policy << ", value " << loss.value << ", entropy "
       << loss.entropy << ", max |return| " << targets.returns.cwiseAbs().maxCoeff() << ")";
    throw Error(ErrorCode::non_finite_gradient, os.str());
  }
  tape.backward(loss.total);
  UpdateStats s;
  s.grad_norm = clip_grad_norm(params, cfg.max_grad_norm);
  opt.step(params);
  s.policy_loss = loss.policy;
  s.value_loss = loss.value;
  s.entropy = loss.entropy;
  return s;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate(PolicyNetwork& net, const EnvConfig& env, int episodes, bool greedy, std::uint64_t seed,
                    int transform) {
  std::vector<std::unique_ptr<Env>> envs;
  Matrix obs(episodes, net.observation_dim());
  for (int i = 0; i < episodes; ++i) {
    envs.push_back(make_env(env, env_seed(seed, i)));
    envs[i]->reset();
    if (transform != 0) envs[i]->set_state(act_on_state(env, transform, envs[i]->state()));
    obs.row(i) = envs[i]->observe().transpose();
  }
  std::mt19937_64 rng(env_seed(seed, -2));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  NetState state = net.initial_state(episodes, rng);
  std::vector<bool> done(episodes, false);
  std::vector<double> returns(episodes, 0.0);
  int successes = 0, remaining = episodes;
  Tape tape;
  const auto bound = net.bind(tape);
  while (remaining > 0) {
    const auto out = net.step(bound, tape.constant(obs), {tape.constant(state.actor_h), tape.constant(state.actor_c)},
                              {tape.constant(state.critic_h), tape.constant(state.critic_c)});
    const Matrix logp = ad::log_softmax(out.logits).value();
    state = {out.actor.h.value(), out.actor.c.value(), out.critic.h.value(), out.critic.c.value()};
    for (int i = 0; i < episodes; ++i) {
      const double u = unif(rng);
      if (done[i]) continue;
      Eigen::Index a = 0;
      if (greedy)
        logp.row(i).maxCoeff(&a);
      else
        a = sample(logp.row(i), u);
      const auto r = envs[i]->step(static_cast<int>(a));
      returns[i] += r.reward;
      obs.row(i) = r.observation.transpose();
      if (r.done()) {
        done[i] = true;
        --remaining;
        successes += r.success;
      }
    }
  }
  EvalResult res;
  res.episodes = episodes;
  res.success_rate = static_cast<double>(successes) / episodes;
  for (double r : returns) res.mean_return += r / episodes;
  return res;
}

EvalResult evaluate_exact(const ExactQ& solved, const EnvConfig& env, int episodes, std::uint64_t seed) {
  EvalResult res;
  res.episodes = episodes;
  for (int i = 0; i < episodes; ++i) {
    auto e = make_env(env, env_seed(seed, i));
    e->reset();
    int node = solved.tree.root(e->observation_index());
    double ret = 0.0;
    while (true) {
      const bool known = node >= 0 && !solved.greedy[node].empty() && solved.tree.nodes()[node].depth < solved.horizon;
      const int a = known ? solved.greedy[node].front() : 0;
      const auto r = e->step(a);
      ret += r.reward;
      if (r.done()) {
        res.success_rate += r.success;
        break;
      }
      node = node >= 0 ? solved.tree.child(node, a, e->observation_index()) : -1;
    }
    res.mean_return += ret / episodes;
  }
  res.success_rate /= episodes;
  return res;
}

// ---------------------------------------------------------------------------
// Training

std::string curve_header() { return "step,episodes,success_rate,mean_return,policy_loss,value_loss,entropy,seed"; }

std::string format_curve_row(const CurveRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%ld,%ld,%.6f,%.6f,%.8g,%.8g,%.8g,%llu", r.step, r.episodes, r.success_rate,
                r.mean_return, r.policy_loss, r.value_loss, r.entropy, static_cast<unsigned long long>(r.seed));
  return buf;
}

std::optional<long> TrainResult::steps_to(double success) const {
  for (const auto& r : curve)
    if (r.success_rate >= success) return r.step;
  return std::nullopt;
}

std::vector<CurveRow> read_curve(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::parse, "cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != curve_header())
    throw Error(ErrorCode::parse, path + ": expected header '" + curve_header() + "'");
  std::vector<CurveRow> out;
  for (int n = 2; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    CurveRow r;
    unsigned long long seed = 0;
    if (std::sscanf(line.c_str(), "%ld,%ld,%lf,%lf,%lf,%lf,%lf,%llu", &r.step, &r.episodes, &r.success_rate,
                    &r.mean_return, &r.policy_loss, &r.value_loss, &r.entropy, &seed) != 8)
      throw Error(ErrorCode::parse, path + ":" + std::to_string(n) + ": malformed row");
    r.seed = seed;
    out.push_back(r);
  }
  return out;
}

std::string aggregate_header() { return "step,seeds,success_mean,success_std,return_mean,return_std"; }

std::string format_aggregate_row(const AggregateRow& r) {
  char buf[192];
  std::snprintf(buf, sizeof buf, "%ld,%d,%.6f,%.6f,%.6f,%.6f", r.step, r.seeds, r.success_mean, r.success_std,
                r.return_mean, r.return_std);
  return buf;
}

std::vector<AggregateRow> aggregate_curves(const std::vector<std::vector<CurveRow>>& curves) {
  if (curves.empty()) throw Error(ErrorCode::alignment, "no curves to aggregate");
  const auto& ref = curves.front();
  for (size_t c = 1; c < curves.size(); ++c) {
    bool same = curves[c].size() == ref.size();
    for (size_t i = 0; same && i < ref.size(); ++i) same = curves[c][i].step == ref[i].step;
    if (!same) throw Error(ErrorCode::alignment, "curve " + std::to_string(c) + " has different eval steps than curve 0");
  }
  std::vector<AggregateRow> out;
  const double n = static_cast<double>(curves.size());
  for (size_t i = 0; i < ref.size(); ++i) {
    AggregateRow a;
    a.step = ref[i].step;
    a.seeds = static_cast<int>(curves.size());
    for (const auto& c : curves) {
      a.success_mean += c[i].success_rate / n;
      a.return_mean += c[i].mean_return / n;
    }
    for (const auto& c : curves) {
      a.success_std += (c[i].success_rate - a.success_mean) * (c[i].success_rate - a.success_mean) / n;
      a.return_std += (c[i].mean_return - a.return_mean) * (c[i].mean_return - a.return_mean) / n;
    }
    a.success_std = std::sqrt(a.success_std);
    a.return_std = std::sqrt(a.return_std);
    out.push_back(a);
  }
  return out;
}

TrainResult train(const EnvConfig& env, const AgentConfig& cfg, const std::string& out_dir,
                  const std::function<void(const CurveRow&)>& on_eval) {
  env.validate();
  cfg.validate();
  std::mt19937_64 init_rng(env_seed(cfg.seed, -3));
  PolicyNetwork net(env, cfg.network, init_rng);
  Optimizer opt(cfg.optimizer);
  RolloutWorker worker(env, cfg.num_envs, cfg.seed, net);
  const auto params = net.parameters();
  const std::vector<const Parameter*> cparams(params.begin(), params.end());

  std::ofstream csv;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    csv.open(out_dir + "/curve.csv");
    if (!csv) throw Error(ErrorCode::config, "cannot write " + out_dir + "/curve.csv");
    csv << curve_header() << "\n" << std::flush;
    save_checkpoint(out_dir + "/initial.ckpt", cparams);
  }

  TrainResult result;
  long step = 0, episodes = 0, next_eval = cfg.eval_interval;
  double pl = 0.0, vl = 0.0, en = 0.0;
  int updates = 0, evals = 0;
  double best = -1.0;
  while (step < cfg.total_steps) {
    const RolloutBatch batch = collect_rollouts(net, worker, cfg.n_steps);
    step += static_cast<long>(cfg.n_steps) * cfg.num_envs;
    episodes += static_cast<long>(batch.episode_returns.size());
    const UpdateStats s = a2c_update(net, opt, batch, cfg);
    pl += s.policy_loss;
    vl += s.value_loss;
    en += s.entropy;
    ++updates;
    if (step >= next_eval || step >= cfg.total_steps) {
      const EvalResult ev = evaluate(net, env, cfg.eval_episodes, cfg.eval_greedy, env_seed(cfg.seed ^ 0xe7a1, evals++));
      CurveRow row{step, episodes, ev.success_rate, ev.mean_return, pl / updates, vl / updates, en / updates, cfg.seed};
      result.curve.push_back(row);
      pl = vl = en = 0.0;
      updates = 0;
      while (next_eval <= step) next_eval += cfg.eval_interval;
      if (csv.is_open()) {
        csv << format_curve_row(row) << "\n" << std::flush;
        if (ev.success_rate > best) save_checkpoint(out_dir + "/best.ckpt", cparams);
      }
      best = std::max(best, ev.success_rate);
      if (on_eval) on_eval(row);
      if (cfg.stop_at_success && ev.success_rate >= *cfg.stop_at_success) break;
    }
  }
  if (!out_dir.empty() && step > 0) save_checkpoint(out_dir + "/final.ckpt", cparams);
  return result;
}

}  // namespace equirl
