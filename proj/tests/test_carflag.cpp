#include <cmath>
#include <random>

#include "doctest.h"
#include "equirl/carflag.hpp"

using namespace equirl;

namespace {

EnvConfig one_d(int half_size, int offset = 0) {
  EnvConfig c;
  c.kind = EnvKind::carflag1d;
  c.carflag1d.half_size = half_size;
  c.carflag1d.offset = offset;
  return c;
}

EnvConfig two_d(int n, int offset = 0, int radius = 0) {
  EnvConfig c;
  c.kind = EnvKind::carflag2d;
  c.carflag2d.grid_size = n;
  c.carflag2d.offset = offset;
  c.carflag2d.info_radius = radius;
  return c;
}

int cell(int n, int r, int c) { return r * n + c; }

int deterministic_successor(const Pomdp& p, int s, int a) {
  int found = -1;
  for (int s2 = 0; s2 < p.num_states; ++s2) {
    if (p.T(s, a, s2) == 1.0) found = s2;
    else if (p.T(s, a, s2) != 0.0) return -2;
  }
  return found;
}

/// Checks that the group action on the simulator commutes with move/reward/encode
/// for the given states; returns the number of mismatching (state, action, g).
int symmetry_mismatches(const EnvConfig& cfg, const Env& env, const std::vector<EnvState>& states,
                        std::vector<EnvState>* witnesses = nullptr) {
  const EnvSymmetry sym = env_symmetry(cfg);
  int bad = 0;
  for (const EnvState& s : states)
    for (int g = 0; g < sym.group.order(); ++g) {
      const EnvState gs = act_on_state(cfg, g, s);
      bool ok = (env.encode(gs) - sym.observation.matrix(g) * env.encode(s)).norm() == 0.0;
      for (int a = 0; a < env.num_actions(); ++a) {
        const int ga = act_on_action(cfg, g, a);
        const EnvState n1 = env.move(s, a), n2 = env.move(gs, ga);
        bool t1 = false, t2 = false, s1 = false, s2 = false;
        const double r1 = env.reward(n1, t1, s1), r2 = env.reward(n2, t2, s2);
        ok = ok && n2 == act_on_state(cfg, g, n1) && r1 == r2 && t1 == t2 && s1 == s2;
      }
      if (!ok) {
        ++bad;
        if (witnesses) witnesses->push_back(s);
      }
    }
  return bad;
}

}  // namespace

TEST_CASE("carflag1d reset") {
  CarFlag1d env(CarFlag1dConfig{}, 7);
  env.reset();
  const EnvState first = env.state();
  CarFlag1d again(CarFlag1dConfig{}, 7);
  again.reset();
  CHECK(again.state() == first);
  CHECK((first.goal == 1 || first.goal == -1));
  CHECK(first.agent != 0);
  CHECK(std::abs(first.agent) < 25);

  SUBCASE("goal side is a fair coin") {
    int right = 0;
    for (int i = 0; i < 10000; ++i) {
      env.reset();
      right += env.state().goal > 0;
      CHECK(env.state().agent != env.config().offset);
    }
    CHECK(std::abs(right / 10000.0 - 0.5) <= 0.02);
  }
}

TEST_CASE("carflag1d step") {
  CarFlag1d env(CarFlag1dConfig{}, 1);
  SUBCASE("one step from the green flag") {
    env.set_state({24, 1, 3});
    const auto r = env.step(carflag1d::right);
    CHECK(r.reward == 1.0);
    CHECK(r.terminal);
    CHECK(r.success);
  }
  SUBCASE("red flag") {
    env.set_state({-24, 1, 0});
    const auto r = env.step(carflag1d::left);
    CHECK(r.reward == -1.0);
    CHECK(r.terminal);
    CHECK_FALSE(r.success);
  }
  SUBCASE("side is revealed only at the information cell") {
    env.set_state({1, -1, 0});
    const auto r = env.step(carflag1d::left);
    CHECK(r.observation(1) == -1.0);
    CHECK(r.observation(0) == 0.0);
    CHECK(env.step(carflag1d::left).observation(1) == 0.0);
  }
  SUBCASE("51st step truncates") {
    env.set_state({3, 1, 0});
    for (int t = 1; t <= 50; ++t) {
      const auto r = env.step(t % 2);
      CHECK_FALSE(r.done());
      CHECK(r.reward == -0.01);
    }
    const auto r = env.step(carflag1d::right);
    CHECK(r.truncated);
    CHECK_FALSE(r.terminal);
    CHECK(r.reward == -0.01);
  }
  SUBCASE("invalid action") {
    try {
      env.step(2);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::invalid_action);
    }
  }
}

TEST_CASE("carflag2d") {
  SUBCASE("3x3 starts never show the goal") {
    CarFlag2d env(two_d(3).carflag2d, 0);
    for (int i = 0; i < 200; ++i) {
      const Vector o = env.reset();
      CHECK(o.tail(9).isZero(0.0));
      const auto& s = env.state();
      CHECK(std::abs(s.agent / 3 - s.goal / 3) + std::abs(s.agent % 3 - s.goal % 3) >= 2);
    }
  }
  SUBCASE("borders clamp") {
    CarFlag2d env(two_d(3).carflag2d, 0);
    env.set_state({cell(3, 0, 2), cell(3, 2, 0), 0});
    env.step(carflag2d::up);
    CHECK(env.state().agent == cell(3, 0, 2));
    env.step(carflag2d::right);
    CHECK(env.state().agent == cell(3, 0, 2));
    env.step(carflag2d::left);
    CHECK(env.state().agent == cell(3, 0, 1));
    env.step(carflag2d::down);
    CHECK(env.state().agent == cell(3, 1, 1));
  }
  SUBCASE("goal channel is nonzero iff the agent is in the information region") {
    for (const auto& cfg : {two_d(3), two_d(7, 0, 1), two_d(5, 1)}) {
      CarFlag2d env(cfg.carflag2d, 0);
      const int n = cfg.carflag2d.grid_size;
      for (const EnvState& s : env.all_states()) {
        const bool visible = env.encode(s).tail(n * n).sum() != 0.0;
        CHECK(visible == cfg.carflag2d.in_info_region(s.agent / n, s.agent % n));
      }
    }
  }
  SUBCASE("reaching the goal") {
    CarFlag2d env(two_d(3).carflag2d, 0);
    env.set_state({cell(3, 0, 0), cell(3, 0, 1), 0});
    const auto r = env.step(carflag2d::right);
    CHECK(r.reward == 1.0);
    CHECK(r.success);
  }
  SUBCASE("degenerate configs") {
    CHECK_THROWS_AS(CarFlag2d(two_d(4).carflag2d, 0), Error);
    CHECK_THROWS_AS(CarFlag2d(two_d(3, 2).carflag2d, 0), Error);
    try {
      CarFlag2d(two_d(3, 0, 1).carflag2d, 0);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::placement);
    }
  }
}

TEST_CASE("group actions on the environments") {
  SUBCASE("1D reflection negates both observation components") {
    const auto sym = env_symmetry(one_d(25));
    Vector o(2);
    o << 7, 1;
    const Vector go = sym.observation.matrix(1) * o;
    CHECK(go(0) == -7);
    CHECK(go(1) == -1);
    CHECK(act_on_action(one_d(25), 1, carflag1d::left) == carflag1d::right);
  }
  SUBCASE("2D quarter turn maps Go-Right to Go-Up") {
    CHECK(act_on_action(two_d(3), 1, carflag2d::right) == carflag2d::up);
    const Matrix rho = env_symmetry(two_d(3)).action.matrix(1);
    CHECK(rho(carflag2d::up, carflag2d::right) == 1.0);
  }
  SUBCASE("identity leaves everything unchanged") {
    for (const auto& cfg : {one_d(5), two_d(3)}) {
      const EnvState s{cfg.kind == EnvKind::carflag1d ? 2 : 1, cfg.kind == EnvKind::carflag1d ? 1 : 8, 4};
      CHECK(act_on_state(cfg, 0, s) == s);
      for (int a = 0; a < 2; ++a) CHECK(act_on_action(cfg, 0, a) == a);
    }
  }
}

TEST_CASE("simulator symmetry") {
  SUBCASE("exhaustive on symmetric small instances") {
    for (const auto& cfg : {one_d(10), one_d(25), two_d(3), two_d(5, 0, 1)}) {
      const auto env = make_env(cfg, 0);
      CHECK(symmetry_mismatches(cfg, *env, env->all_states()) == 0);
    }
  }
  SUBCASE("randomized on a 7x7 grid") {
    const auto cfg = two_d(7, 0, 1);
    const auto env = make_env(cfg, 3);
    std::vector<EnvState> states;
    for (int i = 0; i < 300; ++i) {
      env->reset();
      for (int t = 0; t < 5; ++t) env->step(static_cast<int>(env_seed(i, t) % 4));
      states.push_back(env->state());
    }
    CHECK(symmetry_mismatches(cfg, *env, states) == 0);
  }
  SUBCASE("offset breaks symmetry only where info-region membership changes") {
    const auto cfg = two_d(3, 1);
    const auto env = make_env(cfg, 0);
    std::vector<EnvState> witnesses;
    CHECK(symmetry_mismatches(cfg, *env, env->all_states(), &witnesses) > 0);
    for (const EnvState& s : witnesses) {
      bool changes = false;
      for (int g = 0; g < 4; ++g) {
        const EnvState gs = act_on_state(cfg, g, s);
        changes = changes || cfg.carflag2d.in_info_region(s.agent / 3, s.agent % 3) !=
                                 cfg.carflag2d.in_info_region(gs.agent / 3, gs.agent % 3);
      }
      CHECK(changes);
    }
  }
}

TEST_CASE("exported tables") {
  SUBCASE("transitions are deterministic") {
    const auto ex = export_pomdp(two_d(3));
    CHECK_NOTHROW(ex.pomdp.validate());
    for (int s = 0; s < ex.pomdp.num_states; ++s)
      for (int a = 0; a < 4; ++a) CHECK(deterministic_successor(ex.pomdp, s, a) >= 0);
  }
  SUBCASE("simulator and table traces coincide") {
    for (const auto& cfg : {two_d(3), one_d(10), two_d(3, 1)}) {
      const auto ex = export_pomdp(cfg);
      const Pomdp& p = ex.pomdp;
      for (int seed = 0; seed < 1000; ++seed) {
        const auto env = make_env(cfg, seed);
        env->reset();
        std::mt19937_64 actions(seed);
        int s = env->state_index();
        REQUIRE(p.b0[s] > 0.0);
        REQUIRE(p.O0(s, env->observation_index()) == 1.0);
        for (int t = 0; t < 60; ++t) {
          const int a = static_cast<int>(actions() % env->num_actions());
          const auto r = env->step(a);
          const int s2 = deterministic_successor(p, s, a);
          REQUIRE(s2 == env->state_index());
          REQUIRE(p.R(s, a) == r.reward);
          REQUIRE(p.O(a, s2, env->observation_index()) == 1.0);
          s = s2;
          if (r.done()) break;
        }
      }
    }
  }
  SUBCASE("invariance holds exactly for symmetric exports only") {
    CHECK(check_invariance(export_pomdp(two_d(3)).pomdp, export_pomdp(two_d(3)).binding).pass);
    CHECK(check_invariance(export_pomdp(one_d(25)).pomdp, export_pomdp(one_d(25)).binding).pass);
    const auto ex2 = export_pomdp(two_d(3, 1));
    CHECK_FALSE(check_invariance(ex2.pomdp, ex2.binding).pass);
    const auto ex1 = export_pomdp(one_d(25, 5));
    const auto rep = check_invariance(ex1.pomdp, ex1.binding);
    CHECK_FALSE(rep.pass);
    CHECK_FALSE(rep.pass_O);
    for (const auto& v : rep.violations) {
      if (v.table != "O") continue;
      const int pos = v.index[1] / 2 - 25;  // O(a, s', o): s' = (pos + H) * 2 + goal
      CHECK(std::abs(pos) == 5);
    }
  }
  SUBCASE("the 90 degree history of the 3x3 illustration") {
    const auto cfg = two_d(3);
    const auto ex = export_pomdp(cfg);
    CarFlag2d env(cfg.carflag2d, 0);
    // Scenario 1: start middle-left, go right onto the information cell, see the goal top-right.
    const EnvState s0{cell(3, 1, 0), cell(3, 0, 2), 0};
    const EnvState s1{cell(3, 1, 1), cell(3, 0, 2), 0};
    const History h{{env.observation_index(s0), env.observation_index(s1)}, {carflag2d::right}};
    // Scenario 2: start bottom-middle, go up, see the goal top-left.
    const EnvState r0{cell(3, 2, 1), cell(3, 0, 0), 0};
    const EnvState r1{cell(3, 1, 1), cell(3, 0, 0), 0};
    const History gh{{env.observation_index(r0), env.observation_index(r1)}, {carflag2d::up}};
    CHECK(act_on_history(ex.binding, 1, h) == gh);
  }
  SUBCASE("belief over the goal collapses after the information cell") {
    const auto cfg = two_d(3);
    const auto ex = export_pomdp(cfg);
    CarFlag2d env(cfg.carflag2d, 0);
    const EnvState s0{cell(3, 1, 0), cell(3, 2, 2), 0};
    const Belief b0 = belief(ex.pomdp, History{{env.observation_index(s0)}, {}});
    CHECK((b0.array() > 0).count() > 1);
    const EnvState s1{cell(3, 1, 1), cell(3, 2, 2), 0};
    const Belief b1 = belief(ex.pomdp, History{{env.observation_index(s0), env.observation_index(s1)}, {carflag2d::right}});
    CHECK(b1(env.state_index(s1)) == 1.0);
  }
  SUBCASE("export size limit") {
    try {
      (void)export_pomdp(two_d(11), 0.99, 1000);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::budget);
    }
  }
}
