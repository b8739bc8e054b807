#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "liprobust/policy.hpp"
#include "liprobust/rollout.hpp"

using namespace liprobust;
using ad::Graph;
using ad::Var;

namespace {

constexpr double kPi = std::numbers::pi;

PendulumParams undamped() {
  PendulumParams p;
  p.damping = 0.0;
  return p;
}

PolicyFn zero_policy() {
  return [](const Tensor& x) { return Tensor::Zero(1, x.cols()); };
}

Tensor state2(double a, double w) {
  Tensor s(2, 1);
  s << a, w;
  return s;
}

double max_relative_energy_drift(const Pendulum& env, PendulumState s, int steps) {
  const double e0 = env.energy(s);
  double worst = 0.0;
  for (int t = 0; t < steps; ++t) {
    s = env.step(s, 0.0);
    worst = std::max(worst, std::abs(env.energy(s) - e0) / std::abs(e0));
  }
  return worst;
}

}  // namespace

TEST(WrapAngle, Examples) {
  EXPECT_NEAR(wrap_angle(3 * kPi / 2), -kPi / 2, 1e-15);
  EXPECT_NEAR(wrap_angle(-3 * kPi / 2), kPi / 2, 1e-15);
  EXPECT_EQ(wrap_angle(0.0), 0.0);
  EXPECT_EQ(wrap_angle(kPi), -kPi);
  EXPECT_EQ(wrap_angle(-kPi), -kPi);
}

TEST(WrapAngle, RangeAndIdempotent) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-50.0, 50.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = d(rng);
    const double w = wrap_angle(a);
    EXPECT_GE(w, -kPi);
    EXPECT_LT(w, kPi);
    EXPECT_EQ(wrap_angle(w), w);
    const double k = (a - w) / (2 * kPi);
    EXPECT_NEAR(k, std::round(k), 1e-9);
  }
}

TEST(PendulumStep, UprightEquilibrium) {
  const Pendulum env;
  const PendulumState s = env.step(PendulumState{0.0, 0.0}, 0.0);
  EXPECT_EQ(s.angle, 0.0);
  EXPECT_EQ(s.velocity, 0.0);
}

TEST(PendulumStep, HangingEquilibrium) {
  const Pendulum env;
  const PendulumState s = env.step(PendulumState{kPi, 0.0}, 0.0);
  // pi and -pi are the same angle; sin(pi) is 1.2e-16 in floating point.
  EXPECT_NEAR(std::abs(s.angle), kPi, 1e-12);
  EXPECT_NEAR(s.velocity, 0.0, 1e-12);
}

TEST(PendulumStep, QuarterTurnUndamped) {
  const Pendulum env(undamped());
  const PendulumState s = env.step(PendulumState{kPi / 2, 0.0}, 0.0);
  EXPECT_NEAR(s.velocity, 0.981, 1e-12);
  EXPECT_NEAR(s.angle, kPi / 2 + 0.05 * 0.981, 1e-12);
  EXPECT_NEAR(s.angle, 1.6198, 1e-4);
}

TEST(PendulumStep, TorqueIsClipped) {
  const Pendulum env;
  const PendulumState a = env.step(PendulumState{0.3, 0.2}, 5.0);
  const PendulumState b = env.step(PendulumState{0.3, 0.2}, 1.0);
  EXPECT_EQ(a.angle, b.angle);
  EXPECT_EQ(a.velocity, b.velocity);
  EXPECT_EQ(env.reward(PendulumState{0.0, 0.0}, 5.0), -0.001);
}

TEST(PendulumStep, ValidatesParameters) {
  PendulumParams p;
  p.max_torque = 2.0;  // exceeds m g l, no pumping needed
  EXPECT_THROW(Pendulum{p}, ValidationError);
  p = {};
  p.dt = 0.0;
  EXPECT_THROW(Pendulum{p}, ValidationError);
  p = {};
  p.noise_scale = -1.0;
  EXPECT_THROW(Pendulum{p}, ValidationError);
}

TEST(PendulumReward, Examples) {
  const Pendulum env;
  EXPECT_EQ(env.reward(PendulumState{0.0, 0.0}, 0.0), 0.0);
  EXPECT_NEAR(env.reward(PendulumState{kPi, 0.0}, 0.0), -9.8696, 1e-4);
  EXPECT_NEAR(env.reward(PendulumState{0.0, 1.0}, 1.0), -0.101, 1e-15);
}

TEST(PendulumStep, GraphMatchesTensorPath) {
  const Pendulum env;
  std::mt19937_64 rng(5);
  const Tensor x = env.initial_states(16, rng);
  Tensor u(1, 16), w(1, 16);
  std::normal_distribution<double> d(0.0, 1.0);
  for (int j = 0; j < 16; ++j) {
    u(0, j) = 1.5 * d(rng);
    w(0, j) = 0.1 * d(rng);
  }
  Graph g;
  const Var next = env.step(g.constant(x), g.constant(u), &w);
  const Var r = env.reward(g.constant(x), g.constant(u));
  EXPECT_LT((next.value() - env.step(x, u, &w)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((r.value() - env.reward(x, u)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(PendulumStep, GradientMatchesFiniteDifferences) {
  const Pendulum env;
  // Away from the clip boundary and the wrap seam.
  const Tensor x = state2(0.7, -0.4);
  const Tensor u = Tensor::Constant(1, 1, 0.3);
  const auto report = ad::grad_check(
      [&](Graph& g, const std::vector<Var>& p) {
        Var s = p[0];
        Var a = p[1];
        for (int t = 0; t < 3; ++t) {
          Var r = env.reward(s, a);
          s = env.step(s, a, nullptr);
          a = 0.5 * a + 0.1 * ad::slice_rows(s, 0, 1) + r;
        }
        return ad::sum(ad::square(s)) + ad::sum(a);
      },
      {x, u}, 1e-6);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(PendulumEnergy, SmallSwingDriftBelowOnePercent) {
  const Pendulum env(undamped());
  for (double amplitude : {0.05, 0.1, 0.2, 0.3}) {
    EXPECT_LT(max_relative_energy_drift(env, {kPi - amplitude, 0.0}, 200), 0.01) << amplitude;
    EXPECT_LT(max_relative_energy_drift(env, {-kPi + amplitude, 0.0}, 200), 0.01) << amplitude;
  }
}

TEST(PendulumEnergy, DriftShrinksWithStepSize) {
  // A first-order symplectic integrator: the error at a fixed simulated time
  // is bounded and falls roughly linearly in dt.
  PendulumParams coarse = undamped();
  PendulumParams fine = undamped();
  fine.dt = coarse.dt / 10;
  const double e_coarse = max_relative_energy_drift(Pendulum(coarse), {kPi - 1.0, 0.0}, 200);
  const double e_fine = max_relative_energy_drift(Pendulum(fine), {kPi - 1.0, 0.0}, 2000);
  EXPECT_LT(e_fine, e_coarse / 5);
  EXPECT_LT(e_fine, 0.01);
}

TEST(Rollout, ZeroPolicyFromHangingStart) {
  const Pendulum env(undamped());
  const Trajectory traj = rollout(env, zero_policy(), state2(kPi, 0.0), 1);
  EXPECT_NEAR(traj.rewards[0](0, 0), -kPi * kPi, 1e-12);
  EXPECT_EQ(traj.horizon(), 200);
  // Hanging start stays put, so the return is the geometric sum.
  const double expected = -kPi * kPi * (1 - std::pow(0.99, 200)) / (1 - 0.99);
  EXPECT_NEAR(traj.discounted_return(0, 0), expected, 1e-9);
}

TEST(Rollout, ShapesAndRewardConsistency) {
  const Pendulum env;
  auto net = build_policy(Architecture::Plain, {2, 16, 1}, std::nullopt, 3);
  const PolicySnapshot snap{net};
  const Trajectory traj = rollout(env, std::cref(snap), 64, 11);
  ASSERT_EQ(traj.horizon(), 200);
  ASSERT_EQ(traj.episodes(), 64);
  EXPECT_EQ(traj.states.size(), 201u);
  EXPECT_EQ(traj.actions.size(), 200u);
  double ret = 0.0, w = 1.0;
  for (int t = 0; t < 200; ++t) {
    EXPECT_EQ(traj.rewards[t].cols(), 64);
    EXPECT_TRUE(traj.rewards[t].isApprox(env.reward(traj.states[t], traj.actions[t])));
    ret += w * traj.rewards[t](0, 5);
    w *= 0.99;
  }
  EXPECT_NEAR(traj.discounted_return(0, 5), ret, 1e-9);
  for (int j = 0; j < 64; ++j) {
    EXPECT_LE(traj.states[0](0, j), kPi);
    EXPECT_GT(traj.states[0](0, j), -kPi);
    EXPECT_LE(std::abs(traj.states[0](1, j)), 1.0);
  }
}

TEST(Rollout, SameSeedBitIdentical) {
  PendulumParams p;
  p.noise_scale = 0.05;
  const Pendulum env(p);
  auto net = build_policy(Architecture::Sandwich, {2, 8, 1}, 4.0, 2);
  const PolicySnapshot snap{net};
  RolloutOptions opt;
  opt.mode = ActionMode::Stochastic;
  opt.log_std = Tensor::Constant(1, 1, -0.5);
  const PerturbationAdapter noise = UniformNoiseAdapter{0.1, Norm::Linf, 9};
  const Trajectory a = rollout(env, std::cref(snap), 8, 21, noise, opt);
  const Trajectory b = rollout(env, std::cref(snap), 8, 21, noise, opt);
  for (int t = 0; t <= 200; ++t) EXPECT_EQ(a.states[t], b.states[t]);
  EXPECT_EQ(a.discounted_return, b.discounted_return);
  const Trajectory c = rollout(env, std::cref(snap), 8, 22, noise, opt);
  EXPECT_NE(a.discounted_return, c.discounted_return);
}

TEST(Rollout, EpisodesIndependentOfBatchSize) {
  const Pendulum env;
  auto net = build_policy(Architecture::Plain, {2, 8, 1}, std::nullopt, 1);
  const PolicySnapshot snap{net};
  RolloutOptions opt;
  opt.mode = ActionMode::Stochastic;
  opt.log_std = Tensor::Constant(1, 1, 0.0);
  const Trajectory small = rollout(env, std::cref(snap), 3, 5, NoPerturbation{}, opt);
  const Trajectory large = rollout(env, std::cref(snap), 10, 5, NoPerturbation{}, opt);
  for (int j = 0; j < 3; ++j) {
    EXPECT_EQ(small.discounted_return(0, j), large.discounted_return(0, j));
  }
}

TEST(Rollout, DelayPrefillsWithInitialState) {
  const Pendulum env;
  auto net = build_policy(Architecture::Plain, {2, 8, 1}, std::nullopt, 1);
  const PolicySnapshot snap{net};
  const Trajectory traj = rollout(env, std::cref(snap), 4, 3, DelayAdapter{3});
  for (int t = 0; t < 200; ++t) {
    EXPECT_EQ(traj.observations[t], traj.states[std::max(0, t - 3)]);
  }
  const Trajectory none = rollout(env, std::cref(snap), 4, 3);
  const Trajectory k0 = rollout(env, std::cref(snap), 4, 3, DelayAdapter{0});
  EXPECT_EQ(none.discounted_return, k0.discounted_return);
}

TEST(Rollout, UniformNoiseBounded) {
  const Pendulum env;
  for (Norm norm : {Norm::Linf, Norm::L2}) {
    const Trajectory traj =
        rollout(env, zero_policy(), 16, 3, UniformNoiseAdapter{0.2, norm, 4});
    double largest = 0.0;
    for (const Tensor& v : traj.perturbations) {
      for (int j = 0; j < 16; ++j) {
        const double n = norm == Norm::Linf ? v.col(j).cwiseAbs().maxCoeff() : v.col(j).norm();
        EXPECT_LE(n, 0.2 + 1e-12);
        largest = std::max(largest, n);
      }
    }
    EXPECT_GT(largest, 0.15);
  }
  const Trajectory zero = rollout(env, zero_policy(), 4, 3, UniformNoiseAdapter{0.0, Norm::Linf, 4});
  for (const Tensor& v : zero.perturbations) EXPECT_EQ(v.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Rollout, FixedSequenceLengthChecked) {
  const Pendulum env;
  FixedSequenceAdapter adapter;
  adapter.sequence.assign(199, Tensor::Zero(2, 1));
  EXPECT_THROW(rollout(env, zero_policy(), 2, 1, adapter), ValidationError);
  adapter.sequence.assign(200, Tensor::Zero(3, 1));
  EXPECT_THROW(rollout(env, zero_policy(), 2, 1, adapter), ShapeError);
}

TEST(Rollout, GraphRolloutMatchesSimulation) {
  const Pendulum env;
  auto net = build_policy(Architecture::Sandwich, {2, 16, 16, 1}, 4.0, 8);
  const PolicySnapshot snap{net};
  const Tensor x0 = sample_initial_states(env, 5, 17);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d(0.0, 0.05);
  FixedSequenceAdapter adapter;
  Graph g;
  std::vector<Var> vs;
  for (int t = 0; t < 200; ++t) {
    Tensor v(2, 5);
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = d(rng);
    adapter.sequence.push_back(v);
    vs.push_back(g.constant(v));
  }
  const Trajectory traj = rollout(env, std::cref(snap), x0, 1, adapter);
  const GraphRollout gr = rollout_on_graph(
      g, env, [&](Graph& gg, Var x) { return snap.apply(gg, x); }, x0, vs);
  EXPECT_LT((gr.discounted_return.value() - traj.discounted_return).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((gr.final_state.value() - traj.states.back()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Rollout, ReturnGradientMatchesFiniteDifferences) {
  const Pendulum env;
  auto net = build_policy(Architecture::Plain, {2, 16, 16, 1}, std::nullopt, 4);
  const PolicySnapshot snap{net};
  const GraphPolicyFn policy = [&](Graph& g, Var x) { return snap.apply(g, x); };
  const Tensor x0 = state2(0.6, 0.3);
  constexpr int T = 50;
  std::mt19937_64 rng(10);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<Tensor> v(T, Tensor(2, 1));
  for (Tensor& vt : v) vt << 0.05 * d(rng), 0.05 * d(rng);

  auto total = [&](const std::vector<Tensor>& seq) {
    Graph g;
    std::vector<Var> vs;
    for (const Tensor& vt : seq) vs.push_back(g.constant(vt));
    return rollout_on_graph(g, env, policy, x0, vs).discounted_return.scalar();
  };

  Graph g;
  std::vector<Var> vs;
  for (int t = 0; t < T; ++t) vs.push_back(g.parameter(v[t]));
  const GraphRollout gr = rollout_on_graph(g, env, policy, x0, vs);
  g.backward(gr.discounted_return);

  for (int k = 0; k < 5; ++k) {
    std::vector<Tensor> dir(T, Tensor(2, 1));
    double analytic = 0.0;
    for (int t = 0; t < T; ++t) {
      dir[t] << d(rng), d(rng);
      analytic += (g.grad(vs[t]).array() * dir[t].array()).sum();
    }
    const double h = 1e-6;
    std::vector<Tensor> plus = v, minus = v;
    for (int t = 0; t < T; ++t) {
      plus[t] += h * dir[t];
      minus[t] -= h * dir[t];
    }
    const double numeric = (total(plus) - total(minus)) / (2 * h);
    EXPECT_LT(std::abs(analytic - numeric) / std::max(std::abs(analytic), 1e-8), 1e-4)
        << "direction " << k << ": " << analytic << " vs " << numeric;
  }
}

TEST(Rollout, TrajectoryCsv) {
  const Pendulum env;
  const Trajectory traj =
      rollout(env, zero_policy(), 2, 3, UniformNoiseAdapter{0.1, Norm::Linf, 1});
  std::ostringstream os;
  write_trajectory_csv(os, traj, 1);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "t,alpha,alpha_dot,u,reward,v1,v2");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 200);
  EXPECT_THROW(write_trajectory_csv(os, traj, 2), ValidationError);
}

TEST(Rollout, StabilizedFraction) {
  const Pendulum env;
  Tensor x0(2, 2);
  x0 << 0.0, kPi, 0.0, 0.0;
  const Trajectory traj = rollout(env, zero_policy(), x0, 1);
  EXPECT_DOUBLE_EQ(stabilized_fraction(traj, 40, 0.2), 0.5);
}

TEST(Riccati, ScalarFixedPoint) {
  const Tensor a = Tensor::Constant(1, 1, 0.5), b = Tensor::Constant(1, 1, 1.0);
  const Tensor q = Tensor::Constant(1, 1, 1.0), r = Tensor::Constant(1, 1, 1.0);
  const LqrSolution sol = solve_dare(a, b, q, r);
  const double p = sol.p(0, 0);
  EXPECT_NEAR(p, 1.0 + 0.25 * p - 0.25 * p * p / (1.0 + p), 1e-12);
  // p^2 - p/4 - 1 = 0 after clearing the denominator.
  EXPECT_NEAR(p, (0.25 + std::sqrt(0.0625 + 4.0)) / 2.0, 1e-12);
  EXPECT_NEAR(sol.gain(0, 0), 0.5 * p / (1.0 + p), 1e-12);
}

TEST(Riccati, UncontrollableStableSystemCostsOpenLoop) {
  LinearQuadraticParams p;
  p.a = Tensor(2, 2);
  p.a << 0.9, 0.1, 0.0, 0.5;
  p.b = Tensor::Zero(2, 1);
  p.q = Tensor::Identity(2, 2);
  p.r = Tensor::Constant(1, 1, 0.1);
  const LinearQuadratic env(p);
  const LqrSolution sol = solve_dare(p.a, p.b, p.q, p.r);
  EXPECT_EQ(sol.gain.cwiseAbs().maxCoeff(), 0.0);
  const Tensor x0 = sample_initial_states(env, 32, 1);
  const double lqr = linear_policy_cost(env, sol.gain, x0);
  const double open = linear_policy_cost(env, Tensor::Zero(1, 2), x0);
  EXPECT_DOUBLE_EQ(lqr, open);
  // Lyapunov check: the infinite-horizon cost of x0 is x0^T P x0.
  Tensor x = x0;
  double direct = 0.0;
  for (int t = 0; t < 2000; ++t) {
    direct += (x.array() * x.array()).sum();
    x = p.a * x;
  }
  EXPECT_NEAR(direct / 32, (x0.array() * (sol.p * x0).array()).sum() / 32, 1e-9);
}

TEST(Riccati, DoubleIntegratorLqrBeatsAlternatives) {
  const LinearQuadratic env(LinearQuadraticParams::double_integrator());
  const auto& p = env.params();
  const LqrSolution sol = solve_dare(p.a, p.b, p.q, p.r);
  const Tensor x0 = sample_initial_states(env, 256, 3);
  const double lqr = linear_policy_cost(env, sol.gain, x0);
  EXPECT_LT(lqr, linear_policy_cost(env, Tensor::Zero(1, 2), x0));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> d(0.0, 0.1);
  for (int i = 0; i < 20; ++i) {
    Tensor k = sol.gain;
    k(0, 0) += d(rng);
    k(0, 1) += d(rng);
    EXPECT_LT(lqr, linear_policy_cost(env, k, x0));
  }
  // Residual of the Riccati equation itself.
  const Tensor s = p.r + p.b.transpose() * sol.p * p.b;
  const Tensor rhs = p.q + p.a.transpose() * sol.p * p.a -
                     p.a.transpose() * sol.p * p.b * s.inverse() * p.b.transpose() * sol.p * p.a;
  EXPECT_LT((rhs - sol.p).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Riccati, UnstableUncontrollableSignals) {
  const Tensor a = Tensor::Constant(1, 1, 1.5), b = Tensor::Zero(1, 1);
  const Tensor q = Tensor::Constant(1, 1, 1.0), r = Tensor::Constant(1, 1, 1.0);
  EXPECT_THROW(solve_dare(a, b, q, r), NumericError);
}

TEST(LinearQuadratic, GraphMatchesTensorPath) {
  const LinearQuadratic env(LinearQuadraticParams::double_integrator());
  const Tensor x = sample_initial_states(env, 7, 2);
  const Tensor u = Tensor::Random(1, 7);
  Graph g;
  EXPECT_TRUE(env.step(g.constant(x), g.constant(u), nullptr).value().isApprox(env.step(x, u, nullptr)));
  EXPECT_TRUE(env.reward(g.constant(x), g.constant(u)).value().isApprox(env.reward(x, u)));
  EXPECT_NEAR(env.reward(state2(1.0, 2.0), Tensor::Constant(1, 1, 3.0))(0, 0),
              -(1.0 + 0.1 * 4.0 + 0.1 * 9.0), 1e-15);
}
