#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "liprobust/lipschitz.hpp"
#include "liprobust/ppo.hpp"

using namespace liprobust;
using ad::Graph;
using ad::Var;

namespace {

Tensor row(std::initializer_list<double> v) {
  Tensor t(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) t(i++, 0) = x;
  return t;
}

// A 10-sample batch with ratios spread around 1 and a few clipped ones.
struct Fixture {
  PolicyNetwork net = build_policy(Architecture::Sandwich, {2, 8, 8, 1}, 4.0, 3);
  PolicyNetwork critic = build_policy(Architecture::Plain, {2, 8, 8, 1}, std::nullopt, 4);
  Tensor log_std = Tensor::Constant(1, 1, -0.3);
  MiniBatch batch;
  PPOConfig config;

  Fixture() {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> d(0.0, 1.0);
    const int n = 10;
    batch.obs.resize(2, n);
    batch.actions.resize(1, n);
    batch.old_logp.resize(1, n);
    batch.advantages.resize(1, n);
    batch.returns.resize(1, n);
    for (int j = 0; j < n; ++j) {
      batch.obs(0, j) = 2 * d(rng);
      batch.obs(1, j) = 2 * d(rng);
      batch.actions(0, j) = d(rng);
      batch.advantages(0, j) = d(rng);
      batch.returns(0, j) = d(rng);
    }
    Graph g;
    const Tensor logp =
        gaussian_log_prob(forward(net, bind_parameters(g, net, false), g.constant(batch.obs)),
                          g.constant(log_std), g.constant(batch.actions))
            .value();
    for (int j = 0; j < n; ++j) {
      // Log-ratio offsets: most inside the clip range, two far outside it.
      const double shift = j == 3 ? 0.6 : j == 7 ? -0.7 : 0.05 * d(rng);
      batch.old_logp(0, j) = logp(0, j) - shift;
    }
    config.entropy_coef = 0.01;
  }
};

}  // namespace

TEST(Gae, LambdaZeroIsTdError) {
  const Tensor r = row({1.0, 2.0, 3.0});
  const Tensor v = row({0.5, 0.1, -0.2, 0.7});
  const GaeResult out = gae(r, v, Tensor::Zero(3, 1), 0.9, 1e-300);
  for (int t = 0; t < 3; ++t) {
    EXPECT_NEAR(out.advantages(t, 0), r(t, 0) + 0.9 * v(t + 1, 0) - v(t, 0), 1e-12);
  }
}

TEST(Gae, LambdaOneZeroValuesIsRewardToGo) {
  const Tensor r = row({1.0, -2.0, 0.5, 4.0});
  const GaeResult out = gae(r, Tensor::Zero(5, 1), Tensor::Zero(4, 1), 0.9, 1.0);
  double g = 0.0;
  for (int t = 3; t >= 0; --t) {
    g = r(t, 0) + 0.9 * g;
    EXPECT_NEAR(out.advantages(t, 0), g, 1e-12);
    EXPECT_NEAR(out.returns(t, 0), g, 1e-12);
  }
}

TEST(Gae, WorkedExample) {
  const GaeResult out = gae(row({1, 1, 1}), Tensor::Zero(4, 1), Tensor::Zero(3, 1), 0.5, 0.5);
  EXPECT_DOUBLE_EQ(out.advantages(0, 0), 1.3125);
  EXPECT_DOUBLE_EQ(out.advantages(1, 0), 1.25);
  EXPECT_DOUBLE_EQ(out.advantages(2, 0), 1.0);
}

TEST(Gae, DoneStopsBootstrap) {
  Tensor dones = Tensor::Zero(2, 1);
  dones(0, 0) = 1.0;
  const GaeResult out = gae(row({1, 1}), row({0, 5, 7}), dones, 0.9, 0.9);
  EXPECT_DOUBLE_EQ(out.advantages(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(out.advantages(1, 0), 1 + 0.9 * 7 - 5);
  EXPECT_THROW(gae(row({1, 1}), row({0, 5}), dones, 0.9, 0.9), ShapeError);
}

TEST(PpoLoss, UnitRatioGivesMinusMeanAdvantage) {
  Fixture f;
  Graph g0;
  f.batch.old_logp =
      gaussian_log_prob(forward(f.net, bind_parameters(g0, f.net, false), g0.constant(f.batch.obs)),
                        g0.constant(f.log_std), g0.constant(f.batch.actions))
          .value();
  Graph g;
  const LossTerms l = ppo_loss(g, f.net, bind_parameters(g, f.net, true), g.parameter(f.log_std),
                               f.critic, bind_parameters(g, f.critic, true), f.batch, f.config);
  EXPECT_NEAR(l.policy.scalar(), -f.batch.advantages.mean(), 1e-12);
  EXPECT_NEAR(l.ratio.value().maxCoeff(), 1.0, 1e-12);
}

TEST(PpoLoss, ClippedTermSubstitution) {
  // One sample: A = 2, ratio = 1.5, clip 0.2 -> min(3.0, 2.4) = 2.4.
  PolicyNetwork net = build_policy(Architecture::Plain, {1, 1}, std::nullopt, 0);
  PolicyNetwork critic = build_policy(Architecture::Plain, {1, 1}, std::nullopt, 1);
  MiniBatch b;
  b.obs = Tensor::Zero(1, 1);
  b.actions = Tensor::Zero(1, 1);  // mean 0 at x = 0 with zero bias
  b.advantages = Tensor::Constant(1, 1, 2.0);
  b.returns = Tensor::Zero(1, 1);
  const Tensor log_std = Tensor::Zero(1, 1);
  b.old_logp = Tensor::Constant(1, 1, -0.5 * std::log(2 * std::numbers::pi) - std::log(1.5));
  PPOConfig c;
  Graph g;
  const LossTerms l = ppo_loss(g, net, bind_parameters(g, net, true), g.parameter(log_std), critic,
                               bind_parameters(g, critic, true), b, c);
  EXPECT_NEAR(l.ratio.scalar(), 1.5, 1e-12);
  EXPECT_NEAR(l.policy.scalar(), -2.4, 1e-12);
}

TEST(PpoLoss, GradientMatchesFiniteDifferences) {
  Fixture f;
  std::vector<Tensor> point = get_parameters(f.net);
  const std::size_t np = point.size();
  point.push_back(f.log_std);
  for (const Tensor& t : get_parameters(f.critic)) point.push_back(t);
  const auto report = ad::grad_check(
      [&](Graph& g, const std::vector<Var>& p) {
        const std::vector<Var> pp(p.begin(), p.begin() + np);
        const std::vector<Var> vp(p.begin() + np + 1, p.end());
        return ppo_loss(g, f.net, pp, p[np], f.critic, vp, f.batch, f.config).total;
      },
      point, 1e-5);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(PpoLoss, InfiniteClipEqualsPolicyGradientSurrogate) {
  Fixture f;
  f.config.clip = std::numeric_limits<double>::infinity();
  Graph g;
  const auto pp = bind_parameters(g, f.net, true);
  Var ls = g.parameter(f.log_std);
  const LossTerms l =
      ppo_loss(g, f.net, pp, ls, f.critic, bind_parameters(g, f.critic, true), f.batch, f.config);
  g.backward(l.policy);
  Graph h;
  const auto hp = bind_parameters(h, f.net, true);
  Var hls = h.parameter(f.log_std);
  Var mean = forward(f.net, hp, h.constant(f.batch.obs));
  Var ratio = ad::exp(gaussian_log_prob(mean, hls, h.constant(f.batch.actions)) -
                      h.constant(f.batch.old_logp));
  Var surrogate = -ad::mean(ratio * h.constant(f.batch.advantages));
  h.backward(surrogate);
  EXPECT_NEAR(l.policy.scalar(), surrogate.scalar(), 1e-12);
  for (std::size_t i = 0; i < pp.size(); ++i) {
    EXPECT_LT((g.grad(pp[i]) - h.grad(hp[i])).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_LT((g.grad(ls) - h.grad(hls)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PpoLoss, ValueLossNeverTouchesPolicy) {
  Fixture f;
  Graph g;
  const auto pp = bind_parameters(g, f.net, true);
  Var ls = g.parameter(f.log_std);
  const auto vp = bind_parameters(g, f.critic, true);
  const LossTerms l = ppo_loss(g, f.net, pp, ls, f.critic, vp, f.batch, f.config);
  g.backward(l.value);
  for (const Var& p : pp) EXPECT_EQ(g.grad(p).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.grad(ls).cwiseAbs().maxCoeff(), 0.0);
  double total = 0.0;
  for (const Var& p : vp) total += g.grad(p).cwiseAbs().sum();
  EXPECT_GT(total, 0.0);
}

TEST(PpoLoss, DivergedRatioSignals) {
  Fixture f;
  f.batch.old_logp(0, 2) = -1e6;
  Graph g;
  EXPECT_THROW(ppo_loss(g, f.net, bind_parameters(g, f.net, true), g.parameter(f.log_std), f.critic,
                        bind_parameters(g, f.critic, true), f.batch, f.config),
               NumericError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor a(2, 1);
  a << 1.0, -2.0;
  Tensor g(2, 1);
  g << 0.3, -5.0;
  Adam opt(0.01);
  opt.step({&a}, {g});
  EXPECT_NEAR(a(0), 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(a(1), -2.0 + 0.01, 1e-9);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, MinimizesQuadratic) {
  Tensor x = Tensor::Constant(3, 1, 5.0);
  Adam opt(0.1);
  for (int i = 0; i < 2000; ++i) opt.step({&x}, {2.0 * x});
  EXPECT_LT(x.cwiseAbs().maxCoeff(), 1e-3);
}

TEST(ClipGradNorm, RescalesJointNorm) {
  std::vector<Tensor> g{Tensor::Constant(1, 1, 3.0), Tensor::Constant(1, 1, 4.0)};
  EXPECT_DOUBLE_EQ(clip_grad_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g[0](0), 0.6, 1e-15);
  EXPECT_NEAR(g[1](0), 0.8, 1e-15);
  EXPECT_DOUBLE_EQ(clip_grad_norm(g, 2.0), 1.0);
  EXPECT_NEAR(g[0](0), 0.6, 1e-15);
}

TEST(PpoConfig, ValidationAndJson) {
  PPOConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.updates(), 157);
  c.gae_lambda = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.clip = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.num_envs = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  const PPOConfig back = ppo_config_from_json({{"num_envs", 8}, {"reward_scale", 0.1}});
  EXPECT_EQ(back.num_envs, 8);
  EXPECT_EQ(back.reward_scale, 0.1);
  EXPECT_EQ(back.rollout_len, 200);
  EXPECT_THROW(ppo_config_from_json({{"bogus", 1}}), ValidationError);
  EXPECT_THROW(ppo_config_from_json({{"num_envs", "many"}}), ValidationError);
}

namespace {

PPOConfig tiny_config(std::uint64_t seed) {
  PPOConfig c;
  c.num_envs = 8;
  c.rollout_len = 50;
  c.total_steps = 8 * 50 * 3;
  c.minibatch = 100;
  c.epochs = 2;
  c.eval_episodes = 8;
  c.eval_every = 2;
  c.reward_scale = 0.1;
  c.seed = seed;
  return c;
}

Pendulum short_pendulum() {
  PendulumParams p;
  p.horizon = 50;
  return Pendulum(p);
}

}  // namespace

TEST(Train, DeterministicMetricsStream) {
  const Pendulum env = short_pendulum();
  auto make = [] { return build_policy(Architecture::Plain, {2, 16, 16, 1}, std::nullopt, 1); };
  const TrainResult a = train(env, make(), tiny_config(4));
  const TrainResult b = train(env, make(), tiny_config(4));
  ASSERT_EQ(a.metrics.size(), 3u);
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    nlohmann::json x = a.metrics[i], y = b.metrics[i];
    x.erase("wall_time");
    y.erase("wall_time");
    EXPECT_EQ(x, y);
  }
  EXPECT_EQ(get_parameters(a.policy.mean), get_parameters(b.policy.mean));
  const TrainResult c = train(env, make(), tiny_config(5));
  EXPECT_NE(a.metrics[0]["mean_reward"], c.metrics[0]["mean_reward"]);
  EXPECT_EQ(a.env_steps, 1200);
  EXPECT_TRUE(a.metrics[1].contains("eval_return"));
  EXPECT_FALSE(a.metrics[0].contains("eval_return"));
}

TEST(Train, CertifiedBoundPreservedAfterUpdates) {
  const Pendulum env = short_pendulum();
  for (Architecture arch : {Architecture::SpectralNorm, Architecture::AOL, Architecture::Cayley,
                            Architecture::Sandwich}) {
    PolicyNetwork net = build_policy(arch, {2, 8, 8, 1}, 4.0, 2);
    const auto before = get_parameters(net);
    const TrainResult r = train(env, net, tiny_config(1));
    EXPECT_NE(get_parameters(r.policy.mean), before);
    EXPECT_EQ(certified_upper_bound(r.policy.mean), 4.0);
    LipschitzOptions o;
    o.iterations = 100;
    EXPECT_LE(empirical_lower_bound(r.policy.mean, DomainBox::pendulum(), o).lower_bound,
              4.0 * (1 + 1e-6));
  }
}

TEST(Train, WritesMetricsAndCheckpoints) {
  const auto dir = std::filesystem::path(::testing::TempDir()) / "ppo_train_out";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  TrainOutputs out;
  out.metrics_path = (dir / "metrics.jsonl").string();
  out.checkpoint_dir = (dir / "checkpoints").string();
  int seen = 0;
  out.on_metrics = [&](const nlohmann::json&) { ++seen; };
  const TrainResult r = train(short_pendulum(),
                              build_policy(Architecture::Sandwich, {2, 8, 1}, 2.0, 1),
                              tiny_config(2), out);
  EXPECT_EQ(seen, 3);
  std::ifstream f(out.metrics_path);
  std::string line;
  int lines = 0;
  while (std::getline(f, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"step", "mean_reward", "policy_loss", "value_loss", "grad_norm",
                            "wall_time"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
    ++lines;
  }
  EXPECT_EQ(lines, 3);
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints" / "checkpoint_2.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints" / "checkpoint_3.json"));
  std::ifstream ck(dir / "checkpoints" / "checkpoint_3.json");
  const GaussianPolicy back = gaussian_policy_from_json(nlohmann::json::parse(ck));
  EXPECT_EQ(get_parameters(back.mean), get_parameters(r.policy.mean));
  EXPECT_EQ(back.log_std, r.policy.log_std);
  std::filesystem::remove_all(dir);
}

TEST(Train, RejectsMismatchedPolicy) {
  EXPECT_THROW(train(short_pendulum(), build_policy(Architecture::Plain, {3, 8, 1}, std::nullopt, 1),
                     tiny_config(1)),
               ShapeError);
}

TEST(Evaluate, StabilizedCountsUprightEpisodes) {
  // Zero mean network: the upright start stays upright, others fall.
  PolicyNetwork net = build_policy(Architecture::Plain, {2, 1}, std::nullopt, 0);
  std::get<PlainLinear>(net.layers[0]).weight.setZero();
  const EvalResult e = evaluate(Pendulum(), net, 16, 3);
  EXPECT_LT(e.stabilized, 0.5);
  EXPECT_LT(e.mean_return, 0.0);
  EXPECT_LT(e.mean_total_reward, e.mean_return);
}
