#include "liprobust/ppo.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

namespace liprobust {

using ad::Graph;
using ad::Var;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

enum TrainPurpose : std::uint64_t { kCollect = 11, kStarts = 12, kShuffle = 13, kCritic = 14 };

}  // namespace

void PPOConfig::validate() const {
  if (num_envs <= 0 || rollout_len <= 0 || total_steps <= 0 || epochs <= 0 || minibatch <= 0 ||
      eval_episodes <= 0 || eval_every <= 0) {
    throw ValidationError("PPO counts must be positive");
  }
  if (!(discount > 0 && discount <= 1)) throw ValidationError("discount must be in (0, 1]");
  if (!(gae_lambda > 0 && gae_lambda <= 1)) throw ValidationError("GAE lambda must be in (0, 1]");
  if (!(clip > 0 && clip < 1)) throw ValidationError("clip must be in (0, 1)");
  if (!(policy_lr > 0 && value_lr > 0)) throw ValidationError("learning rates must be positive");
  if (!(entropy_coef >= 0 && value_coef >= 0)) throw ValidationError("loss coefficients must be >= 0");
  if (!(max_grad_norm > 0)) throw ValidationError("max grad norm must be positive");
  if (!(reward_scale > 0)) throw ValidationError("reward scale must be positive");
  if (!std::isfinite(init_log_std)) throw ValidationError("initial log std must be finite");
  for (int w : value_widths) {
    if (w <= 0) throw ValidationError("value widths must be positive");
  }
}

int PPOConfig::updates() const {
  const long long per_update = static_cast<long long>(num_envs) * rollout_len;
  return static_cast<int>(std::max<long long>(1, (total_steps + per_update - 1) / per_update));
}

nlohmann::json to_json(const PPOConfig& c) {
  return {{"num_envs", c.num_envs},         {"rollout_len", c.rollout_len},
          {"total_steps", c.total_steps},   {"discount", c.discount},
          {"gae_lambda", c.gae_lambda},     {"clip", c.clip},
          {"epochs", c.epochs},             {"minibatch", c.minibatch},
          {"policy_lr", c.policy_lr},       {"value_lr", c.value_lr},
          {"entropy_coef", c.entropy_coef}, {"value_coef", c.value_coef},
          {"max_grad_norm", c.max_grad_norm}, {"init_log_std", c.init_log_std},
          {"reward_scale", c.reward_scale}, {"value_widths", c.value_widths},
          {"anneal_lr", c.anneal_lr},
          {"eval_episodes", c.eval_episodes}, {"eval_every", c.eval_every},
          {"eval_seed", c.eval_seed},       {"seed", c.seed}};
}

PPOConfig ppo_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("PPO config must be a JSON object");
  PPOConfig c;
  const nlohmann::json defaults = to_json(c);
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ValidationError("unknown PPO config key: " + key);
  }
  try {
    c.num_envs = j.value("num_envs", c.num_envs);
    c.rollout_len = j.value("rollout_len", c.rollout_len);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.discount = j.value("discount", c.discount);
    c.gae_lambda = j.value("gae_lambda", c.gae_lambda);
    c.clip = j.value("clip", c.clip);
    c.epochs = j.value("epochs", c.epochs);
    c.minibatch = j.value("minibatch", c.minibatch);
    c.policy_lr = j.value("policy_lr", c.policy_lr);
    c.value_lr = j.value("value_lr", c.value_lr);
    c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
    c.value_coef = j.value("value_coef", c.value_coef);
    c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
    c.init_log_std = j.value("init_log_std", c.init_log_std);
    c.reward_scale = j.value("reward_scale", c.reward_scale);
    c.anneal_lr = j.value("anneal_lr", c.anneal_lr);
    c.value_widths = j.value("value_widths", c.value_widths);
    c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.eval_seed = j.value("eval_seed", c.eval_seed);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed PPO config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const GaussianPolicy& p) {
  nlohmann::json j = to_json(p.mean);
  j["log_std"] = tensor_to_json(p.log_std);
  return j;
}

GaussianPolicy gaussian_policy_from_json(const nlohmann::json& j) {
  GaussianPolicy p;
  p.mean = policy_from_json(j);
  if (j.contains("log_std")) {
    p.log_std = tensor_from_json(j["log_std"]);
  } else {
    p.log_std = Tensor::Constant(p.mean.output_dim(), 1, PPOConfig{}.init_log_std);
  }
  if (p.log_std.rows() != p.mean.output_dim() || p.log_std.cols() != 1) {
    throw ValidationError("log_std does not match the action dimension");
  }
  return p;
}

Var gaussian_log_prob(Var mean, Var log_std, Var actions) {
  const double dim = static_cast<double>(mean.rows());
  Var z = (actions - mean) * ad::exp(-log_std);
  return -0.5 * ad::col_sums(ad::square(z)) - ad::sum(log_std) - 0.5 * dim * kLog2Pi;
}

double gaussian_entropy(const Tensor& log_std) {
  return log_std.sum() + 0.5 * double(log_std.rows()) * (1.0 + kLog2Pi);
}

GaeResult gae(const Tensor& rewards, const Tensor& values, const Tensor& dones, double discount,
              double lambda) {
  const Eigen::Index T = rewards.rows(), N = rewards.cols();
  if (values.rows() != T + 1 || values.cols() != N || dones.rows() != T || dones.cols() != N) {
    throw ShapeError("gae: values must be (T + 1) x N and dones T x N");
  }
  GaeResult out;
  out.advantages = Tensor::Zero(T, N);
  Eigen::RowVectorXd next = Eigen::RowVectorXd::Zero(N);
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const Eigen::RowVectorXd live = (1.0 - dones.row(t).array()).matrix();
    const Eigen::RowVectorXd delta =
        rewards.row(t) + discount * values.row(t + 1).cwiseProduct(live) - values.row(t);
    next = delta + discount * lambda * live.cwiseProduct(next);
    out.advantages.row(t) = next;
  }
  out.returns = out.advantages + values.topRows(T);
  return out;
}

LossTerms ppo_loss(Graph& g, const PolicyNetwork& net, const std::vector<Var>& policy_params,
                   Var log_std, const PolicyNetwork& critic, const std::vector<Var>& value_params,
                   const MiniBatch& batch, const PPOConfig& config) {
  LossTerms out;
  Var obs = g.constant(batch.obs);
  Var mean = forward(net, policy_params, obs);
  Var logp = gaussian_log_prob(mean, log_std, g.constant(batch.actions));
  out.ratio = ad::exp(logp - g.constant(batch.old_logp));
  Var adv = g.constant(batch.advantages);
  Var clipped = ad::clip(out.ratio, 1.0 - config.clip, 1.0 + config.clip);
  out.policy = -ad::mean(ad::minimum(out.ratio * adv, clipped * adv));

  Var v = forward(critic, value_params, obs);
  out.value = ad::mean(ad::square(v - g.constant(batch.returns)));
  const double dim = static_cast<double>(log_std.rows());
  out.entropy = ad::sum(log_std) + 0.5 * dim * (1.0 + kLog2Pi);
  out.total = out.policy + config.value_coef * out.value - config.entropy_coef * out.entropy;
  return out;
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw ShapeError("Adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.push_back(Tensor::Zero(p->rows(), p->cols()));
      v_.push_back(Tensor::Zero(p->rows(), p->cols()));
    }
  }
  if (m_.size() != params.size()) throw ShapeError("Adam: parameter set changed");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseAbs2();
    params[i]->array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

double clip_grad_norm(std::vector<Tensor>& grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (norm > max_norm) {
    for (Tensor& g : grads) g *= max_norm / norm;
  }
  return norm;
}

EvalResult evaluate(const Environment& env, const PolicyNetwork& net, int episodes,
                    std::uint64_t seed, double discount, const PerturbationAdapter& adapter) {
  const PolicySnapshot snap{net};
  RolloutOptions o;
  o.discount = discount;
  const Trajectory traj = rollout(env, std::cref(snap), episodes, seed, adapter, o);
  EvalResult r;
  r.mean_return = traj.mean_return();
  double total = 0.0;
  for (const Tensor& rt : traj.rewards) total += rt.sum();
  r.mean_total_reward = total / episodes;
  const int window = std::min(40, traj.horizon() + 1);
  r.stabilized = stabilized_fraction(traj, window, 0.2);
  return r;
}

namespace {

std::vector<Tensor*> parameter_refs(PolicyNetwork& net) {
  std::vector<Tensor*> out;
  net.for_each_param([&](const char*, Tensor& t) { out.push_back(&t); });
  return out;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

}  // namespace

TrainResult train(const Environment& env, PolicyNetwork initial, const PPOConfig& config,
                  const TrainOutputs& outputs) {
  config.validate();
  const int sdim = env.state_dim(), adim = env.action_dim();
  if (initial.input_dim() != sdim || initial.output_dim() != adim) {
    throw ShapeError("policy dimensions do not match the environment");
  }
  const auto start_time = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  };

  TrainResult result;
  GaussianPolicy& policy = result.policy;
  policy.mean = std::move(initial);
  policy.log_std = Tensor::Constant(adim, 1, config.init_log_std);
  std::vector<int> critic_widths{sdim};
  critic_widths.insert(critic_widths.end(), config.value_widths.begin(), config.value_widths.end());
  critic_widths.push_back(1);
  result.critic = build_policy(Architecture::Plain, critic_widths, std::nullopt,
                               stream_rng(config.seed, 0, kCritic)());
  PolicyNetwork& critic = result.critic;

  Adam policy_opt(config.policy_lr), value_opt(config.value_lr);
  std::ofstream metrics_file;
  if (!outputs.metrics_path.empty()) {
    metrics_file.open(outputs.metrics_path);
    if (!metrics_file) throw ValidationError("cannot write " + outputs.metrics_path);
  }
  if (!outputs.checkpoint_dir.empty()) std::filesystem::create_directories(outputs.checkpoint_dir);

  const int N = config.num_envs, T = config.rollout_len;
  const Eigen::Index B = Eigen::Index(N) * T;
  const int updates = config.updates();
  std::optional<EvalResult> last_eval;

  for (int update = 0; update < updates; ++update) {
    if (config.anneal_lr) {
      const double frac = 1.0 - double(update) / double(updates);
      policy_opt.set_lr(frac * config.policy_lr);
      value_opt.set_lr(frac * config.value_lr);
    }

    // ---- collect ---------------------------------------------------------
    const PolicySnapshot actor{policy.mean};
    const PolicySnapshot value_fn{critic};
    auto rng = stream_rng(config.seed, update, kCollect);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::uint64_t start_seed = stream_rng(config.seed, update, kStarts)();
    Tensor x = sample_initial_states(env, N, start_seed);
    const Tensor stdv = policy.log_std.array().exp().matrix();

    MiniBatch all;
    all.obs.resize(sdim, B);
    all.actions.resize(adim, B);
    all.old_logp.resize(1, B);
    Tensor rewards(T, N), values(T + 1, N);
    const Tensor dones = Tensor::Zero(T, N);
    double episode_reward = 0.0;
    for (int t = 0; t < T; ++t) {
      const Tensor mean = actor(x);
      Tensor xi(adim, N);
      for (Eigen::Index i = 0; i < xi.size(); ++i) xi(i) = normal(rng);
      const Tensor u = mean + (xi.array().colwise() * stdv.col(0).array()).matrix();
      Tensor w;
      if (env.noise_scale() > 0) {
        w.resize(adim, N);
        for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = env.noise_scale() * normal(rng);
      }
      const Tensor r = env.reward(x, u);
      episode_reward += r.sum();
      all.obs.middleCols(Eigen::Index(t) * N, N) = x;
      all.actions.middleCols(Eigen::Index(t) * N, N) = u;
      all.old_logp.middleCols(Eigen::Index(t) * N, N) =
          (-0.5 * xi.colwise().squaredNorm()).array() - policy.log_std.sum() - 0.5 * adim * kLog2Pi;
      rewards.row(t) = config.reward_scale * r;
      values.row(t) = value_fn(x);
      x = env.step(x, u, w.size() ? &w : nullptr);
      if (!x.allFinite()) throw NumericError("non-finite state during collection");
    }
    // Segments end by time limit, so the last value bootstraps the tail.
    values.row(T) = value_fn(x);
    result.env_steps += B;

    const GaeResult adv = gae(rewards, values, dones, config.discount, config.gae_lambda);
    // Flatten time-major to match the column layout of `all`.
    all.advantages.resize(1, B);
    all.returns.resize(1, B);
    for (int t = 0; t < T; ++t) {
      all.advantages.middleCols(Eigen::Index(t) * N, N) = adv.advantages.row(t);
      all.returns.middleCols(Eigen::Index(t) * N, N) = adv.returns.row(t);
    }
    {
      const double mu = all.advantages.mean();
      const double sd = std::sqrt((all.advantages.array() - mu).square().mean());
      all.advantages = ((all.advantages.array() - mu) / (sd + 1e-8)).matrix();
    }

    // ---- optimize --------------------------------------------------------
    std::vector<Eigen::Index> order(B);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    auto shuffle_rng = stream_rng(config.seed, update, kShuffle);
    double sum_policy = 0, sum_value = 0, sum_grad = 0, sum_vgrad = 0, sum_clipfrac = 0;
    double sum_kl = 0;
    int n_mb = 0;
    const Eigen::Index mb = std::min<Eigen::Index>(config.minibatch, B);
    try {
      for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (Eigen::Index s = 0; s + mb <= B; s += mb) {
          MiniBatch m;
          m.obs.resize(sdim, mb);
          m.actions.resize(adim, mb);
          m.old_logp.resize(1, mb);
          m.advantages.resize(1, mb);
          m.returns.resize(1, mb);
          for (Eigen::Index k = 0; k < mb; ++k) {
            const Eigen::Index c = order[s + k];
            m.obs.col(k) = all.obs.col(c);
            m.actions.col(k) = all.actions.col(c);
            m.old_logp(0, k) = all.old_logp(0, c);
            m.advantages(0, k) = all.advantages(0, c);
            m.returns(0, k) = all.returns(0, c);
          }
          Graph g;
          const std::vector<Var> pp = bind_parameters(g, policy.mean, true);
          Var log_std = g.parameter(policy.log_std, "log_std");
          const std::vector<Var> vp = bind_parameters(g, critic, true);
          const LossTerms loss = ppo_loss(g, policy.mean, pp, log_std, critic, vp, m, config);
          if (!std::isfinite(loss.total.scalar())) throw NumericError("non-finite PPO loss");
          g.backward(loss.total);

          std::vector<Tensor> pg, vg;
          for (const Var& p : pp) pg.push_back(g.grad(p));
          pg.push_back(g.grad(log_std));
          for (const Var& p : vp) vg.push_back(g.grad(p));
          sum_grad += clip_grad_norm(pg, config.max_grad_norm);
          sum_vgrad += clip_grad_norm(vg, config.max_grad_norm);

          std::vector<Tensor*> prefs = parameter_refs(policy.mean);
          prefs.push_back(&policy.log_std);
          policy_opt.step(prefs, pg);
          value_opt.step(parameter_refs(critic), vg);

          const Tensor& ratio = loss.ratio.value();
          sum_policy += loss.policy.scalar();
          sum_value += loss.value.scalar();
          sum_clipfrac += ((ratio.array() - 1.0).abs() > config.clip).cast<double>().mean();
          sum_kl += ((ratio.array() - 1.0) - ratio.array().log()).mean();
          ++n_mb;
        }
      }
    } catch (const NumericError& e) {
      if (!outputs.checkpoint_dir.empty()) {
        nlohmann::json diag = to_json(policy);
        diag["metadata"]["error"] = e.what();
        diag["metadata"]["update"] = update;
        write_json(std::filesystem::path(outputs.checkpoint_dir) / "diagnostic.json", diag);
      }
      throw;
    }

    nlohmann::json rec{{"update", update + 1},
                       {"step", result.env_steps},
                       {"mean_reward", episode_reward / N},
                       {"policy_loss", sum_policy / n_mb},
                       {"value_loss", sum_value / n_mb},
                       {"entropy", gaussian_entropy(policy.log_std)},
                       {"approx_kl", sum_kl / n_mb},
                       {"clip_fraction", sum_clipfrac / n_mb},
                       {"grad_norm", sum_grad / n_mb},
                       {"value_grad_norm", sum_vgrad / n_mb},
                       {"log_std", std::vector<double>(policy.log_std.data(),
                                                       policy.log_std.data() + adim)}};
    const bool do_eval = (update + 1) % config.eval_every == 0 || update + 1 == updates;
    if (do_eval) {
      last_eval = evaluate(env, policy.mean, config.eval_episodes, config.eval_seed,
                           config.discount);
      rec["eval_return"] = last_eval->mean_return;
      rec["eval_total_reward"] = last_eval->mean_total_reward;
      rec["eval_stabilized"] = last_eval->stabilized;
      if (!outputs.checkpoint_dir.empty()) {
        nlohmann::json ck = to_json(policy);
        ck["metadata"]["update"] = update + 1;
        ck["metadata"]["env_steps"] = result.env_steps;
        ck["metadata"]["eval_return"] = last_eval->mean_return;
        write_json(std::filesystem::path(outputs.checkpoint_dir) /
                       ("checkpoint_" + std::to_string(update + 1) + ".json"),
                   ck);
      }
    }
    rec["wall_time"] = elapsed();
    if (metrics_file.is_open()) metrics_file << rec.dump() << '\n' << std::flush;
    if (outputs.on_metrics) outputs.on_metrics(rec);
    result.metrics.push_back(std::move(rec));
  }
  result.final_eval = *last_eval;
  policy.mean.metadata["env_steps"] = result.env_steps;
  policy.mean.metadata["eval_return"] = result.final_eval.mean_return;
  policy.mean.metadata["eval_stabilized"] = result.final_eval.stabilized;
  return result;
}

}  // namespace liprobust
