#pragma once

// Proximal policy optimization with a Gaussian head on a (possibly
// Lipschitz-bounded) mean network and a plain MLP critic.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "liprobust/policy.hpp"
#include "liprobust/rollout.hpp"

namespace liprobust {

struct PPOConfig {
  int num_envs = 64;
  int rollout_len = 200;
  long long total_steps = 2'000'000;
  double discount = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  int epochs = 4;
  int minibatch = 1024;
  double policy_lr = 3e-4;
  double value_lr = 3e-4;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  double init_log_std = -0.5;
  /// Learning rates fall linearly to 0 over the run.
  bool anneal_lr = true;
  /// Multiplies rewards seen by the learner; evaluation uses raw rewards.
  double reward_scale = 1.0;
  std::vector<int> value_widths = {64, 64, 64, 64};
  int eval_episodes = 128;
  /// Deterministic evaluation every this many updates (and after the last).
  int eval_every = 10;
  std::uint64_t eval_seed = 1'000'003;
  std::uint64_t seed = 0;

  void validate() const;
  int updates() const;
};

nlohmann::json to_json(const PPOConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
PPOConfig ppo_config_from_json(const nlohmann::json& j);

struct GaussianPolicy {
  PolicyNetwork mean;
  Tensor log_std;  // action_dim x 1
};

nlohmann::json to_json(const GaussianPolicy& p);
GaussianPolicy gaussian_policy_from_json(const nlohmann::json& j);

/// log N(actions; mean, diag(exp(log_std))^2) per column (1 x N).
ad::Var gaussian_log_prob(ad::Var mean, ad::Var log_std, ad::Var actions);
double gaussian_entropy(const Tensor& log_std);

struct GaeResult {
  Tensor advantages;  // T x N
  Tensor returns;     // T x N
};

/// rewards and dones are T x N (time along rows), values (T + 1) x N with the
/// bootstrap value in the last row.
GaeResult gae(const Tensor& rewards, const Tensor& values, const Tensor& dones, double discount,
              double lambda);

struct MiniBatch {
  Tensor obs;         // state_dim x B
  Tensor actions;     // action_dim x B
  Tensor old_logp;    // 1 x B
  Tensor advantages;  // 1 x B, already normalized
  Tensor returns;     // 1 x B
};

struct LossTerms {
  ad::Var total;
  ad::Var policy;
  ad::Var value;
  ad::Var entropy;
  ad::Var ratio;
};

/// -mean(min(r A, clip(r, 1 - c, 1 + c) A)) + c_v mean((V - R)^2) - c_e H.
LossTerms ppo_loss(ad::Graph& g, const PolicyNetwork& net, const std::vector<ad::Var>& policy_params,
                   ad::Var log_std, const PolicyNetwork& critic,
                   const std::vector<ad::Var>& value_params, const MiniBatch& batch,
                   const PPOConfig& config);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);
  int steps() const { return t_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Rescales grads so their joint norm is at most max_norm; returns the norm
/// before clipping.
double clip_grad_norm(std::vector<Tensor>& grads, double max_norm);

struct EvalResult {
  double mean_return = 0.0;        // discounted
  double mean_total_reward = 0.0;  // undiscounted
  double stabilized = 0.0;         // fraction, pendulum angle criterion
};

/// Deterministic (mean action) evaluation on `episodes` episodes.
EvalResult evaluate(const Environment& env, const PolicyNetwork& net, int episodes,
                    std::uint64_t seed, double discount = 0.99,
                    const PerturbationAdapter& adapter = NoPerturbation{});

struct TrainOutputs {
  /// JSON lines, one record per update.
  std::string metrics_path;
  /// Checkpoints are written here after each evaluation, if set.
  std::string checkpoint_dir;
  std::function<void(const nlohmann::json&)> on_metrics;
};

struct TrainResult {
  GaussianPolicy policy;
  PolicyNetwork critic;
  std::vector<nlohmann::json> metrics;
  EvalResult final_eval;
  long long env_steps = 0;
};

/// Trains `initial` (mean network) on env. Throws NumericError if the loss
/// becomes non-finite, after writing diagnostic.json to the checkpoint dir.
TrainResult train(const Environment& env, PolicyNetwork initial, const PPOConfig& config,
                  const TrainOutputs& outputs = {});

}  // namespace liprobust
