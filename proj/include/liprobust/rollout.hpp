#pragma once

// Closed-loop rollouts with observation perturbations.
//
// The policy sees obs_t = x_t + v_t where v_t comes from the adapter. A batch
// of N episodes is simulated column-wise; every episode draws its random
// numbers from its own stream derived from (seed, episode index), so results
// do not depend on the batch size.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "liprobust/environment.hpp"

namespace liprobust {

enum class Norm { L2, Linf };

std::string to_string(Norm n);
Norm norm_from_string(const std::string& s);

/// Independent generator for (seed, index, purpose).
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t purpose);

struct NoPerturbation {};

/// obs_t = x_{t-k}; x_0 for t < k.
struct DelayAdapter {
  int k = 0;
};

/// v_t uniform in the eps-ball of `norm`, fresh each step. For L_inf this is
/// uniform(-eps, eps) per component.
struct UniformNoiseAdapter {
  double epsilon = 0.0;
  Norm norm = Norm::Linf;
  std::uint64_t seed = 0;
};

/// v_t given explicitly; each entry is state_dim x N or state_dim x 1.
struct FixedSequenceAdapter {
  std::vector<Tensor> sequence;
};

using PerturbationAdapter =
    std::variant<NoPerturbation, DelayAdapter, UniformNoiseAdapter, FixedSequenceAdapter>;

enum class ActionMode { Deterministic, Stochastic };

/// Maps observations (state_dim x N) to mean actions (action_dim x N).
using PolicyFn = std::function<Tensor(const Tensor&)>;
using GraphPolicyFn = std::function<ad::Var(ad::Graph&, ad::Var)>;

struct RolloutOptions {
  ActionMode mode = ActionMode::Deterministic;
  Tensor log_std;  // action_dim x 1, used in stochastic mode
  double discount = 0.99;
  int horizon = 0;  // 0: the environment's horizon
};

struct Trajectory {
  std::vector<Tensor> states;         // horizon + 1 entries, state_dim x N
  std::vector<Tensor> observations;   // horizon entries
  std::vector<Tensor> actions;        // policy output before clipping
  std::vector<Tensor> rewards;        // 1 x N
  std::vector<Tensor> perturbations;  // observation - state
  Tensor discounted_return;           // 1 x N
  double discount = 0.99;

  int horizon() const { return static_cast<int>(rewards.size()); }
  int episodes() const { return states.empty() ? 0 : static_cast<int>(states.front().cols()); }
  double mean_return() const { return discounted_return.mean(); }
};

Trajectory rollout(const Environment& env, const PolicyFn& policy, const Tensor& initial_states,
                   std::uint64_t seed, const PerturbationAdapter& adapter = NoPerturbation{},
                   const RolloutOptions& options = {});

/// Initial states drawn from env.initial_states with per-episode streams.
Tensor sample_initial_states(const Environment& env, int episodes, std::uint64_t seed);

Trajectory rollout(const Environment& env, const PolicyFn& policy, int episodes,
                   std::uint64_t seed, const PerturbationAdapter& adapter = NoPerturbation{},
                   const RolloutOptions& options = {});

struct GraphRollout {
  ad::Var discounted_return;  // 1 x N
  ad::Var final_state;
  std::vector<ad::Var> states;  // horizon + 1 entries
};

/// Records a deterministic rollout under additive perturbations on g so that
/// the return can be differentiated with respect to them. Reward t is
/// discounted by discount^(t + discount_offset). `process_noise`, if given,
/// holds one action_dim x N draw per step.
GraphRollout rollout_on_graph(ad::Graph& g, const Environment& env, const GraphPolicyFn& policy,
                              const Tensor& initial_states,
                              const std::vector<ad::Var>& perturbations, double discount = 0.99,
                              int discount_offset = 0,
                              const std::vector<Tensor>* process_noise = nullptr);

/// CSV with columns t, alpha, alpha_dot, u, reward, v1, v2 for one episode.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj, int episode = 0);
void write_trajectory_csv(const std::string& path, const Trajectory& traj, int episode = 0);

/// Fraction of episodes with |state(0)| < tol at every one of the last
/// `window` states.
double stabilized_fraction(const Trajectory& traj, int window, double tol);
/// Per-episode version of stabilized_fraction.
std::vector<bool> stabilized_episodes(const Trajectory& traj, int window, double tol);

}  // namespace liprobust
