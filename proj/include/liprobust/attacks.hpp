#pragma once

// Observation attacks: per-step PGD on the policy output, reward-minimizing
// trajectory attacks through a recorded rollout, sample delays and uniform
// noise.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "liprobust/policy.hpp"
#include "liprobust/rollout.hpp"

namespace liprobust {

enum class AttackKind { None, PgdStep, Trajectory, Delay, UniformNoise };

std::string to_string(AttackKind k);
AttackKind attack_kind_from_string(const std::string& s);

struct AttackSpec {
  AttackKind kind = AttackKind::None;
  Norm norm = Norm::L2;
  double epsilon = 0.0;
  /// PGD steps, or gradient steps per window for trajectory attacks.
  int steps = 0;
  /// 0 selects the default for the kind.
  double step_size = 0.0;
  int windows = 4;
  int window_len = 50;
  int delay = 0;
  /// PGD starting points per input.
  int restarts = 4;
  std::uint64_t seed = 0;

  /// PGD: 50 steps of 2.5 eps / 50.
  static AttackSpec pgd(double epsilon, Norm norm = Norm::L2);
  /// 4 windows x 50 steps, 200 steps per window of 0.02 eps.
  static AttackSpec trajectory(double epsilon);
  static AttackSpec delay_samples(int k);
  static AttackSpec uniform_noise(double epsilon, std::uint64_t seed, Norm norm = Norm::Linf);

  /// Step size with defaults filled in.
  double effective_step() const;
  int effective_steps() const;
  void validate() const;
};

nlohmann::json to_json(const AttackSpec& s);
AttackSpec attack_spec_from_json(const nlohmann::json& j);

PerturbationAdapter delay_adapter(int k);
PerturbationAdapter uniform_noise_adapter(double epsilon, std::uint64_t seed,
                                          Norm norm = Norm::Linf);

/// Projects each column onto the eps-ball of `norm`.
void project(Tensor& v, double epsilon, Norm norm);

struct PgdResult {
  Tensor v;          // input_dim x N, best perturbation per column
  Tensor deviation;  // 1 x N, |k(x + v) - k(x)|_2
  /// Mean best deviation after each iterate, starting with the initial one.
  std::vector<double> history;
};

/// Radius of the random PGD starting points, relative to eps.
inline constexpr double kPgdStartFraction = 1e-3;

/// Maximizes |k(x + v) - k(x)|_2 over |v| <= eps for every column of x.
/// Each restart starts from a small random v; L2 uses normalized-gradient
/// steps and radial projection, L_inf sign steps and clamping. The best
/// iterate over all restarts is kept.
PgdResult pgd_step_attack(const GraphPolicyFn& policy, const Tensor& x, double epsilon, Norm norm,
                          int steps, double step_size, std::uint64_t seed = 0, int restarts = 4);
PgdResult pgd_step_attack(const PolicyNetwork& net, const Tensor& x, const AttackSpec& spec);

struct AttackResult {
  AttackSpec spec;
  Trajectory trajectory;      // attacked rollout
  Tensor nominal_return;      // 1 x N
  Tensor attacked_return;     // 1 x N
  double max_output_deviation = 0.0;
  int iterations = 0;

  /// Largest |v_t| over episodes, per step.
  std::vector<double> per_step_norms() const;
  nlohmann::json to_json(const std::string& trajectory_csv = {}) const;
};

/// Windows are optimized in sequence; each starts from the previous window's
/// attacked terminal state with v = 0 and keeps its best iterate. An episode
/// whose attacked return would exceed its nominal return keeps v = 0.
AttackResult trajectory_attack(const Environment& env, const PolicyNetwork& net,
                               const Tensor& initial_states, const AttackSpec& spec,
                               double discount = 0.99);

/// Runs any attack kind on a batch of episodes; the policy acts on its mean.
AttackResult run_attack(const Environment& env, const PolicyNetwork& net,
                        const Tensor& initial_states, const AttackSpec& spec,
                        double discount = 0.99);

}  // namespace liprobust
