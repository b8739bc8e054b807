#pragma once

// Batched, differentiable control environments.
//
// States are stored column-wise: a batch of N states is a (state_dim x N)
// Tensor, actions are (action_dim x N). Every environment has a Tensor path
// for fast simulation and a graph path for differentiating through rollouts;
// both evaluate the same update rule.

#include <cstdint>
#include <limits>
#include <random>

#include "liprobust/autodiff.hpp"

namespace liprobust {

class Environment {
 public:
  virtual ~Environment() = default;

  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual int horizon() const = 0;
  /// Symmetric limit applied to actions inside step(); infinity if none.
  virtual double action_limit() const { return std::numeric_limits<double>::infinity(); }
  /// Standard deviation of additive process noise; 0 disables it.
  virtual double noise_scale() const { return 0.0; }

  virtual Tensor initial_states(int n, std::mt19937_64& rng) const = 0;
  /// `noise` (action_dim x N) is added to the applied action; may be null.
  virtual Tensor step(const Tensor& state, const Tensor& action, const Tensor* noise) const = 0;
  /// Reward for taking `action` in `state` (1 x N), using the applied action.
  virtual Tensor reward(const Tensor& state, const Tensor& action) const = 0;

  virtual ad::Var step(ad::Var state, ad::Var action, const Tensor* noise) const = 0;
  virtual ad::Var reward(ad::Var state, ad::Var action) const = 0;
};

double wrap_angle(double angle);

struct PendulumParams {
  double mass = 0.25;      // kg
  double length = 0.5;     // m
  double gravity = 9.81;   // m/s^2
  double damping = 0.01;   // N m s
  double dt = 0.05;        // s
  double max_torque = 1.0; // N m
  int horizon = 200;
  double noise_scale = 0.0;  // N m

  /// Throws ValidationError unless every field is positive (damping and
  /// noise may be 0) and max_torque < m g l, so that swing-up needs pumping.
  void validate() const;
};

struct PendulumState {
  double angle = 0.0;     // rad, 0 upright, wrapped to [-pi, pi)
  double velocity = 0.0;  // rad/s
};

/// Angle 0 is upright. Semi-implicit Euler:
///   w' = w + dt ((g/l) sin a + (u + noise)/(m l^2) - c w/(m l^2))
///   a' = wrap(a + dt w')
/// with u clipped to [-max_torque, max_torque].
class Pendulum final : public Environment {
 public:
  explicit Pendulum(PendulumParams params = {});

  const PendulumParams& params() const { return params_; }

  int state_dim() const override { return 2; }
  int action_dim() const override { return 1; }
  int horizon() const override { return params_.horizon; }
  double action_limit() const override { return params_.max_torque; }
  double noise_scale() const override { return params_.noise_scale; }

  /// angle ~ U(-pi, pi], velocity ~ U(-1, 1).
  Tensor initial_states(int n, std::mt19937_64& rng) const override;
  Tensor step(const Tensor& state, const Tensor& action, const Tensor* noise) const override;
  /// -(a^2 + 0.1 w^2 + 0.001 u^2)
  Tensor reward(const Tensor& state, const Tensor& action) const override;
  ad::Var step(ad::Var state, ad::Var action, const Tensor* noise) const override;
  ad::Var reward(ad::Var state, ad::Var action) const override;

  PendulumState step(PendulumState s, double torque, double noise = 0.0) const;
  double reward(PendulumState s, double torque) const;
  /// 1/2 m l^2 w^2 + m g l cos a
  double energy(PendulumState s) const;

 private:
  PendulumParams params_;
};

/// Linear system x' = A x + B u with reward -(x^T Q x + u^T R u).
struct LinearQuadraticParams {
  Tensor a, b, q, r;
  int horizon = 100;
  double init_range = 1.0;  // initial states ~ U(-range, range) per component

  /// Double integrator with sample time dt: position/velocity, force input.
  static LinearQuadraticParams double_integrator(double dt = 0.1);
};

class LinearQuadratic final : public Environment {
 public:
  explicit LinearQuadratic(LinearQuadraticParams params);

  const LinearQuadraticParams& params() const { return params_; }

  int state_dim() const override { return static_cast<int>(params_.a.rows()); }
  int action_dim() const override { return static_cast<int>(params_.b.cols()); }
  int horizon() const override { return params_.horizon; }

  Tensor initial_states(int n, std::mt19937_64& rng) const override;
  Tensor step(const Tensor& state, const Tensor& action, const Tensor* noise) const override;
  Tensor reward(const Tensor& state, const Tensor& action) const override;
  ad::Var step(ad::Var state, ad::Var action, const Tensor* noise) const override;
  ad::Var reward(ad::Var state, ad::Var action) const override;

 private:
  LinearQuadraticParams params_;
};

struct LqrSolution {
  Tensor p;     // Riccati fixed point
  Tensor gain;  // u = -gain x
  int iterations = 0;
};

/// Solves the discrete algebraic Riccati equation by fixed-point iteration
/// until the update changes P by less than tol (relative). Throws
/// NumericError on non-convergence.
LqrSolution solve_dare(const Tensor& a, const Tensor& b, const Tensor& q, const Tensor& r,
                       double tol = 1e-12, int max_iter = 200000);

/// Mean undiscounted cost (-sum of rewards over the horizon) of the linear
/// feedback u = -gain x from the given initial states (state_dim x N).
double linear_policy_cost(const LinearQuadratic& env, const Tensor& gain,
                          const Tensor& initial_states);

}  // namespace liprobust
