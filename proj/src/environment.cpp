#include "liprobust/environment.hpp"

#include <cmath>
#include <numbers>

namespace liprobust {

using ad::Graph;
using ad::Var;

double wrap_angle(double angle) {
  constexpr double pi = std::numbers::pi;
  double r = angle - 2.0 * pi * std::floor((angle + pi) / (2.0 * pi));
  if (r >= pi) r -= 2.0 * pi;
  if (r < -pi) r += 2.0 * pi;
  return r;
}

void PendulumParams::validate() const {
  if (!(mass > 0 && length > 0 && gravity > 0 && dt > 0 && max_torque > 0)) {
    throw ValidationError("pendulum parameters must be positive");
  }
  if (!(damping >= 0)) throw ValidationError("pendulum damping must be >= 0");
  if (horizon <= 0) throw ValidationError("pendulum horizon must be positive");
  if (!(noise_scale >= 0)) throw ValidationError("pendulum noise scale must be >= 0");
  if (!(max_torque < mass * gravity * length)) {
    throw ValidationError("max torque must be below m g l so that swing-up needs pumping");
  }
}

Pendulum::Pendulum(PendulumParams params) : params_(params) { params_.validate(); }

Tensor Pendulum::initial_states(int n, std::mt19937_64& rng) const {
  constexpr double pi = std::numbers::pi;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor s(2, n);
  for (int j = 0; j < n; ++j) {
    s(0, j) = pi - 2.0 * pi * unit(rng);  // (-pi, pi]
    s(1, j) = -1.0 + 2.0 * unit(rng);
  }
  return s;
}

Tensor Pendulum::step(const Tensor& state, const Tensor& action, const Tensor* noise) const {
  const PendulumParams& p = params_;
  const double inertia = p.mass * p.length * p.length;
  Tensor next(2, state.cols());
  for (Eigen::Index j = 0; j < state.cols(); ++j) {
    const double u = std::clamp(action(0, j), -p.max_torque, p.max_torque);
    const double w = noise ? (*noise)(0, j) : 0.0;
    const double acc = (p.gravity / p.length) * std::sin(state(0, j)) + (u + w) / inertia -
                       (p.damping / inertia) * state(1, j);
    next(1, j) = state(1, j) + p.dt * acc;
    next(0, j) = wrap_angle(state(0, j) + p.dt * next(1, j));
  }
  return next;
}

Tensor Pendulum::reward(const Tensor& state, const Tensor& action) const {
  Tensor r(1, state.cols());
  for (Eigen::Index j = 0; j < state.cols(); ++j) {
    const double u = std::clamp(action(0, j), -params_.max_torque, params_.max_torque);
    r(0, j) = -(state(0, j) * state(0, j) + 0.1 * state(1, j) * state(1, j) + 0.001 * u * u);
  }
  return r;
}

Var Pendulum::step(Var state, Var action, const Tensor* noise) const {
  Graph& g = *state.graph;
  const PendulumParams& p = params_;
  const double inertia = p.mass * p.length * p.length;
  Var angle = ad::slice_rows(state, 0, 1);
  Var velocity = ad::slice_rows(state, 1, 1);
  Var torque = ad::clip(action, -p.max_torque, p.max_torque);
  if (noise) torque = torque + g.constant(*noise);
  Var acc = (p.gravity / p.length) * ad::sin(angle) + (1.0 / inertia) * torque -
            (p.damping / inertia) * velocity;
  Var next_velocity = velocity + p.dt * acc;
  Var next_angle = ad::wrap_angle(angle + p.dt * next_velocity);
  return ad::concat_rows(next_angle, next_velocity);
}

Var Pendulum::reward(Var state, Var action) const {
  Var angle = ad::slice_rows(state, 0, 1);
  Var velocity = ad::slice_rows(state, 1, 1);
  Var torque = ad::clip(action, -params_.max_torque, params_.max_torque);
  return -(ad::square(angle) + 0.1 * ad::square(velocity) + 0.001 * ad::square(torque));
}

PendulumState Pendulum::step(PendulumState s, double torque, double noise) const {
  Tensor state(2, 1);
  state << s.angle, s.velocity;
  const Tensor w = Tensor::Constant(1, 1, noise);
  const Tensor next = step(state, Tensor::Constant(1, 1, torque), &w);
  return {next(0, 0), next(1, 0)};
}

double Pendulum::reward(PendulumState s, double torque) const {
  Tensor state(2, 1);
  state << s.angle, s.velocity;
  return reward(state, Tensor::Constant(1, 1, torque))(0, 0);
}

double Pendulum::energy(PendulumState s) const {
  const PendulumParams& p = params_;
  return 0.5 * p.mass * p.length * p.length * s.velocity * s.velocity +
         p.mass * p.gravity * p.length * std::cos(s.angle);
}

// ---- linear-quadratic --------------------------------------------------------

LinearQuadraticParams LinearQuadraticParams::double_integrator(double dt) {
  LinearQuadraticParams p;
  p.a = Tensor(2, 2);
  p.a << 1.0, dt, 0.0, 1.0;
  p.b = Tensor(2, 1);
  p.b << 0.5 * dt * dt, dt;
  p.q = Tensor::Zero(2, 2);
  p.q(0, 0) = 1.0;
  p.q(1, 1) = 0.1;
  p.r = Tensor::Constant(1, 1, 0.1);
  p.horizon = 100;
  return p;
}

LinearQuadratic::LinearQuadratic(LinearQuadraticParams params) : params_(std::move(params)) {
  const auto n = params_.a.rows();
  const auto m = params_.b.cols();
  if (params_.a.cols() != n || params_.b.rows() != n || params_.q.rows() != n ||
      params_.q.cols() != n || params_.r.rows() != m || params_.r.cols() != m) {
    throw ShapeError("linear-quadratic system matrices have inconsistent shapes");
  }
  if (params_.horizon <= 0) throw ValidationError("horizon must be positive");
}

Tensor LinearQuadratic::initial_states(int n, std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> d(-params_.init_range, params_.init_range);
  Tensor s(state_dim(), n);
  for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = d(rng);
  return s;
}

Tensor LinearQuadratic::step(const Tensor& state, const Tensor& action, const Tensor* noise) const {
  Tensor u = action;
  if (noise) u += *noise;
  return params_.a * state + params_.b * u;
}

Tensor LinearQuadratic::reward(const Tensor& state, const Tensor& action) const {
  return -((state.array() * (params_.q * state).array()).colwise().sum() +
           (action.array() * (params_.r * action).array()).colwise().sum())
              .matrix();
}

Var LinearQuadratic::step(Var state, Var action, const Tensor* noise) const {
  Graph& g = *state.graph;
  Var u = noise ? action + g.constant(*noise) : action;
  return ad::matmul(g.constant(params_.a), state) + ad::matmul(g.constant(params_.b), u);
}

Var LinearQuadratic::reward(Var state, Var action) const {
  Graph& g = *state.graph;
  return -(ad::col_sums(state * ad::matmul(g.constant(params_.q), state)) +
           ad::col_sums(action * ad::matmul(g.constant(params_.r), action)));
}

LqrSolution solve_dare(const Tensor& a, const Tensor& b, const Tensor& q, const Tensor& r,
                       double tol, int max_iter) {
  LqrSolution sol;
  Tensor p = q;
  for (int it = 1; it <= max_iter; ++it) {
    const Tensor s = r + b.transpose() * p * b;
    const Tensor k = s.ldlt().solve(b.transpose() * p * a);
    Tensor next = q + a.transpose() * p * a - a.transpose() * p * b * k;
    next = 0.5 * (next + next.transpose());
    if (!next.allFinite()) throw NumericError("Riccati iteration diverged");
    const double change = (next - p).cwiseAbs().maxCoeff();
    p = std::move(next);
    if (change <= tol * (1.0 + p.cwiseAbs().maxCoeff())) {
      sol.p = p;
      sol.gain = (r + b.transpose() * p * b).ldlt().solve(b.transpose() * p * a);
      sol.iterations = it;
      return sol;
    }
  }
  throw NumericError("Riccati iteration did not converge");
}

double linear_policy_cost(const LinearQuadratic& env, const Tensor& gain,
                          const Tensor& initial_states) {
  Tensor x = initial_states;
  double total = 0.0;
  for (int t = 0; t < env.horizon(); ++t) {
    const Tensor u = -gain * x;
    total -= env.reward(x, u).sum();
    x = env.step(x, u, nullptr);
  }
  return total / double(initial_states.cols());
}

}  // namespace liprobust
