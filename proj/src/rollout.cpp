#include "liprobust/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

namespace liprobust {

namespace {

enum Purpose : std::uint64_t { kInitial = 1, kObservationNoise = 2, kActionNoise = 3, kProcess = 4 };

std::vector<std::mt19937_64> episode_streams(std::uint64_t seed, int n, Purpose purpose) {
  std::vector<std::mt19937_64> out;
  out.reserve(n);
  for (int j = 0; j < n; ++j) out.push_back(stream_rng(seed, j, purpose));
  return out;
}

Tensor uniform_ball_noise(std::vector<std::mt19937_64>& rngs, Eigen::Index dim, double eps,
                          Norm norm) {
  Tensor v(dim, static_cast<Eigen::Index>(rngs.size()));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t j = 0; j < rngs.size(); ++j) {
    auto& rng = rngs[j];
    if (norm == Norm::Linf) {
      for (Eigen::Index i = 0; i < dim; ++i) v(i, j) = eps * (2.0 * unit(rng) - 1.0);
    } else {
      Eigen::VectorXd d(dim);
      for (Eigen::Index i = 0; i < dim; ++i) d(i) = normal(rng);
      const double radius = eps * std::pow(unit(rng), 1.0 / double(dim));
      const double n = d.norm();
      v.col(j) = n > 0 ? Eigen::VectorXd(d * (radius / n)) : Eigen::VectorXd::Zero(dim);
    }
  }
  return v;
}

Tensor normal_draws(std::vector<std::mt19937_64>& rngs, Eigen::Index dim, double scale) {
  Tensor w(dim, static_cast<Eigen::Index>(rngs.size()));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t j = 0; j < rngs.size(); ++j) {
    for (Eigen::Index i = 0; i < dim; ++i) w(i, j) = scale * normal(rngs[j]);
  }
  return w;
}

}  // namespace

std::string to_string(Norm n) { return n == Norm::L2 ? "l2" : "linf"; }

Norm norm_from_string(const std::string& s) {
  if (s == "l2" || s == "L2") return Norm::L2;
  if (s == "linf" || s == "Linf" || s == "inf") return Norm::Linf;
  throw ValidationError("unknown norm: " + s);
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    static_cast<std::uint32_t>(purpose)};
  return std::mt19937_64(seq);
}

Tensor sample_initial_states(const Environment& env, int episodes, std::uint64_t seed) {
  if (episodes <= 0) throw ValidationError("episode count must be positive");
  Tensor x0(env.state_dim(), episodes);
  for (int j = 0; j < episodes; ++j) {
    auto rng = stream_rng(seed, j, kInitial);
    x0.col(j) = env.initial_states(1, rng);
  }
  return x0;
}

Trajectory rollout(const Environment& env, const PolicyFn& policy, int episodes,
                   std::uint64_t seed, const PerturbationAdapter& adapter,
                   const RolloutOptions& options) {
  return rollout(env, policy, sample_initial_states(env, episodes, seed), seed, adapter, options);
}

Trajectory rollout(const Environment& env, const PolicyFn& policy, const Tensor& initial_states,
                   std::uint64_t seed, const PerturbationAdapter& adapter,
                   const RolloutOptions& options) {
  const int horizon = options.horizon > 0 ? options.horizon : env.horizon();
  const Eigen::Index n = initial_states.cols();
  const Eigen::Index sdim = env.state_dim();
  if (initial_states.rows() != sdim) throw ShapeError("initial states have the wrong dimension");
  if (n == 0) throw ValidationError("rollout needs at least one episode");

  const auto* delay = std::get_if<DelayAdapter>(&adapter);
  const auto* noise = std::get_if<UniformNoiseAdapter>(&adapter);
  const auto* fixed = std::get_if<FixedSequenceAdapter>(&adapter);
  if (delay && delay->k < 0) throw ValidationError("delay must be >= 0");
  if (noise && !(noise->epsilon >= 0)) throw ValidationError("noise budget must be >= 0");
  if (fixed) {
    if (static_cast<int>(fixed->sequence.size()) != horizon) {
      throw ValidationError("attack sequence length " + std::to_string(fixed->sequence.size()) +
                            " does not match horizon " + std::to_string(horizon));
    }
    for (const Tensor& v : fixed->sequence) {
      if (v.rows() != sdim || (v.cols() != n && v.cols() != 1)) {
        throw ShapeError("attack sequence entry has the wrong shape");
      }
    }
  }
  const bool stochastic = options.mode == ActionMode::Stochastic;
  if (stochastic && (options.log_std.rows() != env.action_dim() || options.log_std.cols() != 1)) {
    throw ShapeError("stochastic rollout needs an action_dim x 1 log_std");
  }

  std::vector<std::mt19937_64> obs_rngs, act_rngs, proc_rngs;
  if (noise) obs_rngs = episode_streams(noise->seed, static_cast<int>(n), kObservationNoise);
  if (stochastic) act_rngs = episode_streams(seed, static_cast<int>(n), kActionNoise);
  if (env.noise_scale() > 0) proc_rngs = episode_streams(seed, static_cast<int>(n), kProcess);

  Trajectory traj;
  traj.discount = options.discount;
  traj.states.reserve(horizon + 1);
  traj.states.push_back(initial_states);
  traj.discounted_return = Tensor::Zero(1, n);
  double weight = 1.0;
  for (int t = 0; t < horizon; ++t) {
    const Tensor& x = traj.states.back();
    Tensor obs;
    if (delay) {
      obs = traj.states[std::max(0, t - delay->k)];
    } else if (noise) {
      obs = x + uniform_ball_noise(obs_rngs, sdim, noise->epsilon, noise->norm);
    } else if (fixed) {
      const Tensor& v = fixed->sequence[t];
      obs = v.cols() == n ? Tensor(x + v) : Tensor(x.colwise() + v.col(0));
    } else {
      obs = x;
    }
    Tensor u = policy(obs);
    if (u.rows() != env.action_dim() || u.cols() != n) {
      throw ShapeError("policy returned an action batch of the wrong shape");
    }
    if (stochastic) {
      const Tensor xi = normal_draws(act_rngs, env.action_dim(), 1.0);
      u += (xi.array().colwise() * options.log_std.col(0).array().exp()).matrix();
    }
    Tensor w;
    if (!proc_rngs.empty()) w = normal_draws(proc_rngs, env.action_dim(), env.noise_scale());
    Tensor r = env.reward(x, u);
    traj.discounted_return += weight * r;
    weight *= options.discount;
    traj.perturbations.push_back(obs - x);
    traj.observations.push_back(std::move(obs));
    traj.rewards.push_back(std::move(r));
    Tensor next = env.step(x, u, w.size() ? &w : nullptr);
    if (!next.allFinite()) throw NumericError("non-finite state at step " + std::to_string(t));
    traj.actions.push_back(std::move(u));
    traj.states.push_back(std::move(next));
  }
  return traj;
}

GraphRollout rollout_on_graph(ad::Graph& g, const Environment& env, const GraphPolicyFn& policy,
                              const Tensor& initial_states,
                              const std::vector<ad::Var>& perturbations, double discount,
                              int discount_offset, const std::vector<Tensor>* process_noise) {
  if (initial_states.rows() != env.state_dim()) {
    throw ShapeError("initial states have the wrong dimension");
  }
  if (process_noise && process_noise->size() != perturbations.size()) {
    throw ValidationError("process noise length does not match the perturbation sequence");
  }
  GraphRollout out;
  ad::Var x = g.constant(initial_states);
  out.states.push_back(x);
  ad::Var total;
  double weight = std::pow(discount, discount_offset);
  for (std::size_t t = 0; t < perturbations.size(); ++t) {
    ad::Var u = policy(g, x + perturbations[t]);
    ad::Var r = weight * env.reward(x, u);
    total = t == 0 ? r : total + r;
    weight *= discount;
    x = env.step(x, u, process_noise ? &(*process_noise)[t] : nullptr);
    out.states.push_back(x);
  }
  if (perturbations.empty()) total = g.constant(Tensor::Zero(1, initial_states.cols()));
  out.discounted_return = total;
  out.final_state = x;
  return out;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj, int episode) {
  if (episode < 0 || episode >= traj.episodes()) throw ValidationError("episode out of range");
  if (traj.states.front().rows() != 2) {
    throw ShapeError("trajectory CSV expects a two-dimensional state");
  }
  os << "t,alpha,alpha_dot,u,reward,v1,v2\n";
  os << std::setprecision(10);
  for (int t = 0; t < traj.horizon(); ++t) {
    const Tensor& x = traj.states[t];
    const Tensor& v = traj.perturbations[t];
    os << t << ',' << x(0, episode) << ',' << x(1, episode) << ',' << traj.actions[t](0, episode)
       << ',' << traj.rewards[t](0, episode) << ',' << v(0, episode) << ',' << v(1, episode)
       << '\n';
  }
}

void write_trajectory_csv(const std::string& path, const Trajectory& traj, int episode) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot open " + path);
  write_trajectory_csv(f, traj, episode);
}

std::vector<bool> stabilized_episodes(const Trajectory& traj, int window, double tol) {
  const int n = traj.episodes();
  const int last = static_cast<int>(traj.states.size()) - 1;
  if (window <= 0 || window > last + 1) throw ValidationError("window out of range");
  std::vector<bool> out(n);
  for (int j = 0; j < n; ++j) {
    bool stable = true;
    for (int t = last - window + 1; t <= last && stable; ++t) {
      stable = std::abs(traj.states[t](0, j)) < tol;
    }
    out[j] = stable;
  }
  return out;
}

double stabilized_fraction(const Trajectory& traj, int window, double tol) {
  const std::vector<bool> flags = stabilized_episodes(traj, window, tol);
  return double(std::count(flags.begin(), flags.end(), true)) / double(flags.size());
}

}  // namespace liprobust
