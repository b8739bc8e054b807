#include "liprobust/attacks.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace liprobust {

using ad::Graph;
using ad::Var;

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::None: return "none";
    case AttackKind::PgdStep: return "pgd_step";
    case AttackKind::Trajectory: return "trajectory";
    case AttackKind::Delay: return "delay";
    case AttackKind::UniformNoise: return "uniform_noise";
  }
  return "?";
}

AttackKind attack_kind_from_string(const std::string& s) {
  for (AttackKind k : {AttackKind::None, AttackKind::PgdStep, AttackKind::Trajectory,
                       AttackKind::Delay, AttackKind::UniformNoise}) {
    if (s == to_string(k)) return k;
  }
  throw ValidationError("unknown attack kind: " + s);
}

AttackSpec AttackSpec::pgd(double epsilon, Norm norm) {
  AttackSpec s;
  s.kind = AttackKind::PgdStep;
  s.norm = norm;
  s.epsilon = epsilon;
  return s;
}

AttackSpec AttackSpec::trajectory(double epsilon) {
  AttackSpec s;
  s.kind = AttackKind::Trajectory;
  s.norm = Norm::L2;
  s.epsilon = epsilon;
  return s;
}

AttackSpec AttackSpec::delay_samples(int k) {
  AttackSpec s;
  s.kind = AttackKind::Delay;
  s.delay = k;
  return s;
}

AttackSpec AttackSpec::uniform_noise(double epsilon, std::uint64_t seed, Norm norm) {
  AttackSpec s;
  s.kind = AttackKind::UniformNoise;
  s.norm = norm;
  s.epsilon = epsilon;
  s.seed = seed;
  return s;
}

int AttackSpec::effective_steps() const {
  if (steps > 0) return steps;
  return kind == AttackKind::Trajectory ? 200 : 50;
}

double AttackSpec::effective_step() const {
  if (step_size > 0) return step_size;
  return kind == AttackKind::Trajectory ? 0.02 * epsilon : 2.5 * epsilon / 50.0;
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0) || !std::isfinite(epsilon)) throw ValidationError("epsilon must be >= 0");
  if (steps < 0 || step_size < 0) throw ValidationError("steps and step size must be >= 0");
  if (delay < 0) throw ValidationError("delay must be >= 0");
  if (restarts <= 0) throw ValidationError("restarts must be positive");
  if (kind == AttackKind::Trajectory) {
    if (norm != Norm::L2) throw ValidationError("trajectory attacks use the l2 norm");
    if (windows <= 0 || window_len <= 0) throw ValidationError("windows must be positive");
  }
}

nlohmann::json to_json(const AttackSpec& s) {
  return {{"kind", to_string(s.kind)},     {"norm", to_string(s.norm)},
          {"epsilon", s.epsilon},          {"steps", s.effective_steps()},
          {"step_size", s.effective_step()}, {"windows", s.windows},
          {"window_len", s.window_len},    {"delay", s.delay},
          {"restarts", s.restarts},
          {"seed", s.seed}};
}

AttackSpec attack_spec_from_json(const nlohmann::json& j) {
  try {
    AttackSpec s;
    s.kind = attack_kind_from_string(j.value("kind", std::string("none")));
    s.norm = norm_from_string(j.value("norm", std::string("l2")));
    s.epsilon = j.value("epsilon", 0.0);
    s.steps = j.value("steps", 0);
    s.step_size = j.value("step_size", 0.0);
    s.windows = j.value("windows", 4);
    s.window_len = j.value("window_len", 50);
    s.delay = j.value("delay", 0);
    s.restarts = j.value("restarts", 4);
    s.seed = j.value("seed", std::uint64_t{0});
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed attack spec: ") + e.what());
  }
}

PerturbationAdapter delay_adapter(int k) {
  if (k < 0) throw ValidationError("delay must be >= 0");
  if (k == 0) return NoPerturbation{};
  return DelayAdapter{k};
}

PerturbationAdapter uniform_noise_adapter(double epsilon, std::uint64_t seed, Norm norm) {
  if (!(epsilon >= 0)) throw ValidationError("noise budget must be >= 0");
  return UniformNoiseAdapter{epsilon, norm, seed};
}

void project(Tensor& v, double epsilon, Norm norm) {
  if (norm == Norm::Linf) {
    v = v.cwiseMax(-epsilon).cwiseMin(epsilon);
    return;
  }
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    const double n = v.col(j).norm();
    if (n > epsilon) v.col(j) *= epsilon / n;
  }
}

PgdResult pgd_step_attack(const GraphPolicyFn& policy, const Tensor& x, double epsilon, Norm norm,
                          int steps, double step_size, std::uint64_t seed, int restarts) {
  if (!(epsilon >= 0)) throw ValidationError("epsilon must be >= 0");
  if (steps < 0) throw ValidationError("steps must be >= 0");
  if (restarts <= 0) throw ValidationError("restarts must be positive");
  const Eigen::Index dim = x.rows(), n = x.cols();
  PgdResult out;
  out.v = Tensor::Zero(dim, n);
  out.deviation = Tensor::Zero(1, n);
  if (epsilon == 0.0) {
    out.history.assign(steps + 1, 0.0);
    return out;
  }

  // Restart r of column j lives in column r * n + j. Starting points are tiny
  // so the first steps follow the gradient before the ball boundary binds.
  const Eigen::Index m = n * restarts;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double radius = kPgdStartFraction * epsilon;
  Tensor v(dim, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    if (norm == Norm::Linf) {
      for (Eigen::Index i = 0; i < dim; ++i) v(i, j) = radius * (2 * unit(rng) - 1);
    } else {
      for (Eigen::Index i = 0; i < dim; ++i) v(i, j) = normal(rng);
      v.col(j) *= radius / v.col(j).norm();
    }
  }
  const Tensor xs = x.replicate(1, restarts);

  Graph g;
  Var base = g.constant(policy(g, g.constant(xs)).value());
  Var vin = g.input("v", v, true);
  Var diff = policy(g, g.constant(xs) + vin) - base;
  Var objective = ad::col_sums(ad::square(diff));

  for (int it = 0; it <= steps; ++it) {
    if (it > 0) g.evaluate({{"v", v}});
    const Tensor dev = objective.value().cwiseSqrt();
    for (Eigen::Index c = 0; c < m; ++c) {
      const Eigen::Index j = c % n;
      if (dev(0, c) > out.deviation(0, j)) {
        out.deviation(0, j) = dev(0, c);
        out.v.col(j) = v.col(c);
      }
    }
    out.history.push_back(out.deviation.mean());
    if (it == steps) break;
    g.backward(objective);
    const Tensor grad = g.grad(vin);
    if (norm == Norm::Linf) {
      v += step_size * grad.cwiseSign();
    } else {
      for (Eigen::Index c = 0; c < m; ++c) {
        const double gn = grad.col(c).norm();
        if (gn > 0) v.col(c) += (step_size / gn) * grad.col(c);
      }
    }
    project(v, epsilon, norm);
  }
  return out;
}

PgdResult pgd_step_attack(const PolicyNetwork& net, const Tensor& x, const AttackSpec& spec) {
  spec.validate();
  const PolicySnapshot snap{net};
  return pgd_step_attack([&](Graph& g, Var in) { return snap.apply(g, in); }, x, spec.epsilon,
                         spec.norm, spec.effective_steps(), spec.effective_step(), spec.seed,
                         spec.restarts);
}

std::vector<double> AttackResult::per_step_norms() const {
  std::vector<double> out;
  for (const Tensor& v : trajectory.perturbations) {
    double m = 0.0;
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      m = std::max(m, spec.norm == Norm::Linf ? v.col(j).cwiseAbs().maxCoeff() : v.col(j).norm());
    }
    out.push_back(m);
  }
  return out;
}

nlohmann::json AttackResult::to_json(const std::string& trajectory_csv) const {
  auto row = [](const Tensor& t) {
    return std::vector<double>(t.data(), t.data() + t.size());
  };
  nlohmann::json j{{"spec", liprobust::to_json(spec)},
                   {"nominal_return", row(nominal_return)},
                   {"attacked_return", row(attacked_return)},
                   {"mean_nominal_return", nominal_return.mean()},
                   {"mean_attacked_return", attacked_return.mean()},
                   {"max_output_deviation", max_output_deviation},
                   {"iterations", iterations},
                   {"per_step_norms", per_step_norms()}};
  j["trajectory_csv"] = trajectory_csv.empty() ? nlohmann::json(nullptr) : nlohmann::json(trajectory_csv);
  return j;
}

namespace {

RolloutOptions deterministic(const Environment& env, double discount, int horizon = 0) {
  RolloutOptions o;
  o.discount = discount;
  o.horizon = horizon > 0 ? horizon : env.horizon();
  return o;
}

void finish(AttackResult& r, const PolicySnapshot& snap) {
  r.attacked_return = r.trajectory.discounted_return;
  double worst = 0.0;
  for (int t = 0; t < r.trajectory.horizon(); ++t) {
    const Tensor d = snap(r.trajectory.observations[t]) - snap(r.trajectory.states[t]);
    worst = std::max(worst, d.colwise().norm().maxCoeff());
  }
  r.max_output_deviation = worst;
}

}  // namespace

AttackResult trajectory_attack(const Environment& env, const PolicyNetwork& net,
                               const Tensor& initial_states, const AttackSpec& spec,
                               double discount) {
  spec.validate();
  if (spec.kind != AttackKind::Trajectory) throw ValidationError("not a trajectory attack spec");
  const int horizon = spec.windows * spec.window_len;
  if (horizon != env.horizon()) {
    throw ValidationError("windows x window length (" + std::to_string(horizon) +
                          ") must equal the horizon (" + std::to_string(env.horizon()) + ")");
  }
  if (env.noise_scale() > 0) throw ValidationError("trajectory attacks need a noise-free environment");

  const PolicySnapshot snap{net};
  const GraphPolicyFn policy = [&](Graph& g, Var x) { return snap.apply(g, x); };
  const Eigen::Index sdim = env.state_dim(), n = initial_states.cols();
  const RolloutOptions opts = deterministic(env, discount);

  AttackResult result;
  result.spec = spec;
  const Trajectory nominal = rollout(env, std::cref(snap), initial_states, spec.seed,
                                     NoPerturbation{}, opts);
  result.nominal_return = nominal.discounted_return;

  std::vector<Tensor> sequence(horizon, Tensor::Zero(sdim, n));
  if (spec.epsilon > 0) {
    const int iters = spec.effective_steps();
    const double step = spec.effective_step();
    Tensor start = initial_states;
    for (int w = 0; w < spec.windows; ++w) {
      Graph g;
      std::vector<Var> vs;
      std::vector<Tensor> v(spec.window_len, Tensor::Zero(sdim, n));
      for (int t = 0; t < spec.window_len; ++t) {
        vs.push_back(g.input("v" + std::to_string(t), v[t], true));
      }
      const GraphRollout gr =
          rollout_on_graph(g, env, policy, start, vs, discount, w * spec.window_len);
      Tensor best = Tensor::Constant(1, n, std::numeric_limits<double>::infinity());
      std::vector<Tensor> best_v = v;
      Tensor best_final = gr.final_state.value();
      for (int it = 0; it <= iters; ++it) {
        if (it > 0) {
          std::map<std::string, Tensor> in;
          for (int t = 0; t < spec.window_len; ++t) in["v" + std::to_string(t)] = v[t];
          g.evaluate(in);
        }
        const Tensor& r = gr.discounted_return.value();
        for (Eigen::Index j = 0; j < n; ++j) {
          if (r(0, j) < best(0, j)) {
            best(0, j) = r(0, j);
            for (int t = 0; t < spec.window_len; ++t) best_v[t].col(j) = v[t].col(j);
            best_final.col(j) = gr.final_state.value().col(j);
          }
        }
        if (it == iters) break;
        g.backward(gr.discounted_return);
        for (int t = 0; t < spec.window_len; ++t) {
          const Tensor grad = g.grad(vs[t]);
          for (Eigen::Index j = 0; j < n; ++j) {
            const double gn = grad.col(j).norm();
            if (gn > 0) v[t].col(j) -= (step / gn) * grad.col(j);
          }
          project(v[t], spec.epsilon, Norm::L2);
        }
      }
      for (int t = 0; t < spec.window_len; ++t) sequence[w * spec.window_len + t] = best_v[t];
      start = best_final;
    }
    result.iterations = spec.windows * iters;
  }

  result.trajectory = rollout(env, std::cref(snap), initial_states, spec.seed,
                              FixedSequenceAdapter{sequence}, opts);
  bool reverted = false;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (result.trajectory.discounted_return(0, j) > result.nominal_return(0, j)) {
      for (Tensor& v : sequence) v.col(j).setZero();
      reverted = true;
    }
  }
  if (reverted) {
    result.trajectory = rollout(env, std::cref(snap), initial_states, spec.seed,
                                FixedSequenceAdapter{sequence}, opts);
  }
  finish(result, snap);
  return result;
}

AttackResult run_attack(const Environment& env, const PolicyNetwork& net,
                        const Tensor& initial_states, const AttackSpec& spec, double discount) {
  spec.validate();
  if (spec.kind == AttackKind::Trajectory) {
    return trajectory_attack(env, net, initial_states, spec, discount);
  }
  const PolicySnapshot snap{net};
  const RolloutOptions opts = deterministic(env, discount);
  AttackResult result;
  result.spec = spec;
  result.nominal_return =
      rollout(env, std::cref(snap), initial_states, spec.seed, NoPerturbation{}, opts)
          .discounted_return;

  switch (spec.kind) {
    case AttackKind::None:
      result.trajectory = rollout(env, std::cref(snap), initial_states, spec.seed, NoPerturbation{}, opts);
      break;
    case AttackKind::Delay:
      result.trajectory = rollout(env, std::cref(snap), initial_states, spec.seed,
                                  delay_adapter(spec.delay), opts);
      break;
    case AttackKind::UniformNoise:
      result.trajectory = rollout(env, std::cref(snap), initial_states, spec.seed,
                                  uniform_noise_adapter(spec.epsilon, spec.seed, spec.norm), opts);
      break;
    case AttackKind::PgdStep: {
      if (env.noise_scale() > 0) throw ValidationError("pgd rollouts need a noise-free environment");
      const GraphPolicyFn policy = [&](Graph& g, Var x) { return snap.apply(g, x); };
      std::vector<Tensor> sequence;
      Tensor x = initial_states;
      for (int t = 0; t < env.horizon(); ++t) {
        const PgdResult p = pgd_step_attack(policy, x, spec.epsilon, spec.norm,
                                            spec.effective_steps(), spec.effective_step(),
                                            spec.seed + std::uint64_t(t), spec.restarts);
        sequence.push_back(p.v);
        x = env.step(x, snap(x + p.v), nullptr);
      }
      result.iterations = env.horizon() * spec.effective_steps();
      result.trajectory = rollout(env, std::cref(snap), initial_states, spec.seed,
                                  FixedSequenceAdapter{sequence}, opts);
      break;
    }
    case AttackKind::Trajectory:
      break;
  }
  finish(result, snap);
  return result;
}

}  // namespace liprobust
