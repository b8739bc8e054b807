#include "liprobust/lipschitz.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>

namespace liprobust {

using ad::Graph;
using ad::Var;

nlohmann::json to_json(const LipschitzOptions& o) {
  return {{"epsilon", o.epsilon},     {"restarts", o.restarts}, {"iterations", o.iterations},
          {"step", o.step},           {"seed", o.seed},         {"record_history", o.record_history}};
}

LipschitzOptions lipschitz_options_from_json(const nlohmann::json& j,
                                             const LipschitzOptions& defaults) {
  if (!j.is_object()) throw ValidationError("Lipschitz options must be a JSON object");
  const nlohmann::json known = to_json(defaults);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ValidationError("unknown Lipschitz option: " + key);
  }
  LipschitzOptions o = defaults;
  try {
    o.epsilon = j.value("epsilon", o.epsilon);
    o.restarts = j.value("restarts", o.restarts);
    o.iterations = j.value("iterations", o.iterations);
    o.step = j.value("step", o.step);
    o.seed = j.value("seed", o.seed);
    o.record_history = j.value("record_history", o.record_history);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed Lipschitz options: ") + e.what());
  }
  if (!(o.epsilon > 0) || o.restarts < 1 || o.iterations < 0 || !(o.step > 0)) {
    throw ValidationError("Lipschitz options out of range");
  }
  return o;
}

DomainBox DomainBox::pendulum() {
  DomainBox b;
  b.lower = Tensor(2, 1);
  b.upper = Tensor(2, 1);
  b.lower << -std::numbers::pi, -8.0;
  b.upper << std::numbers::pi, 8.0;
  return b;
}

void DomainBox::validate() const {
  if (lower.cols() != 1 || upper.cols() != 1 || lower.rows() != upper.rows() || lower.rows() == 0) {
    throw ShapeError("domain bounds must be matching column vectors");
  }
  if (!((upper - lower).array() > 0).all()) throw ValidationError("domain box is degenerate");
}

nlohmann::json LipEstimate::to_json() const {
  nlohmann::json j{{"lower_bound", lower_bound},
                   {"x", tensor_to_json(x)},
                   {"v", tensor_to_json(v)},
                   {"restarts", restarts},
                   {"iterations", iterations},
                   {"constant", constant}};
  j["tightness"] = tightness ? nlohmann::json(*tightness) : nlohmann::json(nullptr);
  return j;
}

LipschitzOptions local_grid_defaults() {
  LipschitzOptions o;
  o.restarts = 2;
  o.iterations = 100;
  return o;
}

namespace {

void validate(const LipschitzOptions& o) {
  if (!(o.epsilon > 0)) throw ValidationError("epsilon must be positive");
  if (o.restarts <= 0) throw ValidationError("restarts must be positive");
  if (o.iterations < 0) throw ValidationError("iterations must be >= 0");
  if (!(o.step > 0)) throw ValidationError("step must be positive");
}

// Rescales each column of v into [kMinPerturbationNorm, eps].
void project_ball(Tensor& v, double eps) {
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    const double n = v.col(j).norm();
    if (n > eps) {
      v.col(j) *= eps / n;
    } else if (n < kMinPerturbationNorm) {
      if (n == 0.0) {
        v.col(j).setZero();
        v(0, j) = kMinPerturbationNorm;
      } else {
        v.col(j) *= kMinPerturbationNorm / n;
      }
    }
  }
}

void project_box(Tensor& x, const DomainBox& box) {
  x = x.cwiseMax(box.lower.replicate(1, x.cols())).cwiseMin(box.upper.replicate(1, x.cols()));
}

Tensor random_directions(std::mt19937_64& rng, Eigen::Index dim, Eigen::Index n, double radius) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor v(dim, n);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double norm = v.col(j).norm();
    if (norm > 0) v.col(j) *= radius / norm;
  }
  return v;
}

// Batched ascent over columns. Columns of x move only when optimize_x.
struct Ascent {
  Tensor best;    // 1 x n best ratio per column
  Tensor best_x;  // dim x n
  Tensor best_v;
  std::vector<double> history;  // best over all columns, per iteration
};

Ascent ascend(const GraphPolicyFn& policy, const DomainBox& box, Tensor x, Tensor v,
              bool optimize_x, const LipschitzOptions& o) {
  const Eigen::Index n = x.cols();
  Graph g;
  Var xin = g.input("x", x, optimize_x);
  Var vin = g.input("v", v, true);
  Var diff = policy(g, xin + vin) - policy(g, xin);
  // The tiny offset keeps d sqrt / ds finite when the outputs coincide.
  Var num = ad::sqrt(ad::col_sums(ad::square(diff)) + 1e-300);
  Var den = ad::sqrt(ad::col_sums(ad::square(vin)));
  Var ratio = num / den;

  // Reported ratios leave out the offset.
  auto exact_ratio = [&]() -> Tensor {
    return (diff.value().colwise().norm().array() / vin.value().colwise().norm().array())
        .matrix();
  };

  Ascent out;
  out.best = Tensor::Constant(1, n, -1.0);
  out.best_x = x;
  out.best_v = v;
  auto record = [&](const Tensor& r, const Tensor& xs, const Tensor& vs) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (r(0, j) > out.best(0, j)) {
        out.best(0, j) = r(0, j);
        out.best_x.col(j) = xs.col(j);
        out.best_v.col(j) = vs.col(j);
      }
    }
    if (o.record_history) out.history.push_back(out.best.maxCoeff());
  };

  for (int it = 0; it < o.iterations; ++it) {
    if (it > 0) g.evaluate({{"x", x}, {"v", v}});
    record(exact_ratio(), x, v);
    g.backward(ratio);
    const double step = it < o.iterations / 2 ? o.step : o.step / 10.0;
    v += step * g.grad(vin);
    project_ball(v, o.epsilon);
    if (optimize_x) {
      x += step * g.grad(xin);
      project_box(x, box);
    }
  }
  if (o.iterations > 0) g.evaluate({{"x", x}, {"v", v}});
  record(exact_ratio(), x, v);
  return out;
}

}  // namespace

LipEstimate empirical_lower_bound(const GraphPolicyFn& policy, const DomainBox& domain,
                                  const LipschitzOptions& options) {
  validate(options);
  domain.validate();
  const int dim = domain.dim();
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor x(dim, options.restarts);
  for (int j = 0; j < options.restarts; ++j) {
    for (int i = 0; i < dim; ++i) {
      x(i, j) = domain.lower(i) + (domain.upper(i) - domain.lower(i)) * unit(rng);
    }
  }
  const Tensor v = random_directions(rng, dim, options.restarts, options.epsilon);

  const Ascent a = ascend(policy, domain, x, v, true, options);
  Eigen::Index j = 0;
  LipEstimate est;
  est.lower_bound = std::max(0.0, a.best.row(0).maxCoeff(&j));
  est.x = a.best_x.col(j);
  est.v = a.best_v.col(j);
  est.restarts = options.restarts;
  est.iterations = options.iterations;
  est.constant = est.lower_bound == 0.0;
  est.history = a.history;
  return est;
}

LipEstimate empirical_lower_bound(const PolicyNetwork& net, const DomainBox& domain,
                                  const LipschitzOptions& options) {
  if (net.input_dim() != domain.dim()) throw ShapeError("domain does not match policy input");
  const PolicySnapshot snap{net};
  LipEstimate est = empirical_lower_bound(
      [&](Graph& g, Var x) { return snap.apply(g, x); }, domain, options);
  const double bound = certified_upper_bound(net);
  if (bound > 0) est.tightness = est.lower_bound / bound;
  return est;
}

LocalLipschitzGrid local_lipschitz_grid(const GraphPolicyFn& policy, const DomainBox& domain,
                                        int n_alpha, int n_alpha_dot,
                                        const LipschitzOptions& options) {
  validate(options);
  domain.validate();
  if (domain.dim() != 2) throw ShapeError("local grid needs a two-dimensional domain");
  if (n_alpha < 2 || n_alpha_dot < 2) throw ValidationError("grid must be at least 2 x 2");

  LocalLipschitzGrid grid;
  grid.options = options;
  for (int i = 0; i < n_alpha; ++i) {
    grid.alpha.push_back(domain.lower(0) +
                         (i + 0.5) * (domain.upper(0) - domain.lower(0)) / n_alpha);
  }
  for (int k = 0; k < n_alpha_dot; ++k) {
    grid.alpha_dot.push_back(domain.lower(1) +
                             (k + 0.5) * (domain.upper(1) - domain.lower(1)) / n_alpha_dot);
  }
  const int cells = n_alpha * n_alpha_dot;
  const int r = options.restarts;
  Tensor x(2, Eigen::Index(cells) * r);
  for (int i = 0; i < n_alpha; ++i) {
    for (int k = 0; k < n_alpha_dot; ++k) {
      for (int s = 0; s < r; ++s) {
        const Eigen::Index col = (Eigen::Index(i) * n_alpha_dot + k) * r + s;
        x(0, col) = grid.alpha[i];
        x(1, col) = grid.alpha_dot[k];
      }
    }
  }
  std::mt19937_64 rng(options.seed);
  const Tensor v = random_directions(rng, 2, x.cols(), options.epsilon);
  LipschitzOptions o = options;
  o.record_history = false;
  const Ascent a = ascend(policy, domain, x, v, false, o);

  grid.values = Tensor::Zero(n_alpha, n_alpha_dot);
  for (int i = 0; i < n_alpha; ++i) {
    for (int k = 0; k < n_alpha_dot; ++k) {
      const Eigen::Index base = (Eigen::Index(i) * n_alpha_dot + k) * r;
      grid.values(i, k) = std::max(0.0, a.best.middleCols(base, r).maxCoeff());
    }
  }
  return grid;
}

LocalLipschitzGrid local_lipschitz_grid(const PolicyNetwork& net, const DomainBox& domain,
                                        int n_alpha, int n_alpha_dot,
                                        const LipschitzOptions& options) {
  const PolicySnapshot snap{net};
  return local_lipschitz_grid([&](Graph& g, Var x) { return snap.apply(g, x); }, domain,
                              n_alpha, n_alpha_dot, options);
}

void LocalLipschitzGrid::write_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot open " + path);
  f << std::setprecision(10);
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index k = 0; k < values.cols(); ++k) {
      if (k) f << ',';
      f << values(i, k);
    }
    f << '\n';
  }
}

nlohmann::json LocalLipschitzGrid::sidecar() const {
  return {{"rows", "alpha"},
          {"cols", "alpha_dot"},
          {"alpha", alpha},
          {"alpha_dot", alpha_dot},
          {"epsilon", options.epsilon},
          {"restarts", options.restarts},
          {"iterations", options.iterations},
          {"step", options.step},
          {"seed", options.seed}};
}

}  // namespace liprobust
