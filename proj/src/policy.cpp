#include "liprobust/policy.hpp"

#include <cmath>
#include <random>

namespace liprobust {

using ad::Graph;
using ad::Var;

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::Plain: return "plain";
    case Architecture::SpectralNorm: return "sn";
    case Architecture::AOL: return "aol";
    case Architecture::Cayley: return "cayley";
    case Architecture::Sandwich: return "sandwich";
  }
  return "?";
}

Architecture architecture_from_string(std::string_view s) {
  if (s == "plain" || s == "mlp") return Architecture::Plain;
  if (s == "sn") return Architecture::SpectralNorm;
  if (s == "aol") return Architecture::AOL;
  if (s == "cayley") return Architecture::Cayley;
  if (s == "sandwich") return Architecture::Sandwich;
  throw ValidationError("unknown architecture: " + std::string(s));
}

std::size_t PolicyNetwork::parameter_count() const {
  std::size_t n = 0;
  for_each_param([&](const char*, const Tensor& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

PolicyNetwork build_policy(Architecture architecture, std::vector<int> widths,
                           std::optional<double> gamma, std::uint64_t seed,
                           Activation activation) {
  if (widths.size() < 2) throw ValidationError("a network needs at least input and output widths");
  for (int w : widths) {
    if (w <= 0) throw ValidationError("layer widths must be positive");
  }
  if (architecture == Architecture::Plain && gamma) {
    throw ValidationError("a Lipschitz budget cannot be given for a plain network");
  }
  if (is_constrained(architecture) && (!gamma || !(*gamma > 0.0) || !std::isfinite(*gamma))) {
    throw ValidationError("constrained networks need a finite gamma > 0");
  }

  PolicyNetwork net;
  net.architecture = architecture;
  net.widths = widths;
  net.gamma = gamma;
  net.activation = activation;
  net.seed = seed;

  std::mt19937_64 rng(seed);
  auto uniform = [&](Eigen::Index rows, Eigen::Index cols, int fan_in) {
    const double bound = 1.0 / std::sqrt(double(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(rows, cols);
    for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = dist(rng);
    return t;
  };

  const std::size_t n_layers = widths.size() - 1;
  for (std::size_t k = 0; k < n_layers; ++k) {
    const int in = widths[k];
    const int out = widths[k + 1];
    const bool last = k + 1 == n_layers;
    const Tensor bias = Tensor::Zero(out, 1);
    switch (architecture) {
      case Architecture::Plain:
        net.layers.emplace_back(PlainLinear{uniform(out, in, in), bias});
        break;
      case Architecture::SpectralNorm:
        net.layers.emplace_back(SNLayer{uniform(out, in, in), bias, Tensor()});
        break;
      case Architecture::AOL:
        net.layers.emplace_back(AOLLayer{uniform(out, in, in), bias});
        break;
      case Architecture::Cayley: {
        const int n = std::max(in, out);
        net.layers.emplace_back(CayleyLayer{uniform(n, n, n), bias, out, in});
        break;
      }
      case Architecture::Sandwich: {
        SandwichLayer l;
        l.x = uniform(out, out, in);
        l.y = uniform(in, out, in);
        l.output = last;
        if (!last) l.log_psi = Tensor::Zero(out, 1);
        l.bias = bias;
        net.layers.emplace_back(std::move(l));
        break;
      }
    }
  }
  return net;
}

double certified_upper_bound(const PolicyNetwork& net) {
  if (is_constrained(net.architecture)) return *net.gamma;
  double bound = 1.0;
  for (const Layer& layer : net.layers) {
    bound *= spectral_norm(std::get<PlainLinear>(layer).weight, 1e-9);
  }
  return bound;
}

std::vector<Var> bind_parameters(Graph& g, const PolicyNetwork& net, bool trainable) {
  std::vector<Var> vars;
  std::size_t k = 0;
  net.for_each_param([&](const char* name, const Tensor& t) {
    vars.push_back(trainable ? g.parameter(t, std::string(name) + std::to_string(k++))
                             : g.constant(t));
  });
  return vars;
}

namespace {

struct DeriveVisitor {
  const std::vector<Var>& params;
  std::size_t& cursor;
  bool last;

  Var next() {
    if (cursor >= params.size()) throw ShapeError("parameter list shorter than the network");
    return params[cursor++];
  }

  DerivedLayer operator()(const PlainLinear&) {
    DerivedLayer d;
    d.weight = next();
    d.bias = next();
    d.hidden = !last;
    return d;
  }
  DerivedLayer operator()(const SNLayer& l) {
    DerivedLayer d;
    Var a = next();
    const Tensor* start = l.start_vector.size() ? &l.start_vector : nullptr;
    const PowerIteration pi = power_iteration(a.value(), 1e-12, 1000, start);
    l.start_vector = pi.v;
    d.weight = sn_weight(a, pi.u, pi.v);
    d.bias = next();
    d.hidden = !last;
    return d;
  }
  DerivedLayer operator()(const AOLLayer&) {
    DerivedLayer d;
    d.weight = aol_weight(next());
    d.bias = next();
    d.hidden = !last;
    return d;
  }
  DerivedLayer operator()(const CayleyLayer& l) {
    DerivedLayer d;
    d.weight = cayley_weight(next(), l.out_dim, l.in_dim);
    d.bias = next();
    d.hidden = !last;
    return d;
  }
  DerivedLayer operator()(const SandwichLayer& l) {
    DerivedLayer d;
    Var x = next();
    Var y = next();
    const SemiOrthogonalPair q = semi_orthogonal(x, y);
    d.weight = q.b;
    if (!l.output) {
      d.sandwich = true;
      d.a = q.a;
      d.log_psi = next();
    }
    d.bias = next();
    return d;
  }
};

Var apply_layers(const std::vector<DerivedLayer>& layers, const std::optional<double>& gamma,
                 Activation act, Var x) {
  Var h = x;
  const double root_gamma = gamma ? std::sqrt(*gamma) : 1.0;
  if (gamma) h = root_gamma * h;
  for (const DerivedLayer& l : layers) {
    if (l.sandwich) {
      h = sandwich_forward(l.a, l.weight, l.log_psi, l.bias, h, act);
    } else {
      h = ad::matmul(l.weight, h) + l.bias;
      if (l.hidden) h = activate(act, h);
    }
  }
  if (gamma) h = root_gamma * h;
  return h;
}

}  // namespace

DerivedNetwork derive(const PolicyNetwork& net, const std::vector<Var>& params) {
  DerivedNetwork out;
  out.net = &net;
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    DeriveVisitor visitor{params, cursor, k + 1 == net.layers.size()};
    out.layers.push_back(std::visit(visitor, net.layers[k]));
  }
  if (cursor != params.size()) throw ShapeError("parameter list longer than the network");
  return out;
}

Var apply(const DerivedNetwork& derived, Var x) {
  if (x.rows() != derived.net->input_dim()) {
    throw ShapeError("network input has " + std::to_string(x.rows()) + " rows, expected " +
                     std::to_string(derived.net->input_dim()));
  }
  return apply_layers(derived.layers, derived.net->gamma, derived.net->activation, x);
}

Var forward(const PolicyNetwork& net, const std::vector<Var>& params, Var x) {
  return apply(derive(net, params), x);
}

PolicySnapshot::PolicySnapshot(const PolicyNetwork& net) : net_(net) {
  Graph g;
  const DerivedNetwork d = derive(net_, bind_parameters(g, net_, false));
  for (const DerivedLayer& l : d.layers) {
    FrozenLayer f;
    f.sandwich = l.sandwich;
    f.hidden = l.hidden;
    f.weight = l.weight.value();
    f.bias = l.bias.value();
    if (l.sandwich) {
      f.a = l.a.value();
      f.log_psi = l.log_psi.value();
    }
    layers_.push_back(std::move(f));
  }
}

Var PolicySnapshot::apply(Graph& g, Var x) const {
  if (x.rows() != net_.input_dim()) throw ShapeError("network input dimension mismatch");
  std::vector<DerivedLayer> layers;
  layers.reserve(layers_.size());
  for (const FrozenLayer& f : layers_) {
    DerivedLayer l;
    l.sandwich = f.sandwich;
    l.hidden = f.hidden;
    l.weight = g.constant(f.weight);
    l.bias = g.constant(f.bias);
    if (f.sandwich) {
      l.a = g.constant(f.a);
      l.log_psi = g.constant(f.log_psi);
    }
    layers.push_back(l);
  }
  return apply_layers(layers, net_.gamma, net_.activation, x);
}

Tensor PolicySnapshot::operator()(const Tensor& x) const {
  Graph g;
  return apply(g, g.constant(x)).value();
}

std::vector<Tensor> get_parameters(const PolicyNetwork& net) {
  std::vector<Tensor> out;
  net.for_each_param([&](const char*, const Tensor& t) { out.push_back(t); });
  return out;
}

void set_parameters(PolicyNetwork& net, const std::vector<Tensor>& values) {
  std::size_t k = 0;
  net.for_each_param([&](const char*, Tensor& t) {
    if (k >= values.size() || values[k].rows() != t.rows() || values[k].cols() != t.cols()) {
      throw ShapeError("parameter list does not match the network");
    }
    t = values[k++];
  });
  if (k != values.size()) throw ShapeError("parameter list does not match the network");
}

nlohmann::json tensor_to_json(const Tensor& t) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(t.size()));
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    for (Eigen::Index j = 0; j < t.cols(); ++j) data.push_back(t(i, j));
  }
  return {{"rows", t.rows()}, {"cols", t.cols()}, {"data", data}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
    throw ValidationError("tensor data length does not match its shape");
  }
  Tensor t(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j2 = 0; j2 < cols; ++j2) t(i, j2) = data[static_cast<std::size_t>(i * cols + j2)];
  }
  return t;
}

nlohmann::json to_json(const PolicyNetwork& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& layer : net.layers) {
    nlohmann::json params = nlohmann::json::object();
    std::visit([&](const auto& l) {
      l.for_each_param([&](const char* name, const Tensor& t) { params[name] = tensor_to_json(t); });
    }, layer);
    layers.push_back({{"params", params}});
  }
  nlohmann::json j;
  j["architecture"] = to_string(net.architecture);
  j["widths"] = net.widths;
  j["gamma"] = net.gamma ? nlohmann::json(*net.gamma) : nlohmann::json(nullptr);
  j["activation"] = to_string(net.activation);
  j["layers"] = layers;
  j["seed"] = net.seed;
  j["metadata"] = net.metadata;
  return j;
}

PolicyNetwork policy_from_json(const nlohmann::json& j) {
  try {
    const Architecture arch = architecture_from_string(j.at("architecture").get<std::string>());
    std::optional<double> gamma;
    if (j.contains("gamma") && !j.at("gamma").is_null()) gamma = j.at("gamma").get<double>();
    PolicyNetwork net = build_policy(arch, j.at("widths").get<std::vector<int>>(), gamma,
                                     j.value("seed", std::uint64_t{0}),
                                     activation_from_string(j.value("activation", "tanh")));
    const auto& layers = j.at("layers");
    if (layers.size() != net.layers.size()) throw ValidationError("checkpoint layer count mismatch");
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
      const auto& params = layers[k].at("params");
      std::visit([&](auto& l) {
        l.for_each_param([&](const char* name, Tensor& t) {
          Tensor loaded = tensor_from_json(params.at(name));
          if (loaded.rows() != t.rows() || loaded.cols() != t.cols()) {
            throw ValidationError(std::string("checkpoint parameter shape mismatch: ") + name);
          }
          t = std::move(loaded);
        });
      }, net.layers[k]);
    }
    if (j.contains("metadata")) net.metadata = j.at("metadata");
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace liprobust
