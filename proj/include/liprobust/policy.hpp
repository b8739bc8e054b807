#pragma once

// Policy networks assembled from plain or Lipschitz-bounded layers.
//
// A constrained network with budget gamma evaluates
//   kappa(x) = sqrt(gamma) * g_L(... g_1(sqrt(gamma) * x))
// where every g_k is 1-Lipschitz, so its certified bound is gamma exactly.
// A plain network is certified by the product of its layer spectral norms.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "liprobust/layers.hpp"

namespace liprobust {

enum class Architecture { Plain, SpectralNorm, AOL, Cayley, Sandwich };

std::string to_string(Architecture a);
Architecture architecture_from_string(std::string_view s);
inline bool is_constrained(Architecture a) { return a != Architecture::Plain; }

struct PolicyNetwork {
  Architecture architecture = Architecture::Plain;
  /// {input, hidden..., output}
  std::vector<int> widths;
  std::optional<double> gamma;
  Activation activation = Activation::Tanh;
  std::vector<Layer> layers;
  std::uint64_t seed = 0;
  nlohmann::json metadata = nlohmann::json::object();

  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  std::size_t parameter_count() const;

  /// Visits every free parameter in a fixed order.
  template <class F>
  void for_each_param(F&& f) {
    for (Layer& layer : layers) {
      std::visit([&](auto& l) { l.for_each_param(f); }, layer);
    }
  }
  template <class F>
  void for_each_param(F&& f) const {
    for (const Layer& layer : layers) {
      std::visit([&](const auto& l) { l.for_each_param(f); }, layer);
    }
  }
};

/// Free matrices ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases and log_psi 0.
/// Throws ValidationError for gamma on a plain network, missing or
/// non-positive gamma on a constrained one, or malformed widths.
PolicyNetwork build_policy(Architecture architecture, std::vector<int> widths,
                           std::optional<double> gamma, std::uint64_t seed,
                           Activation activation = Activation::Tanh);

double certified_upper_bound(const PolicyNetwork& net);

/// Per-layer derived weights living on a graph.
struct DerivedLayer {
  bool sandwich = false;  // sandwich hidden layer (uses a, log_psi)
  bool hidden = false;    // applies the activation
  ad::Var weight;         // affine: W; sandwich: B
  ad::Var a;              // sandwich: A
  ad::Var log_psi;
  ad::Var bias;
};

struct DerivedNetwork {
  const PolicyNetwork* net = nullptr;
  std::vector<DerivedLayer> layers;
};

/// Adds every free parameter to the graph, as gradient-receiving parameters
/// when `trainable`, otherwise as constants. Order matches for_each_param.
std::vector<ad::Var> bind_parameters(ad::Graph& g, const PolicyNetwork& net, bool trainable);
DerivedNetwork derive(const PolicyNetwork& net, const std::vector<ad::Var>& params);
/// x is input_dim x batch; returns output_dim x batch.
ad::Var apply(const DerivedNetwork& derived, ad::Var x);
ad::Var forward(const PolicyNetwork& net, const std::vector<ad::Var>& params, ad::Var x);

/// Derived weights frozen as tensors, for repeated evaluation.
class PolicySnapshot {
 public:
  explicit PolicySnapshot(const PolicyNetwork& net);

  Tensor operator()(const Tensor& x) const;
  /// Adds the frozen weights to g as constants and applies the network.
  ad::Var apply(ad::Graph& g, ad::Var x) const;
  const PolicyNetwork& network() const { return net_; }

 private:
  struct FrozenLayer {
    bool sandwich = false;
    bool hidden = false;
    Tensor weight, a, log_psi, bias;
  };
  PolicyNetwork net_;
  std::vector<FrozenLayer> layers_;
};

/// Flattened copies of all free parameters, in for_each_param order.
std::vector<Tensor> get_parameters(const PolicyNetwork& net);
void set_parameters(PolicyNetwork& net, const std::vector<Tensor>& values);

nlohmann::json to_json(const PolicyNetwork& net);
PolicyNetwork policy_from_json(const nlohmann::json& j);

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

}  // namespace liprobust
