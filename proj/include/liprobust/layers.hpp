#pragma once

// Plain and 1-Lipschitz layer parameterizations.
//
// Every constrained weight is derived from free parameters on an autodiff
// graph, so gradients flow to the free parameters. The Tensor-valued helpers
// (make_*_weight) run the same graph code on constants.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "liprobust/autodiff.hpp"

namespace liprobust {

enum class Activation { Tanh, Relu, Identity };

std::string to_string(Activation a);
Activation activation_from_string(std::string_view s);
ad::Var activate(Activation a, ad::Var x);

struct PowerIteration {
  double sigma = 0.0;
  Tensor u;  // left singular vector (rows x 1)
  Tensor v;  // right singular vector (cols x 1)
  int iterations = 0;
};

/// Largest singular value by power iteration, stopping once the singular
/// triplet residual |A^T u - sigma v| is below tol * sigma (at most max_iter
/// sweeps). `start` seeds the right vector.
PowerIteration power_iteration(const Tensor& a, double tol = 1e-9, int max_iter = 1000,
                               const Tensor* start = nullptr);
double spectral_norm(const Tensor& a, double tol = 1e-9);

// ---- graph-side constructions ---------------------------------------------

/// W = A / rho with rho = u^T A v for converged singular vectors (u, v).
ad::Var sn_weight(ad::Var a, const Tensor& u, const Tensor& v);
/// W = A D, D_ii = (sum_j |A^T A|_ij)^(-1/2); zero columns give D_ii = 0.
ad::Var aol_weight(ad::Var a);
/// Leading out x in block of (I + S)^{-1}(I - S), S = P - P^T.
ad::Var cayley_weight(ad::Var p, Eigen::Index out_dim, Eigen::Index in_dim);

struct SemiOrthogonalPair {
  ad::Var a;  // m x m
  ad::Var b;  // m x n
};

/// Rows of [A B] are orthonormal. X is m x m, Y is n x m; with
/// Z = X - X^T + Y^T Y the columns of [(I+Z)^{-1}(I-Z); -2 Y (I+Z)^{-1}]
/// are orthonormal and [A B] is their transpose.
SemiOrthogonalPair semi_orthogonal(ad::Var x, ad::Var y);

/// sqrt(2) A^T Psi act(sqrt(2) Psi^{-1} B x + bias), Psi = diag(exp(log_psi)).
ad::Var sandwich_forward(ad::Var a, ad::Var b, ad::Var log_psi, ad::Var bias, ad::Var x,
                         Activation act);

// ---- Tensor-valued helpers ------------------------------------------------

/// Throws NumericError for an all-zero A.
Tensor make_sn_weight(const Tensor& a, double tol = 1e-9);
Tensor make_aol_weight(const Tensor& a);
Tensor make_cayley_weight(const Tensor& p, Eigen::Index out_dim, Eigen::Index in_dim);
/// Returns Q = [A B] (m x (m + n)).
Tensor make_semi_orthogonal(const Tensor& x, const Tensor& y);

// ---- layer records ----------------------------------------------------------

struct PlainLinear {
  Tensor weight;  // out x in
  Tensor bias;    // out x 1

  template <class F>
  void for_each_param(F&& f) {
    f("W", weight);
    f("b", bias);
  }
  template <class F>
  void for_each_param(F&& f) const {
    f("W", weight);
    f("b", bias);
  }
};

struct SNLayer {
  Tensor a;
  Tensor bias;
  /// Right singular vector from the last power iteration; restarts the next.
  mutable Tensor start_vector;

  template <class F>
  void for_each_param(F&& f) {
    f("A", a);
    f("b", bias);
  }
  template <class F>
  void for_each_param(F&& f) const {
    f("A", a);
    f("b", bias);
  }
};

struct AOLLayer {
  Tensor a;
  Tensor bias;

  template <class F>
  void for_each_param(F&& f) {
    f("A", a);
    f("b", bias);
  }
  template <class F>
  void for_each_param(F&& f) const {
    f("A", a);
    f("b", bias);
  }
};

struct CayleyLayer {
  Tensor p;  // square, size max(out, in)
  Tensor bias;
  Eigen::Index out_dim = 0;
  Eigen::Index in_dim = 0;

  template <class F>
  void for_each_param(F&& f) {
    f("P", p);
    f("b", bias);
  }
  template <class F>
  void for_each_param(F&& f) const {
    f("P", p);
    f("b", bias);
  }
};

/// Hidden layers use the full sandwich map. The output layer is the linear
/// map x -> B x + bias, which is 1-Lipschitz since B is a block of rows of a
/// semi-orthogonal matrix; it carries no log_psi.
struct SandwichLayer {
  Tensor x;        // out x out
  Tensor y;        // in x out
  Tensor log_psi;  // out x 1 (empty for the output layer)
  Tensor bias;     // out x 1
  bool output = false;

  template <class F>
  void for_each_param(F&& f) {
    f("X", x);
    f("Y", y);
    if (!output) f("d", log_psi);
    f("b", bias);
  }
  template <class F>
  void for_each_param(F&& f) const {
    f("X", x);
    f("Y", y);
    if (!output) f("d", log_psi);
    f("b", bias);
  }
};

using Layer = std::variant<PlainLinear, SNLayer, AOLLayer, CayleyLayer, SandwichLayer>;

}  // namespace liprobust
