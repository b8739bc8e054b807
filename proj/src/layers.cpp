#include "liprobust/layers.hpp"

#include <cmath>
#include <numbers>

namespace liprobust {

using ad::Graph;
using ad::Var;

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
  }
  return "?";
}

Activation activation_from_string(std::string_view s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  throw ValidationError("unknown activation: " + std::string(s));
}

Var activate(Activation a, Var x) {
  switch (a) {
    case Activation::Tanh: return ad::tanh(x);
    case Activation::Relu: return ad::relu(x);
    case Activation::Identity: return x;
  }
  return x;
}

PowerIteration power_iteration(const Tensor& a, double tol, int max_iter, const Tensor* start) {
  if (a.size() == 0 || a.cwiseAbs().maxCoeff() == 0.0) {
    throw NumericError("power iteration on an all-zero matrix (degenerate weight)");
  }
  PowerIteration out;
  Tensor v;
  if (start != nullptr && start->rows() == a.cols() && start->cols() == 1 && start->norm() > 0) {
    v = *start;
  } else {
    // Deterministic start with no zero components.
    v = Tensor(a.cols(), 1);
    for (Eigen::Index i = 0; i < a.cols(); ++i) v(i) = 1.0 + 0.1 * double(i % 7);
  }
  v /= v.norm();
  Tensor u = a * v;
  double sigma = u.norm();
  if (sigma == 0.0) {
    // Start vector in the null space; fall back to the largest column.
    Eigen::Index col = 0;
    a.colwise().norm().maxCoeff(&col);
    v.setZero();
    v(col) = 1.0;
    u = a * v;
    sigma = u.norm();
  }
  u /= sigma;
  int it = 0;
  for (; it < max_iter; ++it) {
    // Converged when (u, v, sigma) is a singular triplet to relative tol.
    Tensor w = a.transpose() * u;
    const double residual = (w - sigma * v).norm();
    if (residual <= tol * sigma) break;
    v = w / w.norm();
    u = a * v;
    sigma = u.norm();
    u /= sigma;
  }
  out.sigma = sigma;
  out.u = std::move(u);
  out.v = std::move(v);
  out.iterations = it + 1;
  return out;
}

double spectral_norm(const Tensor& a, double tol) {
  if (a.size() == 0 || a.cwiseAbs().maxCoeff() == 0.0) return 0.0;
  return power_iteration(a, tol).sigma;
}

Var sn_weight(Var a, const Tensor& u, const Tensor& v) {
  Graph& g = *a.graph;
  Var rho = ad::matmul(ad::matmul(g.constant(u.transpose()), a), g.constant(v));
  return a / rho;
}

Var aol_weight(Var a) {
  Graph& g = *a.graph;
  Var gram = ad::abs(ad::matmul(ad::transpose(a), a));
  Var sums = ad::row_sums(gram);
  const Tensor mask = (sums.value().array() > 0.0).cast<double>().matrix();
  Var floor = g.constant(Tensor::Constant(sums.rows(), 1, 1e-300));
  Var scale = g.constant(mask) / ad::sqrt(ad::maximum(sums, floor));
  return a * ad::transpose(scale);
}

Var cayley_weight(Var p, Eigen::Index out_dim, Eigen::Index in_dim) {
  Graph& g = *p.graph;
  const Eigen::Index n = p.rows();
  if (p.cols() != n || n != std::max(out_dim, in_dim)) {
    throw ShapeError("cayley: free matrix must be square of size max(out, in)");
  }
  Var skew = p - ad::transpose(p);
  Var eye = g.constant(Tensor::Identity(n, n));
  Var w = ad::solve(eye + skew, eye - skew);
  if (out_dim != n) w = ad::slice_rows(w, 0, out_dim);
  if (in_dim != n) w = ad::slice_cols(w, 0, in_dim);
  return w;
}

SemiOrthogonalPair semi_orthogonal(Var x, Var y) {
  Graph& g = *x.graph;
  const Eigen::Index m = x.rows();
  if (x.cols() != m || y.cols() != m) {
    throw ShapeError("semi_orthogonal: X must be m x m and Y n x m");
  }
  Var eye = g.constant(Tensor::Identity(m, m));
  Var z = x - ad::transpose(x) + ad::matmul(ad::transpose(y), y);
  Var ipz = eye + z;
  Var top = ad::solve(ipz, eye - z);
  Var b = -2.0 * ad::solve(ad::transpose(ipz), ad::transpose(y));
  return {ad::transpose(top), b};
}

Var sandwich_forward(Var a, Var b, Var log_psi, Var bias, Var x, Activation act) {
  const double root2 = std::numbers::sqrt2;
  Var pre = root2 * (ad::exp(-log_psi) * ad::matmul(b, x)) + bias;
  Var hidden = ad::exp(log_psi) * activate(act, pre);
  return root2 * ad::matmul(ad::transpose(a), hidden);
}

Tensor make_sn_weight(const Tensor& a, double tol) {
  const PowerIteration pi = power_iteration(a, tol);
  Graph g;
  return sn_weight(g.constant(a), pi.u, pi.v).value();
}

Tensor make_aol_weight(const Tensor& a) {
  Graph g;
  return aol_weight(g.constant(a)).value();
}

Tensor make_cayley_weight(const Tensor& p, Eigen::Index out_dim, Eigen::Index in_dim) {
  Graph g;
  return cayley_weight(g.constant(p), out_dim, in_dim).value();
}

Tensor make_semi_orthogonal(const Tensor& x, const Tensor& y) {
  Graph g;
  const SemiOrthogonalPair q = semi_orthogonal(g.constant(x), g.constant(y));
  Tensor out(q.a.rows(), q.a.cols() + q.b.cols());
  out << q.a.value(), q.b.value();
  return out;
}

}  // namespace liprobust
