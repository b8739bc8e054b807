#pragma once

// Tape-based reverse-mode automatic differentiation over dense f64 matrices.
//
// A Graph is an append-only list of primitive operations. Values are computed
// eagerly as nodes are appended, so a freshly built graph is always evaluated.
// Named input leaves can later be overwritten with set_input() and the whole
// tape replayed with evaluate().

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "liprobust/errors.hpp"

namespace liprobust {

using Tensor = Eigen::MatrixXd;

namespace ad {

enum class Op {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Div,
  Minimum,
  Maximum,
  Scale,
  AddScalar,
  Neg,
  Transpose,
  Tanh,
  Relu,
  Sigmoid,
  Exp,
  Log,
  Abs,
  Square,
  Sqrt,
  Sin,
  Cos,
  Clip,
  WrapAngle,
  Sum,
  Mean,
  ColSums,
  RowSums,
  ConcatRows,
  ConcatCols,
  SliceRows,
  SliceCols,
  Diag,
  Solve,
};

const char* op_name(Op op);

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  Var constant(double value);
  /// Leaf that receives a gradient; the name is used in gradient reports.
  Var parameter(Tensor value, std::string name = {});
  /// Named leaf whose value may be replaced by set_input()/evaluate().
  Var input(const std::string& name, Tensor value, bool requires_grad = false);

  /// Attach a name to a node so evaluate() reports it.
  void name(Var v, const std::string& name);

  void set_input(const std::string& name, const Tensor& value);
  /// Replays the tape with the given named inputs; returns every named node.
  std::map<std::string, Tensor> evaluate(const std::map<std::string, Tensor>& inputs = {});

  /// Reverse sweep from `output` seeded with `seed` (same shape as output).
  void backward(Var output, const Tensor& seed);
  /// Reverse sweep from a scalar output with seed 1.
  void backward(Var output);

  /// Adjoint of a node after backward(); zeros if the node was not reached.
  Tensor grad(Var v) const;
  /// Gradients of all parameter leaves in creation order.
  std::vector<std::pair<std::string, Tensor>> parameter_gradients() const;
  std::vector<Var> parameters();

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }

  // Node construction; prefer the free functions below.
  Var unary(Op op, Var a, double s0 = 0.0, double s1 = 0.0);
  Var binary(Op op, Var a, Var b);
  Var slice(Op op, Var a, Eigen::Index start, Eigen::Index count);

 private:
  struct Node {
    Op op = Op::Leaf;
    std::size_t in0 = 0;
    std::size_t in1 = 0;
    int arity = 0;
    double s0 = 0.0;
    double s1 = 0.0;
    Eigen::Index i0 = 0;
    Eigen::Index i1 = 0;
    bool requires_grad = false;
    bool is_parameter = false;
    std::string name;
    Tensor value;
  };

  Var push(Node node);
  Tensor compute(const Node& n) const;
  void check_finite(std::size_t id) const;
  void accumulate(std::size_t id, const Tensor& g);
  void backprop_node(std::size_t id);

  std::vector<Node> nodes_;
  std::vector<Tensor> adjoints_;
  std::map<std::string, std::size_t> named_;
  std::map<std::string, std::size_t> inputs_;
  bool stale_ = false;
};

// Elementwise binary operations broadcast a 1x1, r x 1 or 1 x c operand.
Var matmul(Var a, Var b);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator*(double s, Var a);
Var operator*(Var a, double s);
Var operator+(Var a, double s);
Var operator+(double s, Var a);
Var operator-(Var a, double s);
Var operator-(double s, Var a);
Var minimum(Var a, Var b);
Var maximum(Var a, Var b);
Var scale(Var a, double s);
Var transpose(Var a);
Var tanh(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var abs(Var a);
Var square(Var a);
Var sqrt(Var a);
Var sin(Var a);
Var cos(Var a);
Var clip(Var a, double lo, double hi);
/// Maps to [-pi, pi); gradient is the identity.
Var wrap_angle(Var a);
Var sum(Var a);
Var mean(Var a);
/// 1 x c row of per-column sums.
Var col_sums(Var a);
/// r x 1 column of per-row sums.
Var row_sums(Var a);
Var concat_rows(Var top, Var bottom);
Var concat_cols(Var left, Var right);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
/// Square diagonal matrix from an n x 1 or 1 x n vector.
Var diag(Var v);
/// X = A^{-1} B by LU with partial pivoting.
Var solve(Var a, Var b);

/// Estimated condition number above which solve() refuses a system.
inline constexpr double kMaxConditionNumber = 1e12;

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradCheckEntry> per_parameter;
  bool passed = false;
};

/// Builds a scalar-valued function of the given parameters on a fresh graph.
using ScalarFunction = std::function<Var(Graph&, const std::vector<Var>&)>;

/// Compares reverse-mode gradients with Richardson-extrapolated central
/// finite differences.
/// A component's error is |analytic - numeric| / max(|analytic|, |numeric|),
/// taken as zero when the absolute difference is below 1e-8.
GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Tensor>& point,
                           double tolerance, double step = 1e-4);

}  // namespace ad
}  // namespace liprobust
