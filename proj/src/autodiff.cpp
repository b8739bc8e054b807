#include "liprobust/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace liprobust::ad {

namespace {

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << t.rows() << "x" << t.cols();
  return os.str();
}

bool broadcastable(Eigen::Index from, Eigen::Index to) { return from == to || from == 1; }

Tensor broadcast(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  if (t.rows() == rows && t.cols() == cols) return t;
  if (t.rows() == 1 && t.cols() == 1) return Tensor::Constant(rows, cols, t(0, 0));
  if (t.rows() == rows && t.cols() == 1) return t.replicate(1, cols);
  if (t.rows() == 1 && t.cols() == cols) return t.replicate(rows, 1);
  throw ShapeError("cannot broadcast " + shape_str(t) + " to " + std::to_string(rows) + "x" +
                   std::to_string(cols));
}

Tensor reduce_to(const Tensor& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Tensor::Constant(1, 1, g.sum());
  if (cols == 1) return g.rowwise().sum();
  return g.colwise().sum();
}

double wrap(double a) {
  constexpr double pi = std::numbers::pi;
  double r = a - 2.0 * pi * std::floor((a + pi) / (2.0 * pi));
  if (r >= pi) r -= 2.0 * pi;
  if (r < -pi) r += 2.0 * pi;
  return r;
}

Eigen::PartialPivLU<Tensor> checked_lu(const Tensor& a) {
  Eigen::PartialPivLU<Tensor> lu(a);
  const double rc = lu.rcond();
  if (!(rc > 1.0 / kMaxConditionNumber)) {
    std::ostringstream os;
    os << "linear solve: system is singular or ill-conditioned (rcond " << rc << ")";
    throw NumericError(os.str());
  }
  return lu;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Minimum: return "minimum";
    case Op::Maximum: return "maximum";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Neg: return "neg";
    case Op::Transpose: return "transpose";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Abs: return "abs";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Clip: return "clip";
    case Op::WrapAngle: return "wrap_angle";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::ColSums: return "col_sums";
    case Op::RowSums: return "row_sums";
    case Op::ConcatRows: return "concat_rows";
    case Op::ConcatCols: return "concat_cols";
    case Op::SliceRows: return "slice_rows";
    case Op::SliceCols: return "slice_cols";
    case Op::Diag: return "diag";
    case Op::Solve: return "solve";
  }
  return "?";
}

const Tensor& Var::value() const { return graph->value(id); }

double Var::scalar() const {
  const Tensor& v = value();
  if (v.size() != 1) throw ShapeError("scalar() on a " + shape_str(v) + " node");
  return v(0, 0);
}

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  const std::size_t id = nodes_.size() - 1;
  Node& n = nodes_.back();
  if (n.op != Op::Leaf) {
    n.value = compute(n);
    check_finite(id);
  }
  return Var{this, id};
}

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::constant(double value) { return constant(Tensor::Constant(1, 1, value)); }

Var Graph::parameter(Tensor value, std::string name) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.is_parameter = true;
  n.name = std::move(name);
  return push(std::move(n));
}

Var Graph::input(const std::string& name, Tensor value, bool requires_grad) {
  if (inputs_.count(name)) throw std::invalid_argument("duplicate input name: " + name);
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_parameter = requires_grad;
  n.name = name;
  Var v = push(std::move(n));
  inputs_[name] = v.id;
  return v;
}

void Graph::name(Var v, const std::string& name) { named_[name] = v.id; }

void Graph::set_input(const std::string& name, const Tensor& value) {
  auto it = inputs_.find(name);
  if (it == inputs_.end()) throw std::invalid_argument("unknown input: " + name);
  Node& n = nodes_[it->second];
  if (n.value.rows() != value.rows() || n.value.cols() != value.cols()) {
    throw ShapeError("input '" + name + "' declared " + shape_str(n.value) + ", got " +
                     shape_str(value));
  }
  n.value = value;
  stale_ = true;
}

std::map<std::string, Tensor> Graph::evaluate(const std::map<std::string, Tensor>& inputs) {
  for (const auto& [name, value] : inputs) set_input(name, value);
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    Node& n = nodes_[id];
    if (n.op == Op::Leaf) continue;
    n.value = compute(n);
    check_finite(id);
  }
  stale_ = false;
  adjoints_.clear();
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : named_) out[name] = nodes_[id].value;
  return out;
}

void Graph::check_finite(std::size_t id) const {
  if (!nodes_[id].value.allFinite()) {
    std::ostringstream os;
    os << "non-finite value at node " << id << " (" << op_name(nodes_[id].op) << ")";
    throw NumericError(os.str());
  }
}

Var Graph::unary(Op op, Var a, double s0, double s1) {
  if (a.graph != this) throw std::invalid_argument("operand belongs to another graph");
  Node n;
  n.op = op;
  n.in0 = a.id;
  n.arity = 1;
  n.s0 = s0;
  n.s1 = s1;
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Var Graph::binary(Op op, Var a, Var b) {
  if (a.graph != this || b.graph != this) {
    throw std::invalid_argument("operand belongs to another graph");
  }
  Node n;
  n.op = op;
  n.in0 = a.id;
  n.in1 = b.id;
  n.arity = 2;
  n.requires_grad = nodes_[a.id].requires_grad || nodes_[b.id].requires_grad;
  return push(std::move(n));
}

Var Graph::slice(Op op, Var a, Eigen::Index start, Eigen::Index count) {
  if (a.graph != this) throw std::invalid_argument("operand belongs to another graph");
  Node n;
  n.op = op;
  n.in0 = a.id;
  n.arity = 1;
  n.i0 = start;
  n.i1 = count;
  n.requires_grad = nodes_[a.id].requires_grad;
  return push(std::move(n));
}

Tensor Graph::compute(const Node& n) const {
  const Tensor& a = nodes_[n.in0].value;
  static const Tensor kEmpty;
  const Tensor& b = n.arity == 2 ? nodes_[n.in1].value : kEmpty;

  auto elementwise_shape = [&](Eigen::Index& r, Eigen::Index& c) {
    r = std::max(a.rows(), b.rows());
    c = std::max(a.cols(), b.cols());
    if (!broadcastable(a.rows(), r) || !broadcastable(a.cols(), c) ||
        !broadcastable(b.rows(), r) || !broadcastable(b.cols(), c)) {
      throw ShapeError(std::string(op_name(n.op)) + ": incompatible shapes " + shape_str(a) +
                       " and " + shape_str(b));
    }
  };

  switch (n.op) {
    case Op::Leaf: return n.value;
    case Op::MatMul:
      if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + shape_str(a) + " times " + shape_str(b));
      }
      return a * b;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Minimum:
    case Op::Maximum: {
      Eigen::Index r = 0, c = 0;
      elementwise_shape(r, c);
      const Tensor ba = broadcast(a, r, c);
      const Tensor bb = broadcast(b, r, c);
      switch (n.op) {
        case Op::Add: return ba + bb;
        case Op::Sub: return ba - bb;
        case Op::Mul: return ba.cwiseProduct(bb);
        case Op::Div: return ba.cwiseQuotient(bb);
        case Op::Minimum: return ba.cwiseMin(bb);
        default: return ba.cwiseMax(bb);
      }
    }
    case Op::Scale: return a * n.s0;
    case Op::AddScalar: return a.array() + n.s0;
    case Op::Neg: return -a;
    case Op::Transpose: return a.transpose();
    case Op::Tanh: return a.array().tanh();
    case Op::Relu: return a.cwiseMax(0.0);
    case Op::Sigmoid: return (1.0 + (-a.array()).exp()).inverse();
    case Op::Exp: return a.array().exp();
    case Op::Log: return a.array().log();
    case Op::Abs: return a.cwiseAbs();
    case Op::Square: return a.array().square();
    case Op::Sqrt: return a.array().sqrt();
    case Op::Sin: return a.array().sin();
    case Op::Cos: return a.array().cos();
    case Op::Clip: return a.cwiseMax(n.s0).cwiseMin(n.s1);
    case Op::WrapAngle: return a.unaryExpr([](double x) { return wrap(x); });
    case Op::Sum: return Tensor::Constant(1, 1, a.sum());
    case Op::Mean: return Tensor::Constant(1, 1, a.mean());
    case Op::ColSums: return a.colwise().sum();
    case Op::RowSums: return a.rowwise().sum();
    case Op::ConcatRows: {
      if (a.cols() != b.cols()) {
        throw ShapeError("concat_rows: " + shape_str(a) + " over " + shape_str(b));
      }
      Tensor out(a.rows() + b.rows(), a.cols());
      out << a, b;
      return out;
    }
    case Op::ConcatCols: {
      if (a.rows() != b.rows()) {
        throw ShapeError("concat_cols: " + shape_str(a) + " beside " + shape_str(b));
      }
      Tensor out(a.rows(), a.cols() + b.cols());
      out << a, b;
      return out;
    }
    case Op::SliceRows:
      if (n.i0 < 0 || n.i1 < 0 || n.i0 + n.i1 > a.rows()) {
        throw ShapeError("slice_rows out of range on " + shape_str(a));
      }
      return a.middleRows(n.i0, n.i1);
    case Op::SliceCols:
      if (n.i0 < 0 || n.i1 < 0 || n.i0 + n.i1 > a.cols()) {
        throw ShapeError("slice_cols out of range on " + shape_str(a));
      }
      return a.middleCols(n.i0, n.i1);
    case Op::Diag:
      if (a.rows() != 1 && a.cols() != 1) throw ShapeError("diag of non-vector " + shape_str(a));
      return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(a.data(), a.size())).asDiagonal();
    case Op::Solve:
      if (a.rows() != a.cols() || a.rows() != b.rows()) {
        throw ShapeError("solve: " + shape_str(a) + " with rhs " + shape_str(b));
      }
      return checked_lu(a).solve(b);
  }
  throw std::logic_error("unhandled op");
}

void Graph::accumulate(std::size_t id, const Tensor& g) {
  if (!nodes_[id].requires_grad) return;
  Tensor& adj = adjoints_[id];
  if (adj.size() == 0) {
    adj = g;
  } else {
    adj += g;
  }
}

void Graph::backward(Var output) {
  backward(output, Tensor::Ones(output.rows(), output.cols()));
}

void Graph::backward(Var output, const Tensor& seed) {
  if (stale_) throw std::logic_error("backward requested before forward evaluation");
  const Tensor& out = nodes_[output.id].value;
  if (seed.rows() != out.rows() || seed.cols() != out.cols()) {
    throw ShapeError("backward seed " + shape_str(seed) + " for output " + shape_str(out));
  }
  adjoints_.assign(nodes_.size(), Tensor());
  accumulate(output.id, seed);
  for (std::size_t k = output.id + 1; k-- > 0;) {
    if (nodes_[k].op == Op::Leaf || adjoints_[k].size() == 0) continue;
    backprop_node(k);
  }
}

void Graph::backprop_node(std::size_t id) {
  const Node& n = nodes_[id];
  const Tensor& g = adjoints_[id];
  const Tensor& y = n.value;
  const Tensor& a = nodes_[n.in0].value;
  static const Tensor kEmpty;
  const Tensor& b = n.arity == 2 ? nodes_[n.in1].value : kEmpty;
  const bool need_a = nodes_[n.in0].requires_grad;
  const bool need_b = n.arity == 2 && nodes_[n.in1].requires_grad;

  switch (n.op) {
    case Op::Leaf: return;
    case Op::MatMul:
      if (need_a) accumulate(n.in0, g * b.transpose());
      if (need_b) accumulate(n.in1, a.transpose() * g);
      return;
    case Op::Add:
      if (need_a) accumulate(n.in0, reduce_to(g, a.rows(), a.cols()));
      if (need_b) accumulate(n.in1, reduce_to(g, b.rows(), b.cols()));
      return;
    case Op::Sub:
      if (need_a) accumulate(n.in0, reduce_to(g, a.rows(), a.cols()));
      if (need_b) accumulate(n.in1, reduce_to(-g, b.rows(), b.cols()));
      return;
    case Op::Mul: {
      if (need_a) {
        accumulate(n.in0, reduce_to(g.cwiseProduct(broadcast(b, g.rows(), g.cols())), a.rows(),
                                    a.cols()));
      }
      if (need_b) {
        accumulate(n.in1, reduce_to(g.cwiseProduct(broadcast(a, g.rows(), g.cols())), b.rows(),
                                    b.cols()));
      }
      return;
    }
    case Op::Div: {
      const Tensor bb = broadcast(b, g.rows(), g.cols());
      if (need_a) accumulate(n.in0, reduce_to(g.cwiseQuotient(bb), a.rows(), a.cols()));
      if (need_b) {
        const Tensor gb = -(g.cwiseProduct(y)).cwiseQuotient(bb);
        accumulate(n.in1, reduce_to(gb, b.rows(), b.cols()));
      }
      return;
    }
    case Op::Minimum:
    case Op::Maximum: {
      const Tensor ba = broadcast(a, g.rows(), g.cols());
      const Tensor bb = broadcast(b, g.rows(), g.cols());
      // Ties route the gradient to the first operand.
      const Tensor mask_a =
          (n.op == Op::Minimum ? (ba.array() <= bb.array()) : (ba.array() >= bb.array()))
              .cast<double>()
              .matrix();
      if (need_a) accumulate(n.in0, reduce_to(g.cwiseProduct(mask_a), a.rows(), a.cols()));
      if (need_b) {
        const Tensor mask_b = (1.0 - mask_a.array()).matrix();
        accumulate(n.in1, reduce_to(g.cwiseProduct(mask_b), b.rows(), b.cols()));
      }
      return;
    }
    case Op::Scale: accumulate(n.in0, g * n.s0); return;
    case Op::AddScalar: accumulate(n.in0, g); return;
    case Op::Neg: accumulate(n.in0, -g); return;
    case Op::Transpose: accumulate(n.in0, g.transpose()); return;
    case Op::Tanh: accumulate(n.in0, (g.array() * (1.0 - y.array().square())).matrix()); return;
    case Op::Relu:
      accumulate(n.in0, (g.array() * (a.array() > 0.0).cast<double>()).matrix());
      return;
    case Op::Sigmoid:
      accumulate(n.in0, (g.array() * y.array() * (1.0 - y.array())).matrix());
      return;
    case Op::Exp: accumulate(n.in0, g.cwiseProduct(y)); return;
    case Op::Log: accumulate(n.in0, g.cwiseQuotient(a)); return;
    case Op::Abs:
      accumulate(n.in0, (g.array() * a.array().sign()).matrix());
      return;
    case Op::Square: accumulate(n.in0, (2.0 * g.array() * a.array()).matrix()); return;
    case Op::Sqrt: accumulate(n.in0, (0.5 * g.array() / y.array()).matrix()); return;
    case Op::Sin: accumulate(n.in0, (g.array() * a.array().cos()).matrix()); return;
    case Op::Cos: accumulate(n.in0, (-g.array() * a.array().sin()).matrix()); return;
    case Op::Clip: {
      const auto inside = (a.array() >= n.s0 && a.array() <= n.s1).cast<double>();
      accumulate(n.in0, (g.array() * inside).matrix());
      return;
    }
    case Op::WrapAngle: accumulate(n.in0, g); return;
    case Op::Sum: accumulate(n.in0, Tensor::Constant(a.rows(), a.cols(), g(0, 0))); return;
    case Op::Mean:
      accumulate(n.in0, Tensor::Constant(a.rows(), a.cols(), g(0, 0) / double(a.size())));
      return;
    case Op::ColSums: accumulate(n.in0, g.replicate(a.rows(), 1)); return;
    case Op::RowSums: accumulate(n.in0, g.replicate(1, a.cols())); return;
    case Op::ConcatRows:
      if (need_a) accumulate(n.in0, g.topRows(a.rows()));
      if (need_b) accumulate(n.in1, g.bottomRows(b.rows()));
      return;
    case Op::ConcatCols:
      if (need_a) accumulate(n.in0, g.leftCols(a.cols()));
      if (need_b) accumulate(n.in1, g.rightCols(b.cols()));
      return;
    case Op::SliceRows: {
      Tensor full = Tensor::Zero(a.rows(), a.cols());
      full.middleRows(n.i0, n.i1) = g;
      accumulate(n.in0, full);
      return;
    }
    case Op::SliceCols: {
      Tensor full = Tensor::Zero(a.rows(), a.cols());
      full.middleCols(n.i0, n.i1) = g;
      accumulate(n.in0, full);
      return;
    }
    case Op::Diag: {
      Tensor d = g.diagonal();
      if (a.rows() == 1) d.transposeInPlace();
      accumulate(n.in0, d);
      return;
    }
    case Op::Solve: {
      // X = A^{-1} B:  gB = A^{-T} gX,  gA = -gB X^T.
      const Tensor gb = checked_lu(a.transpose()).solve(g);
      if (need_b) accumulate(n.in1, gb);
      if (need_a) accumulate(n.in0, -gb * y.transpose());
      return;
    }
  }
}

Tensor Graph::grad(Var v) const {
  if (v.id < adjoints_.size() && adjoints_[v.id].size() != 0) return adjoints_[v.id];
  const Tensor& val = nodes_[v.id].value;
  return Tensor::Zero(val.rows(), val.cols());
}

std::vector<std::pair<std::string, Tensor>> Graph::parameter_gradients() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (!nodes_[id].is_parameter) continue;
    out.emplace_back(nodes_[id].name, grad(Var{const_cast<Graph*>(this), id}));
  }
  return out;
}

std::vector<Var> Graph::parameters() {
  std::vector<Var> out;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].is_parameter) out.push_back(Var{this, id});
  }
  return out;
}

// ---- free functions ------------------------------------------------------

Var matmul(Var a, Var b) { return a.graph->binary(Op::MatMul, a, b); }
Var operator+(Var a, Var b) { return a.graph->binary(Op::Add, a, b); }
Var operator-(Var a, Var b) { return a.graph->binary(Op::Sub, a, b); }
Var operator*(Var a, Var b) { return a.graph->binary(Op::Mul, a, b); }
Var operator/(Var a, Var b) { return a.graph->binary(Op::Div, a, b); }
Var operator-(Var a) { return a.graph->unary(Op::Neg, a); }
Var operator*(double s, Var a) { return scale(a, s); }
Var operator*(Var a, double s) { return scale(a, s); }
Var operator+(Var a, double s) { return a.graph->unary(Op::AddScalar, a, s); }
Var operator+(double s, Var a) { return a + s; }
Var operator-(Var a, double s) { return a + (-s); }
Var operator-(double s, Var a) { return (-a) + s; }
Var minimum(Var a, Var b) { return a.graph->binary(Op::Minimum, a, b); }
Var maximum(Var a, Var b) { return a.graph->binary(Op::Maximum, a, b); }
Var scale(Var a, double s) { return a.graph->unary(Op::Scale, a, s); }
Var transpose(Var a) { return a.graph->unary(Op::Transpose, a); }
Var tanh(Var a) { return a.graph->unary(Op::Tanh, a); }
Var relu(Var a) { return a.graph->unary(Op::Relu, a); }
Var sigmoid(Var a) { return a.graph->unary(Op::Sigmoid, a); }
Var exp(Var a) { return a.graph->unary(Op::Exp, a); }
Var log(Var a) { return a.graph->unary(Op::Log, a); }
Var abs(Var a) { return a.graph->unary(Op::Abs, a); }
Var square(Var a) { return a.graph->unary(Op::Square, a); }
Var sqrt(Var a) { return a.graph->unary(Op::Sqrt, a); }
Var sin(Var a) { return a.graph->unary(Op::Sin, a); }
Var cos(Var a) { return a.graph->unary(Op::Cos, a); }
Var clip(Var a, double lo, double hi) { return a.graph->unary(Op::Clip, a, lo, hi); }
Var wrap_angle(Var a) { return a.graph->unary(Op::WrapAngle, a); }
Var sum(Var a) { return a.graph->unary(Op::Sum, a); }
Var mean(Var a) { return a.graph->unary(Op::Mean, a); }
Var col_sums(Var a) { return a.graph->unary(Op::ColSums, a); }
Var row_sums(Var a) { return a.graph->unary(Op::RowSums, a); }
Var concat_rows(Var top, Var bottom) { return top.graph->binary(Op::ConcatRows, top, bottom); }
Var concat_cols(Var left, Var right) { return left.graph->binary(Op::ConcatCols, left, right); }
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  return a.graph->slice(Op::SliceRows, a, start, count);
}
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  return a.graph->slice(Op::SliceCols, a, start, count);
}
Var diag(Var v) { return v.graph->unary(Op::Diag, v); }
Var solve(Var a, Var b) { return a.graph->binary(Op::Solve, a, b); }

// ---- gradient check ------------------------------------------------------

GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Tensor>& point,
                           double tolerance, double step) {
  auto eval_at = [&](const std::vector<Tensor>& p) {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(p.size());
    for (const Tensor& t : p) vars.push_back(g.constant(t));
    return f(g, vars).scalar();
  };

  Graph g;
  std::vector<Var> vars;
  for (std::size_t i = 0; i < point.size(); ++i) {
    vars.push_back(g.parameter(point[i], "p" + std::to_string(i)));
  }
  Var out = f(g, vars);
  if (out.value().size() != 1) throw ShapeError("grad_check requires a scalar output");
  g.backward(out);

  GradCheckReport report;
  std::vector<Tensor> probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const Tensor analytic = g.grad(vars[i]);
    GradCheckEntry entry{"p" + std::to_string(i), 0.0};
    for (Eigen::Index k = 0; k < point[i].size(); ++k) {
      const double orig = point[i](k);
      auto central = [&](double h) {
        probe[i](k) = orig + h;
        const double fp = eval_at(probe);
        probe[i](k) = orig - h;
        const double fm = eval_at(probe);
        probe[i](k) = orig;
        return (fp - fm) / (2.0 * h);
      };
      // Richardson extrapolation cancels the O(h^2) truncation term.
      const double numeric = (4.0 * central(0.5 * step) - central(step)) / 3.0;
      const double diff = std::abs(analytic(k) - numeric);
      const double denom = std::max(std::abs(analytic(k)), std::abs(numeric));
      const double err = diff < 1e-8 ? 0.0 : diff / denom;
      entry.max_rel_error = std::max(entry.max_rel_error, err);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.per_parameter.push_back(entry);
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace liprobust::ad
