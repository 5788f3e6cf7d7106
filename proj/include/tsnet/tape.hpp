#pragma once

// Reverse-mode automatic differentiation over matrix-valued nodes.
//
// Every operation appends a node to an append-only tape; arguments always
// precede results, so the reverse pass is a single backwards sweep. Input
// Jacobians of networks are built from these same primitives (forward-mode
// tangents recorded as ordinary nodes), which makes second-order mixed
// derivatives fall out of the ordinary reverse sweep.

#include "tsnet/core.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace tsnet::ad {

enum class Op : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Neg,
  Mul,        // elementwise
  Div,        // elementwise
  MatMul,
  Transpose,
  ScalarMul,  // value * s0
  ScalarAdd,  // value + s0
  CMulConst,  // elementwise multiply by a constant matrix
  MulRowBcast,  // (k x n) .* broadcast of (1 x n)
  MulColBcast,  // (k x n) .* broadcast of (k x 1)
  AddRowBcast,  // (k x n) + broadcast of (1 x n)
  ColSlice,     // single column -> (k x 1)
  RowBlock,     // contiguous row range
  Sigmoid,
  Exp,
  Log,
  Sqrt,
  Square,
  Clamp,      // clamp to [s0, s1], pass-through gradient on the closed interval
  Sum,        // all entries -> 1x1
  VStack,     // stack row blocks
  RowSoftmax, // softmax along each row
  MaxEntry,   // max over all entries -> 1x1
  MinEntry,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Neg: return "neg";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::ScalarMul: return "scalar_mul";
    case Op::ScalarAdd: return "scalar_add";
    case Op::CMulConst: return "cmul_const";
    case Op::MulRowBcast: return "mul_row_bcast";
    case Op::MulColBcast: return "mul_col_bcast";
    case Op::AddRowBcast: return "add_row_bcast";
    case Op::ColSlice: return "col_slice";
    case Op::RowBlock: return "row_block";
    case Op::Sigmoid: return "sigmoid";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::Square: return "square";
    case Op::Clamp: return "clamp";
    case Op::Sum: return "sum";
    case Op::VStack: return "vstack";
    case Op::RowSoftmax: return "row_softmax";
    case Op::MaxEntry: return "max_entry";
    case Op::MinEntry: return "min_entry";
  }
  return "?";
}

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

struct Node {
  Op op = Op::Leaf;
  int a = -1;
  int b = -1;
  double s0 = 0.0;
  double s1 = 0.0;
  int arg_r = 0, arg_c = 0;  // argmax/argmin location
  std::vector<int> args;     // VStack only
  Matrix value;
  Matrix cdata;              // CMulConst payload
  Matrix grad;
  bool requires_grad = false;
  std::uint32_t grad_epoch = 0;
};

class Tape {
public:
  Var leaf(const Matrix& v) { return push_leaf(v, /*requires_grad=*/true); }
  Var constant(const Matrix& v) { return push_leaf(v, /*requires_grad=*/false); }
  Var constant(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return push_leaf(m, false);
  }

  const Matrix& value(Var v) const { return node(v).value; }

  // Gradient of the last backward()'s loss w.r.t. v; zero if v is off-path.
  Matrix grad(Var v) const {
    const Node& n = node(v);
    if (n.grad_epoch != epoch_ || n.grad.size() == 0) {
      return Matrix::Zero(n.value.rows(), n.value.cols());
    }
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    epoch_ = 0;
  }

  // --- node construction -----------------------------------------------

  Var add(Var a, Var b) {
    require_same_shape("add", a, b);
    return push(Op::Add, a, b, value(a) + value(b));
  }
  Var sub(Var a, Var b) {
    require_same_shape("sub", a, b);
    return push(Op::Sub, a, b, value(a) - value(b));
  }
  Var neg(Var a) { return push(Op::Neg, a, Var{}, -value(a)); }
  Var mul(Var a, Var b) {
    require_same_shape("mul", a, b);
    return push(Op::Mul, a, b, value(a).cwiseProduct(value(b)));
  }
  Var div(Var a, Var b) {
    require_same_shape("div", a, b);
    return push(Op::Div, a, b, value(a).cwiseQuotient(value(b)));
  }
  Var matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) {
      throw shape_error("matmul: inner dimensions disagree (" + shape_of(a) + " vs " + shape_of(b) + ")");
    }
    return push(Op::MatMul, a, b, value(a) * value(b));
  }
  Var transpose(Var a) { return push(Op::Transpose, a, Var{}, value(a).transpose()); }
  Var scalar_mul(Var a, double s) {
    Var v = push(Op::ScalarMul, a, Var{}, value(a) * s);
    node(v).s0 = s;
    return v;
  }
  Var scalar_add(Var a, double s) {
    Var v = push(Op::ScalarAdd, a, Var{}, value(a).array() + s);
    node(v).s0 = s;
    return v;
  }
  Var cmul_const(Var a, const Matrix& c) {
    if (c.rows() != value(a).rows() || c.cols() != value(a).cols()) {
      throw shape_error("cmul_const: shape mismatch");
    }
    Var v = push(Op::CMulConst, a, Var{}, value(a).cwiseProduct(c));
    node(v).cdata = c;
    return v;
  }
  // a: k x n, r: 1 x n; result[i,j] = a[i,j] * r[0,j]
  Var mul_row_bcast(Var a, Var r) {
    if (value(r).rows() != 1 || value(r).cols() != value(a).cols()) {
      throw shape_error("mul_row_bcast: row operand must be 1 x cols(a)");
    }
    Matrix out = value(a).array().rowwise() * value(r).row(0).array();
    return push(Op::MulRowBcast, a, r, std::move(out));
  }
  // a: k x n, c: k x 1; result[i,j] = a[i,j] * c[i,0]
  Var mul_col_bcast(Var a, Var c) {
    if (value(c).cols() != 1 || value(c).rows() != value(a).rows()) {
      throw shape_error("mul_col_bcast: column operand must be rows(a) x 1");
    }
    Matrix out = value(a).array().colwise() * value(c).col(0).array();
    return push(Op::MulColBcast, a, c, std::move(out));
  }
  // a: k x n, r: 1 x n; result[i,j] = a[i,j] + r[0,j]
  Var add_row_bcast(Var a, Var r) {
    if (value(r).rows() != 1 || value(r).cols() != value(a).cols()) {
      throw shape_error("add_row_bcast: row operand must be 1 x cols(a)");
    }
    Matrix out = value(a).array().rowwise() + value(r).row(0).array();
    return push(Op::AddRowBcast, a, r, std::move(out));
  }
  Var col_slice(Var a, int j) {
    if (j < 0 || j >= value(a).cols()) throw shape_error("col_slice: column out of range");
    Var v = push(Op::ColSlice, a, Var{}, value(a).col(j));
    node(v).arg_c = j;
    return v;
  }
  Var row_block(Var a, int start, int count) {
    if (start < 0 || count < 1 || start + count > value(a).rows()) {
      throw shape_error("row_block: range out of bounds");
    }
    Var v = push(Op::RowBlock, a, Var{}, value(a).middleRows(start, count));
    node(v).arg_r = start;
    return v;
  }
  Var sigmoid(Var a) {
    Matrix out = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
    return push(Op::Sigmoid, a, Var{}, std::move(out));
  }
  Var exp(Var a) { return push(Op::Exp, a, Var{}, value(a).array().exp()); }
  Var log(Var a) { return push(Op::Log, a, Var{}, value(a).array().log()); }
  Var sqrt(Var a) { return push(Op::Sqrt, a, Var{}, value(a).array().sqrt()); }
  Var square(Var a) { return push(Op::Square, a, Var{}, value(a).array().square()); }
  Var clamp(Var a, double lo, double hi) {
    Var v = push(Op::Clamp, a, Var{}, value(a).array().max(lo).min(hi));
    node(v).s0 = lo;
    node(v).s1 = hi;
    return v;
  }
  Var sum(Var a) {
    Matrix s(1, 1);
    s(0, 0) = value(a).sum();
    return push(Op::Sum, a, Var{}, std::move(s));
  }
  Var vstack(const std::vector<Var>& parts) {
    if (parts.empty()) throw contract_error("vstack: no arguments");
    Eigen::Index cols = value(parts[0]).cols();
    Eigen::Index rows = 0;
    for (Var p : parts) {
      if (value(p).cols() != cols) throw shape_error("vstack: column mismatch");
      rows += value(p).rows();
    }
    Matrix out(rows, cols);
    Eigen::Index r = 0;
    for (Var p : parts) {
      out.middleRows(r, value(p).rows()) = value(p);
      r += value(p).rows();
    }
    Var v = push(Op::VStack, Var{}, Var{}, std::move(out));
    Node& n = node(v);
    n.args.reserve(parts.size());
    bool rg = false;
    for (Var p : parts) {
      n.args.push_back(p.id);
      rg = rg || node(p).requires_grad;
    }
    n.requires_grad = rg;
    return v;
  }
  Var row_softmax(Var a) {
    Matrix out = value(a);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double mx = out.row(i).maxCoeff();
      out.row(i) = (out.row(i).array() - mx).exp();
      out.row(i) /= out.row(i).sum();
    }
    return push(Op::RowSoftmax, a, Var{}, std::move(out));
  }
  Var max_entry(Var a) {
    Eigen::Index r, c;
    Matrix s(1, 1);
    s(0, 0) = value(a).maxCoeff(&r, &c);
    Var v = push(Op::MaxEntry, a, Var{}, std::move(s));
    node(v).arg_r = static_cast<int>(r);
    node(v).arg_c = static_cast<int>(c);
    return v;
  }
  Var min_entry(Var a) {
    Eigen::Index r, c;
    Matrix s(1, 1);
    s(0, 0) = value(a).minCoeff(&r, &c);
    Var v = push(Op::MinEntry, a, Var{}, std::move(s));
    node(v).arg_r = static_cast<int>(r);
    node(v).arg_c = static_cast<int>(c);
    return v;
  }

  // --- reverse sweep ----------------------------------------------------

  void backward(Var loss) {
    const Node& ln = node(loss);
    if (ln.value.rows() != 1 || ln.value.cols() != 1) {
      throw contract_error("backward: loss must be scalar (1x1), got " + shape_of(loss));
    }
    ++epoch_;
    seed_grad(loss.id, Matrix::Ones(1, 1));
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad_epoch != epoch_) continue;
      propagate(n);
    }
  }

private:
  std::vector<Node> nodes_;
  std::uint32_t epoch_ = 0;

  Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
  const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }

  std::string shape_of(Var v) const {
    const Matrix& m = node(v).value;
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
  }

  void require_same_shape(const char* what, Var a, Var b) const {
    const Matrix& ma = node(a).value;
    const Matrix& mb = node(b).value;
    if (ma.rows() != mb.rows() || ma.cols() != mb.cols()) {
      throw shape_error(std::string(what) + ": shape mismatch (" + shape_of(a) + " vs " + shape_of(b) + ")");
    }
  }

  Var push_leaf(const Matrix& v, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.value = v;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
  }

  Var push(Op op, Var a, Var b, Matrix value) {
    if (!value.allFinite()) {
      throw numeric_error(std::string("non-finite value produced by op '") + op_name(op) +
                          "' at node " + std::to_string(nodes_.size()));
    }
    Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.id;
    n.value = std::move(value);
    n.requires_grad = (a.valid() && node(a).requires_grad) || (b.valid() && node(b).requires_grad);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
  }

  void seed_grad(int id, const Matrix& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad_epoch != epoch_) {
      n.grad = g;
      n.grad_epoch = epoch_;
    } else {
      n.grad += g;
    }
  }

  void accum(int id, const Matrix& g) { seed_grad(id, g); }

  void propagate(Node& n) {
    const Matrix& g = n.grad;
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Add:
        accum(n.a, g);
        accum(n.b, g);
        break;
      case Op::Sub:
        accum(n.a, g);
        accum(n.b, -g);
        break;
      case Op::Neg:
        accum(n.a, -g);
        break;
      case Op::Mul:
        accum(n.a, g.cwiseProduct(nodes_[n.b].value));
        accum(n.b, g.cwiseProduct(nodes_[n.a].value));
        break;
      case Op::Div: {
        const Matrix& av = nodes_[n.a].value;
        const Matrix& bv = nodes_[n.b].value;
        accum(n.a, g.cwiseQuotient(bv));
        accum(n.b, -(g.cwiseProduct(av).cwiseQuotient(bv.cwiseProduct(bv))));
        break;
      }
      case Op::MatMul:
        accum(n.a, g * nodes_[n.b].value.transpose());
        accum(n.b, nodes_[n.a].value.transpose() * g);
        break;
      case Op::Transpose:
        accum(n.a, g.transpose());
        break;
      case Op::ScalarMul:
        accum(n.a, g * n.s0);
        break;
      case Op::ScalarAdd:
        accum(n.a, g);
        break;
      case Op::CMulConst:
        accum(n.a, g.cwiseProduct(n.cdata));
        break;
      case Op::MulRowBcast: {
        const Matrix& av = nodes_[n.a].value;
        const Matrix& rv = nodes_[n.b].value;
        accum(n.a, (g.array().rowwise() * rv.row(0).array()).matrix());
        accum(n.b, (g.cwiseProduct(av)).colwise().sum());
        break;
      }
      case Op::MulColBcast: {
        const Matrix& av = nodes_[n.a].value;
        const Matrix& cv = nodes_[n.b].value;
        accum(n.a, (g.array().colwise() * cv.col(0).array()).matrix());
        accum(n.b, (g.cwiseProduct(av)).rowwise().sum());
        break;
      }
      case Op::AddRowBcast:
        accum(n.a, g);
        accum(n.b, g.colwise().sum());
        break;
      case Op::ColSlice: {
        Matrix gi = Matrix::Zero(nodes_[n.a].value.rows(), nodes_[n.a].value.cols());
        gi.col(n.arg_c) = g;
        accum(n.a, gi);
        break;
      }
      case Op::RowBlock: {
        Matrix gi = Matrix::Zero(nodes_[n.a].value.rows(), nodes_[n.a].value.cols());
        gi.middleRows(n.arg_r, g.rows()) = g;
        accum(n.a, gi);
        break;
      }
      case Op::Sigmoid: {
        const Matrix& y = n.value;
        accum(n.a, g.cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
        break;
      }
      case Op::Exp:
        accum(n.a, g.cwiseProduct(n.value));
        break;
      case Op::Log:
        accum(n.a, g.cwiseQuotient(nodes_[n.a].value));
        break;
      case Op::Sqrt:
        accum(n.a, (g.array() * (0.5 / n.value.array())).matrix());
        break;
      case Op::Square:
        accum(n.a, (g.array() * 2.0 * nodes_[n.a].value.array()).matrix());
        break;
      case Op::Clamp: {
        const Matrix& av = nodes_[n.a].value;
        Matrix mask = ((av.array() >= n.s0) && (av.array() <= n.s1)).cast<double>();
        accum(n.a, g.cwiseProduct(mask));
        break;
      }
      case Op::Sum:
        accum(n.a, Matrix::Constant(nodes_[n.a].value.rows(), nodes_[n.a].value.cols(), g(0, 0)));
        break;
      case Op::VStack: {
        Eigen::Index r = 0;
        for (int arg : n.args) {
          const Eigen::Index rows = nodes_[arg].value.rows();
          accum(arg, g.middleRows(r, rows));
          r += rows;
        }
        break;
      }
      case Op::RowSoftmax: {
        const Matrix& y = n.value;
        Matrix gi(y.rows(), y.cols());
        for (Eigen::Index i = 0; i < y.rows(); ++i) {
          const double dot = g.row(i).dot(y.row(i));
          gi.row(i) = (g.row(i).array() - dot) * y.row(i).array();
        }
        accum(n.a, gi);
        break;
      }
      case Op::MaxEntry:
      case Op::MinEntry: {
        Matrix gi = Matrix::Zero(nodes_[n.a].value.rows(), nodes_[n.a].value.cols());
        gi(n.arg_r, n.arg_c) = g(0, 0);
        accum(n.a, gi);
        break;
      }
    }
  }
};

// Operator sugar for readable expression building.
inline Var operator+(Var a, Var b) { return a.tape->add(a, b); }
inline Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
inline Var operator-(Var a) { return a.tape->neg(a); }
inline Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
inline Var operator/(Var a, Var b) { return a.tape->div(a, b); }
inline Var operator*(Var a, double s) { return a.tape->scalar_mul(a, s); }
inline Var operator*(double s, Var a) { return a.tape->scalar_mul(a, s); }
inline Var operator+(Var a, double s) { return a.tape->scalar_add(a, s); }
inline Var operator+(double s, Var a) { return a.tape->scalar_add(a, s); }
inline Var operator-(Var a, double s) { return a.tape->scalar_add(a, -s); }

inline Var neg(Var a) { return a.tape->neg(a); }
inline Var matmul(Var a, Var b) { return a.tape->matmul(a, b); }
inline Var transpose(Var a) { return a.tape->transpose(a); }
inline Var sigmoid(Var a) { return a.tape->sigmoid(a); }
inline Var exp(Var a) { return a.tape->exp(a); }
inline Var log(Var a) { return a.tape->log(a); }
inline Var sqrt(Var a) { return a.tape->sqrt(a); }
inline Var square(Var a) { return a.tape->square(a); }
inline Var clamp(Var a, double lo, double hi) { return a.tape->clamp(a, lo, hi); }
inline Var sum(Var a) { return a.tape->sum(a); }
inline Var vstack(const std::vector<Var>& parts) { return parts.at(0).tape->vstack(parts); }
inline Var row_softmax(Var a) { return a.tape->row_softmax(a); }
inline Var max_entry(Var a) { return a.tape->max_entry(a); }
inline Var min_entry(Var a) { return a.tape->min_entry(a); }
inline Var mul_row_bcast(Var a, Var r) { return a.tape->mul_row_bcast(a, r); }
inline Var mul_col_bcast(Var a, Var c) { return a.tape->mul_col_bcast(a, c); }
inline Var add_row_bcast(Var a, Var r) { return a.tape->add_row_bcast(a, r); }
inline Var col_slice(Var a, int j) { return a.tape->col_slice(a, j); }
inline Var row_block(Var a, int start, int count) { return a.tape->row_block(a, start, count); }
inline Var cmul_const(Var a, const Matrix& c) { return a.tape->cmul_const(a, c); }

inline double scalar_value(Var v) {
  const Matrix& m = v.tape->value(v);
  if (m.rows() != 1 || m.cols() != 1) throw contract_error("scalar_value: node is not 1x1");
  return m(0, 0);
}

}  // namespace tsnet::ad
