#pragma once

#include "ide/common.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace ide::ad {

using ide::Matrix;

// ---------------------------------------------------------------------------
// Reverse-mode automatic differentiation over dense matrices.
//
// A Var is a handle to a node in an implicitly built computation graph.
// Leaves are created with parameter() / constant(); every operation allocates
// a fresh node holding the forward value plus a closure that accumulates
// gradients into its inputs. backward() runs the closures in reverse
// topological order. Graphs are throwaway: parameters persist across
// iterations, interior nodes are freed when the loss handle goes out of scope.
// ---------------------------------------------------------------------------

struct Node {
  Matrix val;
  Matrix grad;  // allocated lazily by backward()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // reads this->grad, adds into parents
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Matrix& value() const { return node_->val; }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool valid() const { return node_ != nullptr; }

  Eigen::Index rows() const { return node_->val.rows(); }
  Eigen::Index cols() const { return node_->val.cols(); }

  // In-place mutation of a leaf's value (optimizer updates). Var is a
  // shared handle, so this is const in the pointer sense.
  Matrix& mutable_value() const { return node_->val; }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

inline Var parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->val = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

inline Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->val = std::move(value);
  return Var(std::move(n));
}

inline Var constant_scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

namespace detail {

inline Var make_op(Matrix val, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  for (const auto& in : inputs) {
    n->requires_grad = n->requires_grad || in.requires_grad();
    n->parents.push_back(in.node());
  }
  if (n->requires_grad) n->backward_fn = std::move(backward);
  return Var(std::move(n));
}

inline void accum(Node& parent, const Matrix& g) {
  if (parent.grad.size() == 0) parent.grad = Matrix::Zero(parent.val.rows(), parent.val.cols());
  parent.grad += g;
}

}  // namespace detail

// --------------------------- elementwise binary ---------------------------

inline Var operator+(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return detail::make_op(a.value() + b.value(), {a, b}, [](Node& n) {
    detail::accum(*n.parents[0], n.grad);
    detail::accum(*n.parents[1], n.grad);
  });
}

inline Var operator-(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return detail::make_op(a.value() - b.value(), {a, b}, [](Node& n) {
    detail::accum(*n.parents[0], n.grad);
    detail::accum(*n.parents[1], Matrix(-n.grad));
  });
}

inline Var operator*(const Var& a, const Var& b) {  // elementwise
  check(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  return detail::make_op(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
    detail::accum(*n.parents[0], n.grad.cwiseProduct(n.parents[1]->val));
    detail::accum(*n.parents[1], n.grad.cwiseProduct(n.parents[0]->val));
  });
}

inline Var operator/(const Var& a, const Var& b) {  // elementwise
  check(a.rows() == b.rows() && a.cols() == b.cols(), "div: shape mismatch");
  return detail::make_op(a.value().cwiseQuotient(b.value()), {a, b}, [](Node& n) {
    const Matrix& bv = n.parents[1]->val;
    detail::accum(*n.parents[0], n.grad.cwiseQuotient(bv));
    detail::accum(*n.parents[1],
                  Matrix(-n.grad.cwiseProduct(n.val).cwiseQuotient(bv)));
  });
}

// --------------------------- scalar broadcasts ----------------------------

inline Var operator+(const Var& a, double c) {
  return detail::make_op(a.value().array() + c, {a},
                         [](Node& n) { detail::accum(*n.parents[0], n.grad); });
}
inline Var operator+(double c, const Var& a) { return a + c; }
inline Var operator-(const Var& a, double c) { return a + (-c); }

inline Var operator*(const Var& a, double c) {
  return detail::make_op(a.value() * c, {a},
                         [c](Node& n) { detail::accum(*n.parents[0], Matrix(n.grad * c)); });
}
inline Var operator*(double c, const Var& a) { return a * c; }
inline Var operator-(const Var& a) { return a * -1.0; }
inline Var operator-(double c, const Var& a) { return (-a) + c; }
inline Var operator/(const Var& a, double c) { return a * (1.0 / c); }

inline Var reciprocal(const Var& a, double num = 1.0) {
  return detail::make_op(num * a.value().cwiseInverse(), {a}, [](Node& n) {
    detail::accum(*n.parents[0],
                  Matrix(-n.grad.cwiseProduct(n.val).cwiseQuotient(n.parents[0]->val)));
  });
}

// --------------------------- elementwise unary ----------------------------

inline Var exp(const Var& a) {
  return detail::make_op(a.value().array().exp(), {a}, [](Node& n) {
    detail::accum(*n.parents[0], n.grad.cwiseProduct(n.val));
  });
}

inline Var log(const Var& a) {
  return detail::make_op(a.value().array().log(), {a}, [](Node& n) {
    detail::accum(*n.parents[0], n.grad.cwiseQuotient(n.parents[0]->val));
  });
}

inline Var sqrt(const Var& a) {
  return detail::make_op(a.value().array().sqrt(), {a}, [](Node& n) {
    detail::accum(*n.parents[0], Matrix(0.5 * n.grad.cwiseQuotient(n.val)));
  });
}

inline Var square(const Var& a) {
  return detail::make_op(a.value().array().square(), {a}, [](Node& n) {
    detail::accum(*n.parents[0], Matrix(2.0 * n.grad.cwiseProduct(n.parents[0]->val)));
  });
}

inline Var sigmoid(const Var& a) {
  Matrix v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return detail::make_op(std::move(v), {a}, [](Node& n) {
    const auto s = n.val.array();
    detail::accum(*n.parents[0], Matrix((n.grad.array() * s * (1.0 - s)).matrix()));
  });
}

// Numerically stable log(1 + exp(x)); derivative is sigmoid(x).
inline Var softplus(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  return detail::make_op(std::move(v), {a}, [](Node& n) {
    const auto x = n.parents[0]->val.array();
    detail::accum(*n.parents[0], Matrix((n.grad.array() / (1.0 + (-x).exp())).matrix()));
  });
}

inline Var elu(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
  return detail::make_op(std::move(v), {a}, [](Node& n) {
    const auto x = n.parents[0]->val.array();
    Matrix d = (x > 0.0).select(Matrix::Ones(n.val.rows(), n.val.cols()),
                                Matrix(x.exp().matrix()));
    detail::accum(*n.parents[0], Matrix(n.grad.cwiseProduct(d)));
  });
}

inline Var tanh(const Var& a) {
  return detail::make_op(a.value().array().tanh(), {a}, [](Node& n) {
    detail::accum(*n.parents[0],
                  Matrix((n.grad.array() * (1.0 - n.val.array().square())).matrix()));
  });
}

// Gradient passes only where the value is strictly inside (lo, hi).
inline Var clamp(const Var& a, double lo, double hi) {
  Matrix v = a.value().array().max(lo).min(hi);
  return detail::make_op(std::move(v), {a}, [lo, hi](Node& n) {
    const auto x = n.parents[0]->val.array();
    Matrix pass = ((x > lo) && (x < hi))
                      .select(n.grad, Matrix::Zero(n.grad.rows(), n.grad.cols()));
    detail::accum(*n.parents[0], pass);
  });
}

// --------------------------- matrix / reductions --------------------------

inline Var matmul(const Var& a, const Var& b) {
  check(a.cols() == b.rows(), "matmul: inner dimensions differ");
  return detail::make_op(a.value() * b.value(), {a, b}, [](Node& n) {
    detail::accum(*n.parents[0], Matrix(n.grad * n.parents[1]->val.transpose()));
    detail::accum(*n.parents[1], Matrix(n.parents[0]->val.transpose() * n.grad));
  });
}

inline Var sum(const Var& a) {
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return detail::make_op(std::move(v), {a}, [](Node& n) {
    detail::accum(*n.parents[0],
                  Matrix(Matrix::Constant(n.parents[0]->val.rows(), n.parents[0]->val.cols(),
                                          n.grad(0, 0))));
  });
}

inline Var mean(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.value().size());
  return sum(a) * inv;
}

inline Var row_sum(const Var& a) {  // n x m -> n x 1
  return detail::make_op(a.value().rowwise().sum(), {a}, [](Node& n) {
    detail::accum(*n.parents[0],
                  Matrix(n.grad * Matrix::Ones(1, n.parents[0]->val.cols())));
  });
}

// ----------------------------- broadcasting -------------------------------

// A (n x m) + r (1 x m), row vector broadcast over rows (bias add).
inline Var add_rowvec(const Var& a, const Var& r) {
  check(r.rows() == 1 && r.cols() == a.cols(), "add_rowvec: shape mismatch");
  Matrix v = a.value().rowwise() + r.value().row(0);
  return detail::make_op(std::move(v), {a, r}, [](Node& n) {
    detail::accum(*n.parents[0], n.grad);
    detail::accum(*n.parents[1], Matrix(n.grad.colwise().sum()));
  });
}

// A (n x m) scaled per row by c (n x 1).
inline Var mul_colvec(const Var& a, const Var& c) {
  check(c.cols() == 1 && c.rows() == a.rows(), "mul_colvec: shape mismatch");
  Matrix v = a.value().array().colwise() * c.value().col(0).array();
  return detail::make_op(std::move(v), {a, c}, [](Node& n) {
    const auto cv = n.parents[1]->val.col(0).array();
    detail::accum(*n.parents[0], Matrix((n.grad.array().colwise() * cv).matrix()));
    detail::accum(*n.parents[1],
                  Matrix(n.grad.cwiseProduct(n.parents[0]->val).rowwise().sum()));
  });
}

inline Var div_colvec(const Var& a, const Var& c) {
  check(c.cols() == 1 && c.rows() == a.rows(), "div_colvec: shape mismatch");
  Matrix v = a.value().array().colwise() / c.value().col(0).array();
  return detail::make_op(std::move(v), {a, c}, [](Node& n) {
    const auto cv = n.parents[1]->val.col(0).array();
    detail::accum(*n.parents[0], Matrix((n.grad.array().colwise() / cv).matrix()));
    Matrix dc = -(n.grad.cwiseProduct(n.val)).rowwise().sum();
    detail::accum(*n.parents[1], Matrix((dc.array() / cv).matrix()));
  });
}

// ------------------------- structural operations --------------------------

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index len) {
  check(start >= 0 && start + len <= a.cols(), "slice_cols: out of range");
  return detail::make_op(a.value().middleCols(start, len), {a}, [start, len](Node& n) {
    Node& p = *n.parents[0];
    if (p.grad.size() == 0) p.grad = Matrix::Zero(p.val.rows(), p.val.cols());
    p.grad.middleCols(start, len) += n.grad;
  });
}

inline Var concat_cols(const Var& a, const Var& b) {
  check(a.rows() == b.rows(), "concat_cols: row mismatch");
  Matrix v(a.rows(), a.cols() + b.cols());
  v << a.value(), b.value();
  return detail::make_op(std::move(v), {a, b}, [](Node& n) {
    const Eigen::Index ca = n.parents[0]->val.cols();
    detail::accum(*n.parents[0], Matrix(n.grad.leftCols(ca)));
    detail::accum(*n.parents[1], Matrix(n.grad.rightCols(n.grad.cols() - ca)));
  });
}

// Per-row element pick: out(i, 0) = src(row_i, idx[i]) where row_i is 0 when
// src has a single (broadcast) row, else i. Backward scatter-adds.
inline Var gather_cols(const Var& src, const std::vector<Eigen::Index>& idx) {
  const bool broadcast = src.rows() == 1;
  const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
  check(broadcast || src.rows() == n, "gather_cols: row mismatch");
  Matrix v(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    check(idx[i] >= 0 && idx[i] < src.cols(), "gather_cols: index out of range");
    v(i, 0) = src.value()(broadcast ? 0 : i, idx[i]);
  }
  return detail::make_op(std::move(v), {src}, [idx, broadcast](Node& n) {
    Node& p = *n.parents[0];
    if (p.grad.size() == 0) p.grad = Matrix::Zero(p.val.rows(), p.val.cols());
    for (Eigen::Index i = 0; i < n.grad.rows(); ++i)
      p.grad(broadcast ? 0 : i, idx[i]) += n.grad(i, 0);
  });
}

// Elementwise select on a constant mask; gradient routes to the taken branch.
inline Var where(const Matrix& mask, const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols() && mask.rows() == a.rows() &&
            mask.cols() == a.cols(),
        "where: shape mismatch");
  Matrix v = (mask.array() != 0.0).select(a.value(), b.value());
  return detail::make_op(std::move(v), {a, b}, [mask](Node& n) {
    Matrix zero = Matrix::Zero(n.grad.rows(), n.grad.cols());
    detail::accum(*n.parents[0], Matrix((mask.array() != 0.0).select(n.grad, zero)));
    detail::accum(*n.parents[1], Matrix((mask.array() != 0.0).select(zero, n.grad)));
  });
}

// Binary cross-entropy from logits against constant 0/1 targets, per row.
inline Var bce_with_logits(const Var& logits, const Matrix& targets) {
  check(logits.rows() == targets.rows() && logits.cols() == 1 && targets.cols() == 1,
        "bce_with_logits: expects column vectors");
  Matrix v(logits.rows(), 1);
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double l = logits.value()(i, 0), t = targets(i, 0);
    v(i, 0) = std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::abs(l)));
  }
  return detail::make_op(std::move(v), {logits}, [targets](Node& n) {
    const auto l = n.parents[0]->val.array();
    Matrix d = ((1.0 / (1.0 + (-l).exp())) - targets.array()).matrix();
    detail::accum(*n.parents[0], Matrix(n.grad.cwiseProduct(d)));
  });
}

// ------------------------------- backward ---------------------------------

// Populates .grad() on every node reachable from `loss`, accumulating over
// all paths. Loss must be a finite scalar.
void backward(const Var& loss);

}  // namespace ide::ad
