#pragma once

// Minimal reverse-mode automatic differentiation over dense float64
// matrices. A Tensor is a handle to a graph node; operations build the graph
// while gradient recording is enabled and Tensor::backward() walks it in
// reverse topological order.

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "graspgen/error.hpp"

namespace graspgen::ad {

using Matrix = Eigen::MatrixXd;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording for its lifetime (inference, frozen modules).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Matrix value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Tensor(std::move(n));
  }

  static Tensor parameter(Matrix value, std::string name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->name = std::move(name);
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  const std::string& name() const { return node_->name; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  std::vector<Eigen::Index> shape() const { return {rows(), cols()}; }
  double item() const {
    if (node_->value.size() != 1) throw ShapeError("item() on a non-scalar tensor");
    return node_->value(0, 0);
  }
  void zero_grad() { node_->grad.resize(0, 0); }
  const std::shared_ptr<Node>& node() const { return node_; }

  /// Back-propagates from a scalar, accumulating into every reachable
  /// tensor that requires gradients.
  void backward() const {
    if (node_->value.size() != 1) throw ShapeError("backward() requires a scalar output");
    if (!node_->requires_grad) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        Node* p = n->parents[i++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->accumulate(Matrix::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward && n->grad.size() != 0) n->backward(*n);
    }
  }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Tensor make_result(Matrix value, std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (grad_mode()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      n->requires_grad = true;
      for (auto& t : inputs) n->parents.push_back(t.node());
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

inline void push(const std::shared_ptr<Node>& n, const Matrix& g) {
  if (n->requires_grad) n->accumulate(g);
}

inline std::string shape_str(const Tensor& t) {
  return "(" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + ")";
}

/// a * b. Without a graph (inference) the product is formed one row at a
/// time through aligned temporaries, so every output row is a function of its
/// own input row alone, bit for bit: embeddings and scores then do not depend
/// on point order or on what else is in the batch. Training keeps the faster
/// blocked product, whose rounding can depend on a row's position.
inline Matrix product(const Matrix& a, const Matrix& b) {
  if (grad_mode()) return a * b;
  const Matrix bt = b.transpose();
  Matrix out(a.rows(), b.cols());
  Eigen::VectorXd xi(a.cols()), yi(b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    xi = a.row(i).transpose();
    yi.noalias() = bt * xi;
    out.row(i) = yi.transpose();
  }
  return out;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: " + detail::shape_str(a) + " x " + detail::shape_str(b));
  auto an = a.node(), bn = b.node();
  return detail::make_result(detail::product(a.value(), b.value()), {a, b}, [an, bn](Node& out) {
    if (an->requires_grad) an->accumulate(out.grad * bn->value.transpose());
    if (bn->requires_grad) bn->accumulate(an->value.transpose() * out.grad);
  });
}

/// x W + b with b a 1 x out row broadcast over rows of x.
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols())
    throw ShapeError("affine: " + detail::shape_str(x) + " " + detail::shape_str(w) + " " + detail::shape_str(b));
  Matrix v = detail::product(x.value(), w.value());
  v.rowwise() += b.value().row(0);
  auto xn = x.node(), wn = w.node(), bn = b.node();
  return detail::make_result(std::move(v), {x, w, b}, [xn, wn, bn](Node& out) {
    if (xn->requires_grad) xn->accumulate(out.grad * wn->value.transpose());
    if (wn->requires_grad) wn->accumulate(xn->value.transpose() * out.grad);
    if (bn->requires_grad) bn->accumulate(out.grad.colwise().sum());
  });
}

/// Elementwise a + b; b may also be a 1 x cols row broadcast over rows.
inline Tensor add(const Tensor& a, const Tensor& b) {
  auto an = a.node(), bn = b.node();
  if (a.rows() == b.rows() && a.cols() == b.cols()) {
    return detail::make_result(a.value() + b.value(), {a, b}, [an, bn](Node& out) {
      detail::push(an, out.grad);
      detail::push(bn, out.grad);
    });
  }
  if (b.rows() == 1 && b.cols() == a.cols()) {
    Matrix v = a.value();
    v.rowwise() += b.value().row(0);
    return detail::make_result(std::move(v), {a, b}, [an, bn](Node& out) {
      detail::push(an, out.grad);
      if (bn->requires_grad) bn->accumulate(out.grad.colwise().sum());
    });
  }
  throw ShapeError("add: " + detail::shape_str(a) + " + " + detail::shape_str(b));
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("sub: " + detail::shape_str(a) + " - " + detail::shape_str(b));
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.value() - b.value(), {a, b}, [an, bn](Node& out) {
    detail::push(an, out.grad);
    if (bn->requires_grad) bn->accumulate(-out.grad);
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("mul: " + detail::shape_str(a) + " * " + detail::shape_str(b));
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.value().cwiseProduct(b.value()), {a, b}, [an, bn](Node& out) {
    if (an->requires_grad) an->accumulate(out.grad.cwiseProduct(bn->value));
    if (bn->requires_grad) bn->accumulate(out.grad.cwiseProduct(an->value));
  });
}

inline Tensor scale(const Tensor& a, double s) {
  auto an = a.node();
  return detail::make_result(a.value() * s, {a}, [an, s](Node& out) { an->accumulate(out.grad * s); });
}

inline Tensor relu(const Tensor& a) {
  auto an = a.node();
  return detail::make_result(a.value().cwiseMax(0.0), {a}, [an](Node& out) {
    an->accumulate((an->value.array() > 0.0).select(out.grad, 0.0));
  });
}

/// Exact GELU, x * Phi(x).
inline Tensor gelu(const Tensor& a) {
  auto an = a.node();
  Matrix v = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); });
  return detail::make_result(std::move(v), {a}, [an](Node& out) {
    const Matrix d = an->value.unaryExpr([](double x) {
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return cdf + x * pdf;
    });
    an->accumulate(out.grad.cwiseProduct(d));
  });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  auto an = a.node();
  Matrix v = a.value().unaryExpr(&sigmoid_scalar);
  return detail::make_result(v, {a}, [an, v](Node& out) {
    an->accumulate(out.grad.cwiseProduct(v.cwiseProduct((1.0 - v.array()).matrix())));
  });
}

inline Tensor sum(const Tensor& a) {
  auto an = a.node();
  const Eigen::Index r = a.rows(), c = a.cols();
  return detail::make_result(Matrix::Constant(1, 1, a.value().sum()), {a}, [an, r, c](Node& out) {
    an->accumulate(Matrix::Constant(r, c, out.grad(0, 0)));
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Mean over all elements of (pred - target)^2.
inline Tensor mse(const Tensor& pred, const Tensor& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ShapeError("mse: " + detail::shape_str(pred) + " vs " + detail::shape_str(target));
  const Matrix diff = pred.value() - target.value();
  const double n = static_cast<double>(diff.size());
  auto pn = pred.node(), tn = target.node();
  return detail::make_result(Matrix::Constant(1, 1, diff.squaredNorm() / n), {pred, target},
                             [pn, tn, diff, n](Node& out) {
                               const Matrix g = (2.0 * out.grad(0, 0) / n) * diff;
                               detail::push(pn, g);
                               if (tn->requires_grad) tn->accumulate(-g);
                             });
}

/// Mean binary cross-entropy on probabilities; labels are constants.
inline Tensor bce(const Tensor& prob, const Matrix& labels) {
  if (prob.rows() != labels.rows() || prob.cols() != labels.cols())
    throw ShapeError("bce: " + detail::shape_str(prob) + " vs labels");
  constexpr double kEps = 1e-15;
  const Matrix p = prob.value().cwiseMax(kEps).cwiseMin(1.0 - kEps);
  const double n = static_cast<double>(p.size());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double y = labels(i), q = p(i);
    loss -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
  }
  auto pn = prob.node();
  return detail::make_result(Matrix::Constant(1, 1, loss / n), {prob}, [pn, p, labels, n](Node& out) {
    Matrix g(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double y = labels(i), q = p(i);
      g(i) = (-y / q + (1.0 - y) / (1.0 - q)) / n;
    }
    pn->accumulate(out.grad(0, 0) * g);
  });
}

/// Mean BCE evaluated on logits, log(1 + e^z) - y z, numerically stable.
inline Tensor bce_with_logits(const Tensor& logits, const Matrix& labels) {
  if (logits.rows() != labels.rows() || logits.cols() != labels.cols())
    throw ShapeError("bce_with_logits: " + detail::shape_str(logits) + " vs labels");
  const Matrix& z = logits.value();
  const double n = static_cast<double>(z.size());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double x = z(i);
    loss += std::max(x, 0.0) - x * labels(i) + std::log1p(std::exp(-std::abs(x)));
  }
  auto zn = logits.node();
  return detail::make_result(Matrix::Constant(1, 1, loss / n), {logits}, [zn, labels, n](Node& out) {
    const Matrix s = zn->value.unaryExpr(&sigmoid_scalar);
    zn->accumulate((out.grad(0, 0) / n) * (s - labels));
  });
}

/// Rows are `groups` consecutive blocks of equal size; returns the
/// column-wise max of each block (groups x cols). Ties route the gradient to
/// the first maximal row.
inline Tensor maxpool_over_points(const Tensor& x, Eigen::Index groups) {
  if (groups < 1 || x.rows() % groups != 0 || x.rows() == 0)
    throw ShapeError("maxpool_over_points: " + std::to_string(x.rows()) + " rows not divisible into " +
                     std::to_string(groups) + " groups");
  const Eigen::Index n = x.rows() / groups, c = x.cols();
  Matrix v(groups, c);
  Eigen::MatrixXi arg(groups, c);
  const Matrix& xv = x.value();
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (Eigen::Index j = 0; j < c; ++j) {
      Eigen::Index best = g * n;
      double m = xv(best, j);
      for (Eigen::Index i = g * n + 1; i < (g + 1) * n; ++i) {
        if (xv(i, j) > m) {
          m = xv(i, j);
          best = i;
        }
      }
      v(g, j) = m;
      arg(g, j) = static_cast<int>(best);
    }
  }
  auto xn = x.node();
  const Eigen::Index rows = x.rows();
  return detail::make_result(std::move(v), {x}, [xn, arg, rows](Node& out) {
    Matrix g = Matrix::Zero(rows, out.grad.cols());
    for (Eigen::Index r = 0; r < arg.rows(); ++r)
      for (Eigen::Index j = 0; j < arg.cols(); ++j) g(arg(r, j), j) += out.grad(r, j);
    xn->accumulate(g);
  });
}

/// Column-wise concatenation of tensors with equal row counts.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat: row mismatch " + detail::shape_str(p));
    cols += p.cols();
  }
  Matrix v(rows, cols);
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    nodes.push_back(p.node());
    offsets.push_back(off);
    off += p.cols();
  }
  return detail::make_result(std::move(v), parts, [nodes, offsets](Node& out) {
    for (std::size_t k = 0; k < nodes.size(); ++k)
      if (nodes[k]->requires_grad) nodes[k]->accumulate(out.grad.middleCols(offsets[k], nodes[k]->value.cols()));
  });
}

/// out.row(i) = x.row(index[i]); the backward pass scatter-adds.
inline Tensor gather_rows(const Tensor& x, const std::vector<Eigen::Index>& index) {
  Matrix v(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= x.rows()) throw ShapeError("gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = x.value().row(index[i]);
  }
  auto xn = x.node();
  const Eigen::Index rows = x.rows();
  return detail::make_result(std::move(v), {x}, [xn, index, rows](Node& out) {
    Matrix g = Matrix::Zero(rows, out.grad.cols());
    for (std::size_t i = 0; i < index.size(); ++i) g.row(index[i]) += out.grad.row(static_cast<Eigen::Index>(i));
    xn->accumulate(g);
  });
}

}  // namespace graspgen::ad
