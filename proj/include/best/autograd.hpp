#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A computation builds a DAG of Nodes; backward() walks it in
// reverse topological order. Leaves created with parameter() keep their
// gradient across calls until zero_grad().

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace best {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

namespace ag {

template <typename T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  bool is_leaf = true;

  template <typename Derived>
  void add_grad(const Eigen::MatrixBase<Derived>& g) {
    if (grad.size() == 0) grad = Matrix<T>::Zero(value.rows(), value.cols());
    grad += g;
  }
  Node& parent(std::size_t i) { return *parents[i]; }
  bool parent_needs(std::size_t i) const { return parents[i]->requires_grad; }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Matrix<T>& value() const { return node_->value; }
  /// Direct access for optimizers and checkpoint loading. Never call while a
  /// graph built from this leaf is awaiting backward().
  Matrix<T>& mutable_value() { return node_->value; }
  const Matrix<T>& grad() const { return node_->grad; }
  Matrix<T>& mutable_grad() { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  T scalar() const {
    if (node_->value.size() != 1) throw std::logic_error("scalar() on non-scalar value");
    return node_->value(0, 0);
  }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

  void zero_grad() { node_->grad.resize(0, 0); }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> constant(Matrix<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> parameter(Matrix<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var<T>(std::move(n));
}

/// While alive on a thread, new ops record no graph edges.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(enabled()) { enabled() = false; }
  ~NoGradGuard() { enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }

 private:
  bool previous_;
};

namespace detail {

template <typename T>
Var<T> make(Matrix<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool needs = false;
  if (NoGradGuard::enabled())
    for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(fn);
    n->requires_grad = true;
    n->is_leaf = false;
  }
  return Var<T>(std::move(n));
}

inline void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace detail

/// Backpropagates from `root`, seeding its gradient with ones (or `seed`).
/// Interior gradients are reset first so a graph may be differentiated more
/// than once; leaf gradients accumulate.
template <typename T>
void backward(const Var<T>& root, const Matrix<T>* seed = nullptr) {
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order)
    if (!n->is_leaf) n->grad.resize(0, 0);
  Node<T>* r = root.node().get();
  if (seed) {
    r->add_grad(*seed);
  } else {
    r->add_grad(Matrix<T>::Ones(r->value.rows(), r->value.cols()));
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return detail::make<T>(a.value() + b.value(), {a, b}, [](Node<T>& n) {
    if (n.parent_needs(0)) n.parent(0).add_grad(n.grad);
    if (n.parent_needs(1)) n.parent(1).add_grad(n.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return detail::make<T>(a.value() - b.value(), {a, b}, [](Node<T>& n) {
    if (n.parent_needs(0)) n.parent(0).add_grad(n.grad);
    if (n.parent_needs(1)) n.parent(1).add_grad(-n.grad);
  });
}

template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard: shape mismatch");
  return detail::make<T>(a.value().cwiseProduct(b.value()), {a, b}, [](Node<T>& n) {
    if (n.parent_needs(0)) n.parent(0).add_grad(n.grad.cwiseProduct(n.parent(1).value));
    if (n.parent_needs(1)) n.parent(1).add_grad(n.grad.cwiseProduct(n.parent(0).value));
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return detail::make<T>(a.value() * s, {a}, [s](Node<T>& n) { n.parent(0).add_grad(n.grad * s); });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::check(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  return detail::make<T>(a.value() * b.value(), {a, b}, [](Node<T>& n) {
    if (n.parent_needs(0)) n.parent(0).add_grad(n.grad * n.parent(1).value.transpose());
    if (n.parent_needs(1)) n.parent(1).add_grad(n.parent(0).value.transpose() * n.grad);
  });
}

/// a * b^T
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  detail::check(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  return detail::make<T>(a.value() * b.value().transpose(), {a, b}, [](Node<T>& n) {
    if (n.parent_needs(0)) n.parent(0).add_grad(n.grad * n.parent(1).value);
    if (n.parent_needs(1)) n.parent(1).add_grad(n.grad.transpose() * n.parent(0).value);
  });
}

/// Adds a 1 x cols row to every row of `a`.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  detail::check(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias shape mismatch");
  Matrix<T> out = a.value().rowwise() + row.value().row(0);
  return detail::make<T>(std::move(out), {a, row}, [](Node<T>& n) {
    if (n.parent_needs(0)) n.parent(0).add_grad(n.grad);
    if (n.parent_needs(1)) n.parent(1).add_grad(n.grad.colwise().sum());
  });
}

/// x * W + b, with W stored in_features x out_features.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return add_row(matmul(x, w), b);
}

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  Matrix<T> out = a.value().unaryExpr([](T v) { return gelu_value(v); });
  return detail::make<T>(std::move(out), {a}, [](Node<T>& n) {
    Matrix<T> d = n.parent(0).value.unaryExpr([](T v) { return gelu_derivative(v); });
    n.parent(0).add_grad(n.grad.cwiseProduct(d));
  });
}

/// Row-wise layer normalization with learned 1 x cols gain and bias.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  const Index rows = x.rows(), cols = x.cols();
  detail::check(gain.cols() == cols && bias.cols() == cols, "layer_norm: parameter shape mismatch");
  Matrix<T> normed(rows, cols);
  std::vector<T> inv_std(static_cast<std::size_t>(rows));
  for (Index r = 0; r < rows; ++r) {
    const T mean = x.value().row(r).mean();
    const T var = (x.value().row(r).array() - mean).square().mean();
    inv_std[static_cast<std::size_t>(r)] = T(1) / std::sqrt(var + eps);
    normed.row(r) = (x.value().row(r).array() - mean) * inv_std[static_cast<std::size_t>(r)];
  }
  Matrix<T> out = (normed.array().rowwise() * gain.value().row(0).array()).rowwise() +
                  bias.value().row(0).array();
  return detail::make<T>(std::move(out), {x, gain, bias},
                         [normed = std::move(normed), inv_std = std::move(inv_std)](Node<T>& n) {
                           const Index rows = normed.rows();
                           const T c = static_cast<T>(normed.cols());
                           if (n.parent_needs(1))
                             n.parent(1).add_grad(n.grad.cwiseProduct(normed).colwise().sum());
                           if (n.parent_needs(2)) n.parent(2).add_grad(n.grad.colwise().sum());
                           if (n.parent_needs(0)) {
                             Matrix<T> gx(rows, normed.cols());
                             for (Index r = 0; r < rows; ++r) {
                               auto dy = (n.grad.row(r).array() * n.parent(1).value.row(0).array()).eval();
                               const T mean_dy = dy.sum() / c;
                               const T mean_dy_xhat = (dy * normed.row(r).array()).sum() / c;
                               gx.row(r) = inv_std[static_cast<std::size_t>(r)] *
                                           (dy - mean_dy - normed.row(r).array() * mean_dy_xhat);
                             }
                             n.parent(0).add_grad(gx);
                           }
                         });
}

template <typename T>
Matrix<T> softmax_rows_value(const Matrix<T>& a) {
  Matrix<T> out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const T m = a.row(r).maxCoeff();
    out.row(r) = (a.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  Matrix<T> out = softmax_rows_value(a.value());
  return detail::make<T>(out, {a}, [y = out](Node<T>& n) {
    Matrix<T> gx(y.rows(), y.cols());
    for (Index r = 0; r < y.rows(); ++r) {
      const T dot = n.grad.row(r).dot(y.row(r));
      gx.row(r) = y.row(r).array() * (n.grad.row(r).array() - dot);
    }
    n.parent(0).add_grad(gx);
  });
}

// ---------------------------------------------------------------------------
// Structural ops

template <typename T>
Var<T> slice_cols(const Var<T>& a, Index start, Index count) {
  detail::check(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  return detail::make<T>(a.value().middleCols(start, count), {a}, [start, count](Node<T>& n) {
    Node<T>& p = n.parent(0);
    if (p.grad.size() == 0) p.grad = Matrix<T>::Zero(p.value.rows(), p.value.cols());
    p.grad.middleCols(start, count) += n.grad;
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  detail::check(!parts.empty(), "concat_cols: no inputs");
  Index cols = 0;
  for (const auto& p : parts) {
    detail::check(p.rows() == parts.front().rows(), "concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix<T> out(parts.front().rows(), cols);
  Index at = 0;
  std::vector<Index> offsets;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return detail::make<T>(std::move(out), parts, [offsets](Node<T>& n) {
    for (std::size_t i = 0; i < n.parents.size(); ++i)
      if (n.parent_needs(i)) n.parent(i).add_grad(n.grad.middleCols(offsets[i], n.parent(i).value.cols()));
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  detail::check(!parts.empty(), "concat_rows: no inputs");
  Index rows = 0;
  for (const auto& p : parts) {
    detail::check(p.cols() == parts.front().cols(), "concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix<T> out(rows, parts.front().cols());
  Index at = 0;
  std::vector<Index> offsets;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return detail::make<T>(std::move(out), parts, [offsets](Node<T>& n) {
    for (std::size_t i = 0; i < n.parents.size(); ++i)
      if (n.parent_needs(i)) n.parent(i).add_grad(n.grad.middleRows(offsets[i], n.parent(i).value.rows()));
  });
}

/// out.row(i) = a.row(rows[i]); gradients scatter-add back.
template <typename T>
Var<T> gather_rows(const Var<T>& a, std::vector<Index> rows) {
  Matrix<T> out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail::check(rows[i] >= 0 && rows[i] < a.rows(), "gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  return detail::make<T>(std::move(out), {a}, [rows = std::move(rows)](Node<T>& n) {
    Node<T>& p = n.parent(0);
    if (p.grad.size() == 0) p.grad = Matrix<T>::Zero(p.value.rows(), p.value.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) p.grad.row(rows[i]) += n.grad.row(static_cast<Index>(i));
  });
}

/// Column-wise mean over rows: (rows x cols) -> (1 x cols).
template <typename T>
Var<T> mean_rows(const Var<T>& a) {
  const Index rows = a.rows();
  detail::check(rows > 0, "mean_rows: empty input");
  return detail::make<T>(a.value().colwise().mean(), {a}, [rows](Node<T>& n) {
    n.parent(0).add_grad(n.grad.replicate(rows, 1) / static_cast<T>(rows));
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  return detail::make<T>(std::move(out), {a}, [](Node<T>& n) {
    const T g = n.grad(0, 0);
    Node<T>& p = n.parent(0);
    p.add_grad(Matrix<T>::Constant(p.value.rows(), p.value.cols(), g));
  });
}

/// Sum of squared entries.
template <typename T>
Var<T> squared_sum(const Var<T>& a) {
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return detail::make<T>(std::move(out), {a}, [](Node<T>& n) {
    n.parent(0).add_grad(n.parent(0).value * (T(2) * n.grad(0, 0)));
  });
}

/// Mean of squared differences between `a` and a constant target.
template <typename T>
Var<T> mse(const Var<T>& a, const Matrix<T>& target) {
  detail::check(a.rows() == target.rows() && a.cols() == target.cols(), "mse: shape mismatch");
  const T count = static_cast<T>(a.value().size());
  Matrix<T> diff = a.value() - target;
  Matrix<T> out(1, 1);
  out(0, 0) = diff.squaredNorm() / count;
  return detail::make<T>(std::move(out), {a}, [diff = std::move(diff), count](Node<T>& n) {
    n.parent(0).add_grad(diff * (T(2) * n.grad(0, 0) / count));
  });
}

template <typename T>
Var<T> stop_gradient(const Var<T>& a) {
  return constant<T>(a.value());
}

/// Sum over rows of -log softmax(logits)[row, target[row]].
template <typename T>
Var<T> cross_entropy_sum(const Var<T>& logits, const std::vector<Index>& targets) {
  detail::check(static_cast<Index>(targets.size()) == logits.rows(), "cross_entropy: target count mismatch");
  Matrix<T> probs = softmax_rows_value(logits.value());
  T loss = 0;
  for (Index r = 0; r < logits.rows(); ++r) {
    const Index t = targets[static_cast<std::size_t>(r)];
    detail::check(t >= 0 && t < logits.cols(), "cross_entropy: target out of range");
    const T m = logits.value().row(r).maxCoeff();
    const T lse = m + std::log((logits.value().row(r).array() - m).exp().sum());
    loss += lse - logits.value()(r, t);
  }
  Matrix<T> out(1, 1);
  out(0, 0) = loss;
  return detail::make<T>(std::move(out), {logits}, [probs = std::move(probs), targets](Node<T>& n) {
    Matrix<T> g = probs;
    for (Index r = 0; r < g.rows(); ++r) g(r, targets[static_cast<std::size_t>(r)]) -= T(1);
    n.parent(0).add_grad(g * n.grad(0, 0));
  });
}

/// For x laid out as blocks of `adjacency.rows()` consecutive rows (one
/// block per frame), returns adjacency * block for every block.
template <typename T>
Var<T> graph_propagate(const Var<T>& x, const Matrix<T>& adjacency) {
  const Index nodes = adjacency.rows();
  detail::check(adjacency.cols() == nodes && nodes > 0 && x.rows() % nodes == 0,
                "graph_propagate: layout mismatch");
  const Index blocks = x.rows() / nodes;
  Matrix<T> out(x.rows(), x.cols());
  for (Index b = 0; b < blocks; ++b) out.middleRows(b * nodes, nodes) = adjacency * x.value().middleRows(b * nodes, nodes);
  return detail::make<T>(std::move(out), {x}, [adjacency, nodes, blocks](Node<T>& n) {
    Matrix<T> g(n.grad.rows(), n.grad.cols());
    for (Index b = 0; b < blocks; ++b)
      g.middleRows(b * nodes, nodes) = adjacency.transpose() * n.grad.middleRows(b * nodes, nodes);
    n.parent(0).add_grad(g);
  });
}

/// Mean over each block of `group` consecutive rows.
template <typename T>
Var<T> group_mean(const Var<T>& x, Index group) {
  detail::check(group > 0 && x.rows() % group == 0, "group_mean: layout mismatch");
  const Index blocks = x.rows() / group;
  Matrix<T> out(blocks, x.cols());
  for (Index b = 0; b < blocks; ++b) out.row(b) = x.value().middleRows(b * group, group).colwise().mean();
  return detail::make<T>(std::move(out), {x}, [group, blocks](Node<T>& n) {
    Matrix<T> g(blocks * group, n.grad.cols());
    for (Index b = 0; b < blocks; ++b)
      g.middleRows(b * group, group) = n.grad.row(b).replicate(group, 1) / static_cast<T>(group);
    n.parent(0).add_grad(g);
  });
}

/// Replaces column slices of `x` with rows of `token`. `slots` lists
/// (row, slice) pairs; slice k covers columns [k*width, (k+1)*width).
/// `token` has either one row (shared) or one row per slice.
template <typename T>
Var<T> replace_slices(const Var<T>& x, const Var<T>& token, const std::vector<std::pair<Index, Index>>& slots) {
  const Index width = token.cols();
  detail::check(width > 0 && x.cols() % width == 0, "replace_slices: width mismatch");
  const Index slices = x.cols() / width;
  detail::check(token.rows() == 1 || token.rows() == slices, "replace_slices: token rows mismatch");
  Matrix<T> out = x.value();
  for (const auto& [r, k] : slots) {
    detail::check(r >= 0 && r < x.rows() && k >= 0 && k < slices, "replace_slices: slot out of range");
    out.block(r, k * width, 1, width) = token.value().row(token.rows() == 1 ? 0 : k);
  }
  return detail::make<T>(std::move(out), {x, token}, [slots, width](Node<T>& n) {
    if (n.parent_needs(0)) {
      Matrix<T> g = n.grad;
      for (const auto& [r, k] : slots) g.block(r, k * width, 1, width).setZero();
      n.parent(0).add_grad(g);
    }
    if (n.parent_needs(1)) {
      Node<T>& tok = n.parent(1);
      Matrix<T> g = Matrix<T>::Zero(tok.value.rows(), tok.value.cols());
      for (const auto& [r, k] : slots) g.row(tok.value.rows() == 1 ? 0 : k) += n.grad.block(r, k * width, 1, width);
      tok.add_grad(g);
    }
  });
}

/// Inverted dropout; identity when p == 0.
template <typename T, typename Rng>
Var<T> dropout(const Var<T>& x, T p, Rng& rng) {
  if (p <= T(0)) return x;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  Matrix<T> mask(x.rows(), x.cols());
  const T s = T(1) / (T(1) - p);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? s : T(0);
  Matrix<T> out = x.value().cwiseProduct(mask);
  return detail::make<T>(std::move(out), {x}, [mask = std::move(mask)](Node<T>& n) {
    n.parent(0).add_grad(n.grad.cwiseProduct(mask));
  });
}

}  // namespace ag
}  // namespace best
