#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Graph records one forward pass. Parameters live outside the graph in a
// ParameterSet; their gradients are accumulated directly into a Gradients
// buffer supplied by the caller, so several graphs (one per sample) can feed
// the same buffer. A Graph built without a gradient buffer records nothing
// and is a plain inference evaluator.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "sgp/errors.hpp"

namespace sgp {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

template <class T>
class ParameterSet {
 public:
  std::size_t add(std::string name, Matrix<T> init) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(init));
    return values_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  Matrix<T>& value(std::size_t i) { return values_[i]; }
  const Matrix<T>& value(std::size_t i) const { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    return std::nullopt;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  std::vector<T> flatten() const {
    std::vector<T> out;
    out.reserve(scalar_count());
    for (const auto& v : values_) out.insert(out.end(), v.data(), v.data() + v.size());
    return out;
  }

  void assign(std::span<const T> flat) {
    if (flat.size() != scalar_count()) throw DataError("parameter vector length mismatch");
    std::size_t off = 0;
    for (auto& v : values_) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), v.size(), v.data());
      off += static_cast<std::size_t>(v.size());
    }
  }

  template <class U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

  bool same_shape(const ParameterSet& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (values_[i].rows() != other.values_[i].rows() || values_[i].cols() != other.values_[i].cols())
        return false;
    return true;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix<T>> values_;
};

template <class T>
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParameterSet<T>& params) {
    grads_.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
      grads_.push_back(Matrix<T>::Zero(params.value(i).rows(), params.value(i).cols()));
  }

  std::size_t size() const { return grads_.size(); }
  Matrix<T>& operator[](std::size_t i) { return grads_[i]; }
  const Matrix<T>& operator[](std::size_t i) const { return grads_[i]; }

  void zero() {
    for (auto& g : grads_) g.setZero();
  }
  void add(const Gradients& other) {
    for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += other.grads_[i];
  }
  void scale(T s) {
    for (auto& g : grads_) g *= s;
  }
  std::vector<T> flatten() const {
    std::vector<T> out;
    for (const auto& g : grads_) out.insert(out.end(), g.data(), g.data() + g.size());
    return out;
  }
  bool all_finite() const {
    for (const auto& g : grads_)
      if (!g.allFinite()) return false;
    return true;
  }

 private:
  std::vector<Matrix<T>> grads_;
};

/// Which (query, key) pairs may interact in attention.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(Index rows, Index cols, bool fill)
      : rows_(rows), cols_(cols), bits_(static_cast<std::size_t>(rows * cols), fill ? 1 : 0) {}

  static AttentionMask full(Index rows, Index cols) { return {rows, cols, true}; }
  static AttentionMask causal(Index n) {
    AttentionMask m(n, n, false);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j <= i; ++j) m.set(i, j, true);
    return m;
  }

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  bool allowed(Index i, Index j) const { return bits_[static_cast<std::size_t>(i * cols_ + j)] != 0; }
  void set(Index i, Index j, bool v) { bits_[static_cast<std::size_t>(i * cols_ + j)] = v ? 1 : 0; }

  friend bool operator==(const AttentionMask&, const AttentionMask&) = default;

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct Var {
  int id = -1;
};

template <class T>
Matrix<T> gelu_matrix(const Matrix<T>& x) {
  constexpr T c = T(0.7978845608028654);
  const auto a = x.array();
  return (T(0.5) * a * (T(1) + (c * (a + T(0.044715) * a.cube())).tanh())).matrix();
}

template <class T>
Matrix<T> gelu_derivative_matrix(const Matrix<T>& x) {
  constexpr T c = T(0.7978845608028654);
  const auto a = x.array();
  const Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> th = (c * (a + T(0.044715) * a.cube())).tanh();
  return (T(0.5) * (T(1) + th) + T(0.5) * a * (T(1) - th.square()) * (c * (T(1) + T(3 * 0.044715) * a.square())))
      .matrix();
}

template <class T>
T gelu_value(T x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x)));
}

template <class T>
T gelu_derivative(T x) {
  constexpr T c = T(0.7978845608028654);
  const T inner = c * (x + T(0.044715) * x * x * x);
  const T th = std::tanh(inner);
  const T dinner = c * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * dinner;
}

/// Row-wise softmax restricted to the allowed entries of `mask`; masked
/// entries are exactly zero and never touch the normalizer.
template <class T>
void masked_softmax_rows(Matrix<T>& scores, const AttentionMask& mask, Index row_offset = 0) {
  for (Index i = 0; i < scores.rows(); ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (Index j = 0; j < scores.cols(); ++j)
      if (mask.allowed(i + row_offset, j)) mx = std::max(mx, scores(i, j));
    T sum = 0;
    for (Index j = 0; j < scores.cols(); ++j) {
      if (mask.allowed(i + row_offset, j)) {
        scores(i, j) = std::exp(scores(i, j) - mx);
        sum += scores(i, j);
      } else {
        scores(i, j) = 0;
      }
    }
    if (sum > 0) scores.row(i) /= sum;
  }
}

template <class T>
void layer_norm_rows(const Matrix<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta, Matrix<T>& y,
                     Matrix<T>* xhat_out = nullptr, Matrix<T>* inv_std_out = nullptr, T eps = T(1e-5)) {
  const Index n = x.cols();
  y.resize(x.rows(), n);
  if (xhat_out) xhat_out->resize(x.rows(), n);
  if (inv_std_out) inv_std_out->resize(x.rows(), 1);
  for (Index i = 0; i < x.rows(); ++i) {
    const T mean = x.row(i).sum() / T(n);
    const T var = (x.row(i).array() - mean).square().sum() / T(n);
    const T inv_std = T(1) / std::sqrt(var + eps);
    for (Index j = 0; j < n; ++j) {
      const T xh = (x(i, j) - mean) * inv_std;
      if (xhat_out) (*xhat_out)(i, j) = xh;
      y(i, j) = xh * gamma(0, j) + beta(0, j);
    }
    if (inv_std_out) (*inv_std_out)(i, 0) = inv_std;
  }
}

template <class T>
class Graph {
 public:
  /// `grads == nullptr` builds an inference-only graph.
  explicit Graph(const ParameterSet<T>& params, Gradients<T>* grads = nullptr)
      : params_(&params), grads_(grads) {
    nodes_.reserve(256);
  }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return grads_ != nullptr; }

  Var param(std::size_t index) {
    Node n;
    n.ref = &params_->value(index);
    n.param = static_cast<int>(index);
    n.needs_grad = recording();
    return push(std::move(n));
  }

  Var constant(Matrix<T> value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
  }

  const Matrix<T>& value(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.ref ? *n.ref : n.value;
  }
  Index rows(Var v) const { return value(v).rows(); }
  Index cols(Var v) const { return value(v).cols(); }
  T scalar(Var v) const { return value(v)(0, 0); }
  std::size_t node_count() const { return nodes_.size(); }

  Var matmul(Var a, Var b) {
    check(cols(a) == rows(b), "matmul shape mismatch");
    Var out = make(value(a) * value(b), {a, b});
    if (tracks(out))
      node(out).back = [this, a, b, out] {
        const Matrix<T>& g = grad(out);
        if (tracks(a)) accumulate(a, g * value(b).transpose());
        if (tracks(b)) accumulate(b, value(a).transpose() * g);
      };
    return out;
  }

  /// a * b^T
  Var matmul_nt(Var a, Var b) {
    check(cols(a) == cols(b), "matmul_nt shape mismatch");
    Var out = make(value(a) * value(b).transpose(), {a, b});
    if (tracks(out))
      node(out).back = [this, a, b, out] {
        const Matrix<T>& g = grad(out);
        if (tracks(a)) accumulate(a, g * value(b));
        if (tracks(b)) accumulate(b, g.transpose() * value(a));
      };
    return out;
  }

  Var add(Var a, Var b) {
    check(rows(a) == rows(b) && cols(a) == cols(b), "add shape mismatch");
    Var out = make(value(a) + value(b), {a, b});
    if (tracks(out))
      node(out).back = [this, a, b, out] {
        if (tracks(a)) accumulate(a, grad(out));
        if (tracks(b)) accumulate(b, grad(out));
      };
    return out;
  }

  /// Adds a 1 x n row to every row of `a`.
  Var add_row(Var a, Var row) {
    check(rows(row) == 1 && cols(row) == cols(a), "add_row shape mismatch");
    Matrix<T> v = value(a);
    v.rowwise() += value(row).row(0);
    Var out = make(std::move(v), {a, row});
    if (tracks(out))
      node(out).back = [this, a, row, out] {
        if (tracks(a)) accumulate(a, grad(out));
        if (tracks(row)) accumulate(row, grad(out).colwise().sum());
      };
    return out;
  }

  Var scale(Var a, T s) {
    Var out = make(value(a) * s, {a});
    if (tracks(out))
      node(out).back = [this, a, out, s] { accumulate(a, grad(out) * s); };
    return out;
  }

  Var gelu(Var a) {
    Var out = make(gelu_matrix(value(a)), {a});
    if (tracks(out))
      node(out).back = [this, a, out] { accumulate(a, grad(out).cwiseProduct(gelu_derivative_matrix(value(a)))); };
    return out;
  }

  Var layer_norm(Var x, Var gamma, Var beta) {
    check(rows(gamma) == 1 && cols(gamma) == cols(x) && cols(beta) == cols(x), "layer_norm shape mismatch");
    Matrix<T> y, xhat, inv_std;
    layer_norm_rows(value(x), value(gamma), value(beta), y, &xhat, &inv_std);
    Var out = make(std::move(y), {x, gamma, beta});
    if (tracks(out)) {
      node(out).back = [this, x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
        const Matrix<T>& g = grad(out);
        if (tracks(gamma)) accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
        if (tracks(beta)) accumulate(beta, g.colwise().sum());
        if (tracks(x)) {
          const Index n = xhat.cols();
          Matrix<T> dxhat = g.array().rowwise() * value(gamma).row(0).array();
          Matrix<T> dx(xhat.rows(), n);
          for (Index i = 0; i < xhat.rows(); ++i) {
            const T s1 = dxhat.row(i).sum();
            const T s2 = dxhat.row(i).dot(xhat.row(i));
            dx.row(i) = (inv_std(i, 0) / T(n)) *
                        (T(n) * dxhat.row(i).array() - s1 - xhat.row(i).array() * s2).matrix();
          }
          accumulate(x, dx);
        }
      };
    }
    return out;
  }

  /// Multi-head scaled dot-product attention over already-projected q, k, v.
  Var attention(Var q, Var k, Var v, int heads, const AttentionMask& mask) {
    const Index nq = rows(q), nk = rows(k), d = cols(q);
    check(cols(k) == d && cols(v) == d && rows(v) == nk, "attention shape mismatch");
    check(mask.rows() == nq && mask.cols() == nk, "attention mask shape mismatch");
    check(heads > 0 && d % heads == 0, "width not divisible by heads");
    const Index dh = d / heads;
    const T sc = T(1) / std::sqrt(T(dh));
    std::vector<Matrix<T>> probs(static_cast<std::size_t>(heads));
    Matrix<T> outv(nq, d);
    for (int h = 0; h < heads; ++h) {
      const auto qh = value(q).middleCols(h * dh, dh);
      const auto kh = value(k).middleCols(h * dh, dh);
      Matrix<T> p = (qh * kh.transpose()) * sc;
      masked_softmax_rows(p, mask);
      outv.middleCols(h * dh, dh).noalias() = p * value(v).middleCols(h * dh, dh);
      probs[static_cast<std::size_t>(h)] = std::move(p);
    }
    Var out = make(std::move(outv), {q, k, v});
    if (tracks(out)) {
      node(out).back = [this, q, k, v, out, heads, dh, sc, probs = std::move(probs)] {
        const Matrix<T>& g = grad(out);
        Matrix<T> dq = Matrix<T>::Zero(rows(q), cols(q));
        Matrix<T> dk = Matrix<T>::Zero(rows(k), cols(k));
        Matrix<T> dv = Matrix<T>::Zero(rows(v), cols(v));
        for (int h = 0; h < heads; ++h) {
          const Matrix<T>& p = probs[static_cast<std::size_t>(h)];
          const auto gh = g.middleCols(h * dh, dh);
          dv.middleCols(h * dh, dh).noalias() += p.transpose() * gh;
          Matrix<T> dp = gh * value(v).middleCols(h * dh, dh).transpose();
          const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = dp.cwiseProduct(p).rowwise().sum();
          Matrix<T> ds = p.cwiseProduct((dp.colwise() - rowdot));
          ds *= sc;
          dq.middleCols(h * dh, dh).noalias() += ds * value(k).middleCols(h * dh, dh);
          dk.middleCols(h * dh, dh).noalias() += ds.transpose() * value(q).middleCols(h * dh, dh);
        }
        if (tracks(q)) accumulate(q, dq);
        if (tracks(k)) accumulate(k, dk);
        if (tracks(v)) accumulate(v, dv);
      };
    }
    return out;
  }

  /// Rows of `table` selected by `ids`.
  Var gather_rows(Var table, std::span<const int> ids) {
    const Matrix<T>& tv = value(table);
    Matrix<T> outv(static_cast<Index>(ids.size()), tv.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      check(ids[i] >= 0 && ids[i] < tv.rows(), "gather index out of range");
      outv.row(static_cast<Index>(i)) = tv.row(ids[i]);
    }
    Var out = make(std::move(outv), {table});
    if (tracks(out)) {
      std::vector<int> idx(ids.begin(), ids.end());
      node(out).back = [this, table, out, idx = std::move(idx)] {
        const Matrix<T>& g = grad(out);
        Node& tn = node(table);
        if (tn.param >= 0) {
          Matrix<T>& dst = (*grads_)[static_cast<std::size_t>(tn.param)];
          for (std::size_t i = 0; i < idx.size(); ++i) dst.row(idx[i]) += g.row(static_cast<Index>(i));
        } else {
          Matrix<T> d = Matrix<T>::Zero(rows(table), cols(table));
          for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Index>(i));
          accumulate(table, d);
        }
      };
    }
    return out;
  }

  Var concat_rows(std::span<const Var> parts) {
    check(!parts.empty(), "concat_rows of nothing");
    Index total = 0;
    const Index c = cols(parts[0]);
    for (Var p : parts) {
      check(cols(p) == c, "concat_rows column mismatch");
      total += rows(p);
    }
    Matrix<T> outv(total, c);
    Index off = 0;
    for (Var p : parts) {
      outv.middleRows(off, rows(p)) = value(p);
      off += rows(p);
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    Var out = make(std::move(outv), ps);
    if (tracks(out))
      node(out).back = [this, out, ps = std::move(ps)] {
        Index o = 0;
        for (Var p : ps) {
          if (tracks(p)) accumulate(p, grad(out).middleRows(o, rows(p)));
          o += rows(p);
        }
      };
    return out;
  }

  Var concat_cols(Var a, Var b) {
    check(rows(a) == rows(b), "concat_cols row mismatch");
    Matrix<T> outv(rows(a), cols(a) + cols(b));
    outv.leftCols(cols(a)) = value(a);
    outv.rightCols(cols(b)) = value(b);
    Var out = make(std::move(outv), {a, b});
    if (tracks(out))
      node(out).back = [this, a, b, out] {
        if (tracks(a)) accumulate(a, grad(out).leftCols(cols(a)));
        if (tracks(b)) accumulate(b, grad(out).rightCols(cols(b)));
      };
    return out;
  }

  Var slice_rows(Var a, Index start, Index count) {
    check(start >= 0 && count >= 0 && start + count <= rows(a), "slice_rows out of range");
    Var out = make(value(a).middleRows(start, count), {a});
    if (tracks(out))
      node(out).back = [this, a, out, start, count] {
        Matrix<T> d = Matrix<T>::Zero(rows(a), cols(a));
        d.middleRows(start, count) = grad(out);
        accumulate(a, d);
      };
    return out;
  }

  /// Sum over rows with target >= 0 of -log softmax(row)[target]; returns 1x1.
  Var cross_entropy_sum(Var logits, std::span<const int> targets) {
    const Matrix<T>& lv = value(logits);
    check(static_cast<Index>(targets.size()) == lv.rows(), "cross_entropy target count mismatch");
    Matrix<T> probs = Matrix<T>::Zero(lv.rows(), lv.cols());
    T loss = 0;
    for (Index i = 0; i < lv.rows(); ++i) {
      const int t = targets[static_cast<std::size_t>(i)];
      if (t < 0) continue;
      check(t < lv.cols(), "cross_entropy target out of range");
      const T mx = lv.row(i).maxCoeff();
      probs.row(i) = (lv.row(i).array() - mx).exp().matrix();
      const T sum = probs.row(i).sum();
      probs.row(i) /= sum;
      loss += std::log(sum) + mx - lv(i, t);
    }
    Matrix<T> lossm(1, 1);
    lossm(0, 0) = loss;
    Var out = make(std::move(lossm), {logits});
    if (tracks(out)) {
      std::vector<int> tg(targets.begin(), targets.end());
      node(out).back = [this, logits, out, tg = std::move(tg), probs = std::move(probs)]() mutable {
        const T g = grad(out)(0, 0);
        for (std::size_t i = 0; i < tg.size(); ++i)
          if (tg[i] >= 0) probs(static_cast<Index>(i), tg[i]) -= T(1);
        accumulate(logits, probs * g);
      };
    }
    return out;
  }

  /// Sum of squared entries; returns 1x1.
  Var sum_squares(Var a) {
    Matrix<T> s(1, 1);
    s(0, 0) = value(a).squaredNorm();
    Var out = make(std::move(s), {a});
    if (tracks(out))
      node(out).back = [this, a, out] { accumulate(a, value(a) * (T(2) * grad(out)(0, 0))); };
    return out;
  }

  /// Seeds d(root)/d(root) = 1 and propagates to every parameter reachable from root.
  void backward(Var root) {
    if (!recording()) throw std::logic_error("backward on an inference graph");
    check(rows(root) == 1 && cols(root) == 1, "backward root must be scalar");
    Node& r = node(root);
    if (!r.needs_grad) return;
    if (r.param >= 0) {
      (*grads_)[static_cast<std::size_t>(r.param)](0, 0) += T(1);
      return;
    }
    r.grad = Matrix<T>::Ones(1, 1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.back && n.grad.size() > 0) n.back();
    }
  }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    const Matrix<T>* ref = nullptr;
    int param = -1;
    bool needs_grad = false;
    std::function<void()> back;
  };

  static void check(bool ok, const char* what) {
    if (!ok) throw DataError(what);
  }

  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  const Matrix<T>& grad(Var v) { return node(v).grad; }
  bool tracks(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  template <class M>
  Var make(M&& v, std::initializer_list<Var> inputs) {
    return make(std::forward<M>(v), std::span<const Var>(inputs.begin(), inputs.size()));
  }
  template <class M>
  Var make(M&& v, std::span<const Var> inputs) {
    Node n;
    n.value = std::forward<M>(v);
    if (recording())
      for (Var in : inputs) n.needs_grad = n.needs_grad || tracks(in);
    return push(std::move(n));
  }
  template <class M>
  Var make(M&& v, const std::vector<Var>& inputs) {
    return make(std::forward<M>(v), std::span<const Var>(inputs));
  }

  template <class D>
  void accumulate(Var v, const Eigen::MatrixBase<D>& g) {
    Node& n = node(v);
    if (!n.needs_grad) return;
    if (n.param >= 0) {
      (*grads_)[static_cast<std::size_t>(n.param)].noalias() += g;
      return;
    }
    if (n.grad.size() == 0)
      n.grad.noalias() = g;
    else
      n.grad.noalias() += g;
  }

  const ParameterSet<T>* params_;
  Gradients<T>* grads_;
  std::vector<Node> nodes_;
};

}  // namespace sgp
