#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "sgp/rng.hpp"
#include "sgp/tensor.hpp"

namespace sgp {

template <class T>
Matrix<T> normal_matrix(Index rows, Index cols, double stddev, Rng& rng) {
  Matrix<T> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal() * stddev);
  return m;
}

struct Linear {
  std::size_t weight = 0;
  std::size_t bias = 0;
  bool has_bias = true;

  template <class T>
  static Linear create(ParameterSet<T>& ps, const std::string& name, Index in, Index out, Rng& rng,
                       bool with_bias = true, double stddev = 0.02) {
    Linear l;
    l.weight = ps.add(name + ".weight", normal_matrix<T>(in, out, stddev, rng));
    l.has_bias = with_bias;
    if (with_bias) l.bias = ps.add(name + ".bias", Matrix<T>::Zero(1, out));
    return l;
  }

  template <class T>
  Var operator()(Graph<T>& g, Var x) const {
    Var y = g.matmul(x, g.param(weight));
    return has_bias ? g.add_row(y, g.param(bias)) : y;
  }

  template <class T>
  Matrix<T> apply(const ParameterSet<T>& ps, const Matrix<T>& x) const {
    Matrix<T> y = x * ps.value(weight);
    if (has_bias) y.rowwise() += ps.value(bias).row(0);
    return y;
  }
};

struct LayerNorm {
  std::size_t gamma = 0;
  std::size_t beta = 0;

  template <class T>
  static LayerNorm create(ParameterSet<T>& ps, const std::string& name, Index width) {
    return {ps.add(name + ".gamma", Matrix<T>::Ones(1, width)), ps.add(name + ".beta", Matrix<T>::Zero(1, width))};
  }

  template <class T>
  Var operator()(Graph<T>& g, Var x) const {
    return g.layer_norm(x, g.param(gamma), g.param(beta));
  }

  template <class T>
  Matrix<T> apply(const ParameterSet<T>& ps, const Matrix<T>& x) const {
    Matrix<T> y;
    layer_norm_rows(x, ps.value(gamma), ps.value(beta), y);
    return y;
  }
};

/// Keys and values seen so far by one attention layer during incremental decoding.
template <class T>
struct KvCache {
  Matrix<T> keys;
  Matrix<T> values;
  Index size = 0;

  void append(const Matrix<T>& k, const Matrix<T>& v) {
    const Index need = size + k.rows();
    if (keys.rows() < need) {
      const Index cap = std::max<Index>(need, std::max<Index>(16, keys.rows() * 2));
      keys.conservativeResize(cap, k.cols());
      values.conservativeResize(cap, v.cols());
    }
    keys.middleRows(size, k.rows()) = k;
    values.middleRows(size, v.rows()) = v;
    size = need;
  }
};

/// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)).
struct TransformerBlock {
  LayerNorm ln_attn, ln_mlp;
  Linear query, key, value, proj, fc_in, fc_out;
  int heads = 1;

  template <class T>
  static TransformerBlock create(ParameterSet<T>& ps, const std::string& name, Index width, int heads,
                                 int mlp_ratio, Rng& rng) {
    TransformerBlock b;
    b.heads = heads;
    b.ln_attn = LayerNorm::create(ps, name + ".ln_attn", width);
    b.query = Linear::create(ps, name + ".query", width, width, rng);
    b.key = Linear::create(ps, name + ".key", width, width, rng);
    b.value = Linear::create(ps, name + ".value", width, width, rng);
    b.proj = Linear::create(ps, name + ".proj", width, width, rng);
    b.ln_mlp = LayerNorm::create(ps, name + ".ln_mlp", width);
    b.fc_in = Linear::create(ps, name + ".fc_in", width, width * mlp_ratio, rng);
    b.fc_out = Linear::create(ps, name + ".fc_out", width * mlp_ratio, width, rng);
    return b;
  }

  template <class T>
  Var operator()(Graph<T>& g, Var x, const AttentionMask& mask) const {
    Var h = ln_attn(g, x);
    Var att = g.attention(query(g, h), key(g, h), value(g, h), heads, mask);
    x = g.add(x, proj(g, att));
    Var m = fc_out(g, g.gelu(fc_in(g, ln_mlp(g, x))));
    return g.add(x, m);
  }

  /// Processes new rows against everything already in `cache`. With `causal`,
  /// new row r additionally sees only new rows <= r (< r without
  /// `include_self`); otherwise all new rows.
  template <class T>
  Matrix<T> step(const ParameterSet<T>& ps, const Matrix<T>& x, KvCache<T>& cache, bool causal,
                 bool include_self = true) const {
    const Matrix<T> h = ln_attn.apply(ps, x);
    const Matrix<T> q = query.apply(ps, h);
    const Index base = cache.size;
    cache.append(key.apply(ps, h), value.apply(ps, h));
    const Index n_new = x.rows(), d = x.cols(), dh = d / heads;
    const T sc = T(1) / std::sqrt(T(dh));
    Matrix<T> att(n_new, d);
    for (Index r = 0; r < n_new; ++r) {
      const Index visible = causal ? base + r + (include_self ? 1 : 0) : cache.size;
      for (int hd = 0; hd < heads; ++hd) {
        Eigen::Matrix<T, 1, Eigen::Dynamic> s =
            (q.row(r).segment(hd * dh, dh) * cache.keys.topRows(visible).middleCols(hd * dh, dh).transpose()) * sc;
        const T mx = s.maxCoeff();
        s = (s.array() - mx).exp().matrix();
        s /= s.sum();
        att.row(r).segment(hd * dh, dh) = s * cache.values.topRows(visible).middleCols(hd * dh, dh);
      }
    }
    Matrix<T> y = x + proj.apply(ps, att);
    Matrix<T> m = fc_in.apply(ps, ln_mlp.apply(ps, y));
    m = gelu_matrix<T>(m);
    return y + fc_out.apply(ps, m);
  }
};

}  // namespace sgp
