#pragma once

#include <cmath>
#include <vector>

#include "sgp/errors.hpp"
#include "sgp/parallel.hpp"
#include "sgp/tensor.hpp"

namespace sgp {

/// Sums per-item losses and their gradients over `n` items. Items are split
/// into kGradientShards contiguous shards, each with its own buffer, and the
/// shards are reduced in index order, so the result is bitwise independent
/// of the worker count. `loss(g, i)` builds item i's scalar loss on g.
namespace detail {

template <class T>
bool same_shape(const Gradients<T>& g, const ParameterSet<T>& params) {
  if (g.size() != params.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (g[i].rows() != params.value(i).rows() || g[i].cols() != params.value(i).cols()) return false;
  return true;
}

template <class T>
Gradients<T>& scratch(const ParameterSet<T>& params, std::size_t slot) {
  thread_local std::vector<Gradients<T>> pool;
  if (pool.size() <= slot) pool.resize(slot + 1);
  if (!same_shape(pool[slot], params)) pool[slot] = Gradients<T>(params);
  else pool[slot].zero();
  return pool[slot];
}

}  // namespace detail

template <class T, class LossFn>
double accumulate_batch(const ParameterSet<T>& params, Gradients<T>& grads, int n, LossFn&& loss) {
  const int shards = std::min(kGradientShards, std::max(n, 1));
  std::vector<double> sums(static_cast<std::size_t>(shards), 0.0);
  auto run_shard = [&](int s, Gradients<T>& part) {
    const int lo = n * s / shards, hi = n * (s + 1) / shards;
    for (int i = lo; i < hi; ++i) {
      Graph<T> g(params, &part);
      Var l = loss(g, i);
      sums[static_cast<std::size_t>(s)] += static_cast<double>(g.scalar(l));
      g.backward(l);
    }
  };
  if (thread_count() <= 1) {
    for (int s = 0; s < shards; ++s) {
      Gradients<T>& part = detail::scratch(params, 0);
      run_shard(s, part);
      grads.add(part);
    }
  } else {
    std::vector<Gradients<T>> parts;
    parts.reserve(static_cast<std::size_t>(shards));
    for (int s = 0; s < shards; ++s) parts.emplace_back(params);
    parallel_for(shards, [&](int s) { run_shard(s, parts[static_cast<std::size_t>(s)]); });
    for (int s = 0; s < shards; ++s) grads.add(parts[static_cast<std::size_t>(s)]);
  }
  double total = 0.0;
  for (int s = 0; s < shards; ++s) total += sums[static_cast<std::size_t>(s)];
  if (!std::isfinite(total)) throw DivergenceError("non-finite training loss");
  return total;
}

}  // namespace sgp
