#pragma once

// Continual-learning baselines: online EWC and MAS importance penalties, and
// an episodic memory of real samples with random or k-means selection.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sgp/errors.hpp"
#include "sgp/features.hpp"
#include "sgp/rng.hpp"
#include "sgp/tensor.hpp"
#include "sgp/univqa.hpp"
#include "sgp/world.hpp"

namespace sgp {

enum class StrategyKind { finetune, ewc, mas, real_rnd, real_kmeans, sgp };

inline std::string strategy_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::finetune: return "finetune";
    case StrategyKind::ewc: return "ewc";
    case StrategyKind::mas: return "mas";
    case StrategyKind::real_rnd: return "real_rnd";
    case StrategyKind::real_kmeans: return "real_kmeans";
    case StrategyKind::sgp: return "sgp";
  }
  return "?";
}

inline StrategyKind parse_strategy(std::string_view s) {
  for (auto k : {StrategyKind::finetune, StrategyKind::ewc, StrategyKind::mas, StrategyKind::real_rnd,
                 StrategyKind::real_kmeans, StrategyKind::sgp})
    if (strategy_name(k) == s) return k;
  throw ConfigError("unknown strategy '" + std::string(s) + "'");
}

struct StrategyConfig {
  StrategyKind kind = StrategyKind::finetune;
  double gamma = 0.0;                       // replay volume multiplier (sgp)
  double strength = 0.0;                    // penalty weight (ewc, mas)
  std::optional<std::size_t> budget_bytes;  // real_*; unset means the SGP-matched default
  std::optional<std::size_t> budget_samples;
  double annotation_fraction = 1.0;  // share of current data used to train the replay model (sgp)
  int importance_samples = 256;
  double ewc_decay = 0.9;

  bool is_real() const { return kind == StrategyKind::real_rnd || kind == StrategyKind::real_kmeans; }

  void validate() const {
    if (!(gamma >= 0)) throw ConfigError("gamma must be >= 0");
    if (gamma > 0 && kind != StrategyKind::sgp) throw ConfigError("gamma > 0 is only meaningful for sgp");
    if (!(strength >= 0)) throw ConfigError("strength must be >= 0");
    if (strength > 0 && kind != StrategyKind::ewc && kind != StrategyKind::mas)
      throw ConfigError("strength is only meaningful for ewc/mas");
    if ((budget_bytes || budget_samples) && !is_real()) throw ConfigError("memory budget is only meaningful for real_*");
    if (budget_bytes && *budget_bytes == 0) throw ConfigError("memory budget must be positive");
    if (budget_samples && *budget_samples == 0) throw ConfigError("memory budget must be positive");
    if (!(annotation_fraction > 0 && annotation_fraction <= 1)) throw ConfigError("annotation_fraction must be in (0, 1]");
    if (annotation_fraction < 1 && kind != StrategyKind::sgp) throw ConfigError("annotation_fraction is only meaningful for sgp");
    if (importance_samples < 1) throw ConfigError("importance_samples must be >= 1");
    if (!(ewc_decay >= 0 && ewc_decay <= 1)) throw ConfigError("ewc_decay must be in [0, 1]");
  }
};

/// Defaults per kind: sgp gamma 1.5, ewc/mas strength 100.
inline StrategyConfig strategy_from_json(const json& j) {
  StrategyConfig c;
  if (!j.contains("kind")) throw ConfigError("strategy block needs 'kind'");
  c.kind = parse_strategy(j.at("kind").get<std::string>());
  if (c.kind == StrategyKind::sgp) c.gamma = 1.5;
  if (c.kind == StrategyKind::ewc || c.kind == StrategyKind::mas) c.strength = 100.0;
  for (const auto& [k, v] : j.items()) {
    if (k == "kind") continue;
    else if (k == "gamma") c.gamma = v.get<double>();
    else if (k == "strength") c.strength = v.get<double>();
    else if (k == "budget_bytes") c.budget_bytes = v.get<std::size_t>();
    else if (k == "budget_samples") c.budget_samples = v.get<std::size_t>();
    else if (k == "annotation_fraction") c.annotation_fraction = v.get<double>();
    else if (k == "importance_samples") c.importance_samples = v.get<int>();
    else if (k == "ewc_decay") c.ewc_decay = v.get<double>();
    else throw ConfigError("unknown strategy key '" + k + "'");
  }
  c.validate();
  return c;
}

inline json to_json(const StrategyConfig& c) {
  json j{{"kind", strategy_name(c.kind)}};
  if (c.kind == StrategyKind::sgp) {
    j["gamma"] = c.gamma;
    j["annotation_fraction"] = c.annotation_fraction;
  }
  if (c.kind == StrategyKind::ewc || c.kind == StrategyKind::mas) {
    j["strength"] = c.strength;
    j["importance_samples"] = c.importance_samples;
  }
  if (c.kind == StrategyKind::ewc) j["ewc_decay"] = c.ewc_decay;
  if (c.budget_bytes) j["budget_bytes"] = *c.budget_bytes;
  if (c.budget_samples) j["budget_samples"] = *c.budget_samples;
  return j;
}

// ---------------------------------------------------------------------------
// Importance penalties

template <class T>
class ImportanceState {
 public:
  ImportanceState() = default;
  explicit ImportanceState(const ParameterSet<T>& params) : importance_(params) {
    for (std::size_t i = 0; i < params.size(); ++i) anchor_.push_back(params.value(i));
  }

  bool empty() const { return importance_.size() == 0; }
  const Gradients<T>& importance() const { return importance_; }
  const std::vector<Matrix<T>>& anchor() const { return anchor_; }

  /// importance <- decay * importance + fresh; anchor <- params.
  void merge(const Gradients<T>& fresh, const ParameterSet<T>& params, double decay) {
    check_shape(params);
    if (fresh.size() != importance_.size()) throw DataError("importance shape mismatch");
    importance_.scale(static_cast<T>(decay));
    importance_.add(fresh);
    for (std::size_t i = 0; i < params.size(); ++i) anchor_[i] = params.value(i);
  }

  /// strength * sum importance * (theta - anchor)^2; adds its gradient to grads.
  double penalty(const ParameterSet<T>& params, Gradients<T>* grads, double strength) const {
    check_shape(params);
    double value = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Matrix<T> diff = params.value(i) - anchor_[i];
      value += static_cast<double>((importance_[i].array() * diff.array().square()).sum());
      if (grads) (*grads)[i].array() += static_cast<T>(2 * strength) * importance_[i].array() * diff.array();
    }
    return strength * value;
  }

 private:
  void check_shape(const ParameterSet<T>& params) const {
    if (params.size() != anchor_.size()) throw DataError("importance state shape mismatch");
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params.value(i).rows() != anchor_[i].rows() || params.value(i).cols() != anchor_[i].cols())
        throw DataError("importance state shape mismatch at " + params.name(i));
  }

  Gradients<T> importance_;
  std::vector<Matrix<T>> anchor_;
};

/// First `n` items of a seeded permutation.
inline std::vector<std::size_t> importance_subset(std::size_t size, int n, std::uint64_t seed) {
  Rng rng(substream(seed, "importance"));
  auto idx = rng.permutation(size);
  idx.resize(std::min<std::size_t>(size, static_cast<std::size_t>(n)));
  return idx;
}

/// Mean squared per-sample gradient of the answer loss (diagonal Fisher).
template <class T>
Gradients<T> ewc_importance(const UniVqaModel<T>& model, const std::vector<VqaItem>& items,
                            const std::vector<std::size_t>& subset) {
  if (subset.empty()) throw DataError("importance needs data");
  Gradients<T> total(model.params), one(model.params);
  for (std::size_t idx : subset) {
    one.zero();
    Graph<T> g(model.params, &one);
    g.backward(model.loss(g, items[idx].input, items[idx].target));
    for (std::size_t i = 0; i < total.size(); ++i) total[i].array() += one[i].array().square();
  }
  total.scale(T(1) / T(subset.size()));
  return total;
}

/// Mean absolute gradient of the squared L2 norm of the step-0 scores.
template <class T>
Gradients<T> mas_importance(const UniVqaModel<T>& model, const std::vector<InputBundle>& inputs) {
  if (inputs.empty()) throw DataError("importance needs data");
  Gradients<T> total(model.params), one(model.params);
  for (const auto& b : inputs) {
    one.zero();
    Graph<T> g(model.params, &one);
    g.backward(model.output_sq_norm(g, b));
    for (std::size_t i = 0; i < total.size(); ++i) total[i].array() += one[i].array().abs();
  }
  total.scale(T(1) / T(inputs.size()));
  return total;
}

// ---------------------------------------------------------------------------
// Episodic memory

/// Lloyd's k-means with k-means++ seeding; returns, per cluster, the index of
/// the point nearest its centroid (ties to the lower index), sorted.
inline std::vector<std::size_t> kmeans_select(const Matrix<double>& points, std::size_t k, Rng& rng, int iterations = 50) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k == 0) return {};
  if (k >= n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  auto sq = [&](Index i, const Eigen::RowVectorXd& c) { return (points.row(i) - c).squaredNorm(); };
  std::vector<Eigen::RowVectorXd> centers;
  centers.push_back(points.row(static_cast<Index>(rng.below(n))));
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    for (std::size_t i = 0; i < n; ++i) dist[i] = std::min(dist[i], sq(static_cast<Index>(i), centers.back()));
    const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0) {
      pick = rng.weighted(std::span<const double>(dist));
    } else {
      pick = rng.below(n);
    }
    centers.push_back(points.row(static_cast<Index>(pick)));
  }
  std::vector<std::size_t> assign(n, 0);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = sq(static_cast<Index>(i), centers[c]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (it == 0 || assign[i] != best) changed = true;
      assign[i] = best;
    }
    for (std::size_t c = 0; c < k; ++c) {
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(points.cols());
      int cnt = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (assign[i] == c) {
          sum += points.row(static_cast<Index>(i));
          ++cnt;
        }
      if (cnt > 0) centers[c] = sum / cnt;
    }
    if (!changed) break;
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < k; ++c) {
    std::optional<std::size_t> best;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (assign[i] != c) continue;
      const double d = sq(static_cast<Index>(i), centers[c]);
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    if (best && std::find(out.begin(), out.end(), *best) == out.end()) out.push_back(*best);
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct MemoryEntry {
  Sample sample;
  std::string task_tag;
  std::size_t bytes = 0;
};

/// Real samples kept across tasks. The budget is shared evenly by the tasks
/// seen so far; a task over its share drops entries from the tail.
class EpisodicMemory {
 public:
  enum class Policy { rnd, kmeans };

  EpisodicMemory() = default;
  EpisodicMemory(Policy policy, std::optional<std::size_t> budget_bytes, std::optional<std::size_t> budget_samples)
      : policy_(policy), budget_bytes_(budget_bytes), budget_samples_(budget_samples) {
    if (!budget_bytes_ && !budget_samples_) throw ConfigError("episodic memory needs a budget");
  }

  Policy policy() const { return policy_; }
  const std::vector<MemoryEntry>& entries() const { return entries_; }
  std::size_t bytes() const {
    std::size_t b = 0;
    for (const auto& e : entries_) b += e.bytes;
    return b;
  }
  std::optional<std::size_t> budget_bytes() const { return budget_bytes_; }
  std::optional<std::size_t> budget_samples() const { return budget_samples_; }
  std::map<std::string, std::size_t> counts() const {
    std::map<std::string, std::size_t> c;
    for (const auto& e : entries_) ++c[e.task_tag];
    return c;
  }

  /// Adds a task. `embed(i)` gives sample i's representation (kmeans only).
  template <class Embed>
  void add_task(const std::string& tag, const std::vector<Sample>& samples, Rng& rng, Embed&& embed) {
    if (samples.empty()) throw DataError("cannot add an empty task to memory");
    if (std::find(tags_.begin(), tags_.end(), tag) != tags_.end()) throw DataError("task '" + tag + "' already in memory");
    std::size_t smallest = std::numeric_limits<std::size_t>::max();
    for (const auto& s : samples) smallest = std::min(smallest, sample_storage_bytes(s));
    if (budget_bytes_ && *budget_bytes_ < smallest) throw ConfigError("memory budget is smaller than one sample");
    tags_.push_back(tag);
    const std::size_t tasks = tags_.size();
    const std::optional<std::size_t> byte_quota =
        budget_bytes_ ? std::optional<std::size_t>(*budget_bytes_ / tasks) : std::nullopt;
    const std::optional<std::size_t> count_quota =
        budget_samples_ ? std::optional<std::size_t>(*budget_samples_ / tasks) : std::nullopt;
    // Shrink earlier tasks to the new share.
    std::vector<MemoryEntry> kept;
    for (const auto& t : tags_) {
      std::size_t b = 0, n = 0;
      for (const auto& e : entries_) {
        if (e.task_tag != t) continue;
        if ((byte_quota && b + e.bytes > *byte_quota) || (count_quota && n + 1 > *count_quota)) break;
        b += e.bytes;
        ++n;
        kept.push_back(e);
      }
    }
    entries_ = std::move(kept);
    std::vector<std::size_t> order;
    if (policy_ == Policy::rnd) {
      order = rng.permutation(samples.size());
    } else {
      std::size_t mean_bytes = 0;
      for (const auto& s : samples) mean_bytes += sample_storage_bytes(s);
      mean_bytes = std::max<std::size_t>(1, mean_bytes / samples.size());
      std::size_t k = samples.size();
      if (byte_quota) k = std::min(k, *byte_quota / mean_bytes);
      if (count_quota) k = std::min(k, *count_quota);
      k = std::max<std::size_t>(k, 1);
      if (k >= samples.size()) {
        order.resize(samples.size());
        std::iota(order.begin(), order.end(), 0);
      } else {
        Matrix<double> pts;
        for (std::size_t i = 0; i < samples.size(); ++i) {
          const Eigen::RowVectorXd e = embed(i);
          if (i == 0) pts.resize(static_cast<Index>(samples.size()), e.cols());
          pts.row(static_cast<Index>(i)) = e;
        }
        order = kmeans_select(pts, k, rng);
      }
    }
    std::size_t b = 0, n = 0;
    for (std::size_t i : order) {
      const std::size_t sz = sample_storage_bytes(samples[i]);
      if ((byte_quota && b + sz > *byte_quota) || (count_quota && n + 1 > *count_quota)) {
        if (byte_quota && !count_quota) continue;  // a smaller sample may still fit
        break;
      }
      b += sz;
      ++n;
      entries_.push_back({samples[i], tag, sz});
    }
  }

  void add_task(const std::string& tag, const std::vector<Sample>& samples, Rng& rng) {
    if (policy_ == Policy::kmeans) throw ConfigError("kmeans memory needs sample embeddings");
    add_task(tag, samples, rng, [](std::size_t) { return Eigen::RowVectorXd(); });
  }

 private:
  Policy policy_ = Policy::rnd;
  std::optional<std::size_t> budget_bytes_, budget_samples_;
  std::vector<std::string> tags_;
  std::vector<MemoryEntry> entries_;
};

}  // namespace sgp
