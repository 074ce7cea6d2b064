#pragma once

#include <cmath>
#include <vector>

#include "sgp/tensor.hpp"

namespace sgp {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW) when > 0
  double clip_norm = 1.0;     // global gradient-norm clip, <= 0 disables
};

template <class T>
class Adam {
 public:
  Adam(const ParameterSet<T>& params, AdamConfig cfg) : cfg_(cfg), m_(params), v_(params) {}

  void reset() {
    m_.zero();
    v_.zero();
    steps_ = 0;
  }

  long steps() const { return steps_; }
  const Gradients<T>& first_moment() const { return m_; }
  const Gradients<T>& second_moment() const { return v_; }
  Gradients<T>& first_moment() { return m_; }
  Gradients<T>& second_moment() { return v_; }
  void set_steps(long s) { steps_ = s; }

  void step(ParameterSet<T>& params, Gradients<T>& grads, double lr) {
    if (cfg_.clip_norm > 0) {
      double sq = 0;
      for (std::size_t i = 0; i < grads.size(); ++i) sq += static_cast<double>(grads[i].squaredNorm());
      const double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) grads.scale(static_cast<T>(cfg_.clip_norm / norm));
    }
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(cfg_.eps);
    const T decay = static_cast<T>(1.0 - lr * cfg_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params.value(i);
      m_[i] = b1 * m_[i] + (T(1) - b1) * grads[i];
      v_[i] = b2 * v_[i] + (T(1) - b2) * grads[i].cwiseAbs2();
      if (cfg_.weight_decay > 0) p *= decay;
      p.array() -= step_size * m_[i].array() / ((v_[i].array() * inv_bc2).sqrt() + eps);
    }
  }

 private:
  AdamConfig cfg_;
  Gradients<T> m_, v_;
  long steps_ = 0;
};

/// Learning rate multiplied by `factor` at each milestone (given as a fraction of total steps).
struct StaircaseSchedule {
  double base_lr = 1e-3;
  std::vector<double> milestones{14000.0 / 24000.0, 19000.0 / 24000.0};
  double factor = 0.1;

  double at(long step, long total_steps) const {
    double lr = base_lr;
    for (double m : milestones)
      if (static_cast<double>(step) >= m * static_cast<double>(total_steps)) lr *= factor;
    return lr;
  }
};

}  // namespace sgp
