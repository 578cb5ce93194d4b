#pragma once

#include <cmath>
#include <cstdint>

#include "mct/params.hpp"

namespace mct {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled: applied to the value, not the gradient
};

// One bias-corrected Adam update at step t (1-based) over a single tensor.
template <typename T>
void adam_update(Tensor<T>& value, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                 const AdamConfig& cfg, int64_t t) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (int64_t i = 0; i < value.numel(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    double upd = cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    upd += cfg.lr * cfg.weight_decay * static_cast<double>(value[i]);
    value[i] = static_cast<T>(static_cast<double>(value[i]) - upd);
  }
}

template <typename T>
void adam_step(ParamStore<T>& params, const AdamConfig& cfg, int64_t t) {
  for (size_t i = 0; i < params.param_count(); ++i) {
    auto& p = params.param(i);
    adam_update(p.var->value, p.var->grad, p.adam_m, p.adam_v, cfg, t);
  }
}

// Stateful wrapper that owns the step counter.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(ParamStore<T>& params, double lr_override = -1.0) {
    AdamConfig cfg = cfg_;
    if (lr_override >= 0.0) cfg.lr = lr_override;
    ++t_;
    adam_step(params, cfg, t_);
  }

  int64_t steps_taken() const { return t_; }
  void set_steps_taken(int64_t t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
};

// Half-cosine decay from base_lr to ~0 across total steps.
inline double cosine_lr(double base_lr, int64_t step, int64_t total_steps) {
  if (total_steps <= 1) return base_lr;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace mct
