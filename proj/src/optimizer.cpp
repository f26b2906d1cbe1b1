#include "convgot/optimizer.hpp"

#include <cmath>

#include "convgot/errors.hpp"

namespace convgot {

double clip_grad_norm(ParamSet& params, double max_norm) {
  const double norm = params.grad_norm();
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, p] : params)
      for (double& g : p.grad.data()) g *= s;
  }
  return norm;
}

double scheduled_lr(const OptimizerConfig& cfg, std::size_t step) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  if (cfg.total_steps == 0 || cfg.total_steps <= cfg.warmup_steps) return cfg.lr;
  if (step >= cfg.total_steps) return 0.0;
  return cfg.lr * static_cast<double>(cfg.total_steps - step) /
         static_cast<double>(cfg.total_steps - cfg.warmup_steps);
}

double AdamW::step(ParamSet& params) {
  const double norm = clip_grad_norm(params, cfg_.clip_norm);
  const double lr = scheduled_lr(cfg_, step_);
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (auto& [name, p] : params) {
    auto it = moments_.find(name);
    if (it == moments_.end()) {
      it = moments_.emplace(name, Moments{Matrix(p.value.rows(), p.value.cols()),
                                          Matrix(p.value.rows(), p.value.cols())}).first;
    }
    Moments& mo = it->second;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0 - cfg_.beta1) * g;
      mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = mo.m[i] / bc1;
      const double vhat = mo.v[i] / bc2;
      p.value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.value[i]);
    }
  }
  return norm;
}

}  // namespace convgot
