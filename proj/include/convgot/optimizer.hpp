#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "convgot/autodiff.hpp"

namespace convgot {

struct OptimizerConfig {
  double lr = 3e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;        // <= 0 disables clipping
  std::size_t warmup_steps = 1000;
  std::size_t total_steps = 0;   // 0: constant lr after warmup
};

// Rescales all gradients so their global L2 norm is at most max_norm. Returns the norm before clipping.
double clip_grad_norm(ParamSet& params, double max_norm);

// Linear warmup to the base rate, then linear decay to zero at total_steps.
double scheduled_lr(const OptimizerConfig& cfg, std::size_t step);

// AdamW with decoupled weight decay, global-norm clipping and the warmup/decay schedule.
class AdamW {
 public:
  explicit AdamW(OptimizerConfig cfg) : cfg_(cfg) {}

  // Applies one update from the gradients currently stored in params. Returns the pre-clip grad norm.
  double step(ParamSet& params);

  std::size_t steps_taken() const { return step_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  OptimizerConfig cfg_;
  std::size_t step_ = 0;
  std::map<std::string, Moments, std::less<>> moments_;
};

}  // namespace convgot
