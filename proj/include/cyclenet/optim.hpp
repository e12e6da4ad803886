#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cyclenet/autodiff.hpp"

namespace cyclenet {

enum class OptimizerKind { Sgd, RmsProp, Adam };

OptimizerKind optimizer_kind_from_string(const std::string& name);
const char* optimizer_kind_name(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double rms_rho = 0.9;
  double rms_eps = 1e-7;
};

// Per-parameter moment buffers plus the step counter. step() consumes the
// gradients currently held in each Param and advances t by exactly one.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::vector<Param*> params);

  void step();

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long long t() const { return t_; }
  void set_t(long long t) { t_ = t; }
  const OptimizerConfig& config() const { return cfg_; }

  // moment buffers for checkpointing, named `m.<param>` / `v.<param>`
  std::vector<std::pair<std::string, Tensor*>> state_buffers();

 private:
  OptimizerConfig cfg_;
  std::vector<Param*> params_;
  std::vector<Tensor> m_, v_;
  long long t_ = 0;
};

// Learning rate after processing a history of per-epoch evaluation errors:
// divide by `factor` each time the best error fails to improve by more than
// min_delta for `patience` consecutive epochs; the window resets after a
// decay, so each plateau triggers at most one.
double plateau_lr(double base_lr, const std::vector<double>& history, int patience,
                  double min_delta, double factor = 10.0);

}  // namespace cyclenet
