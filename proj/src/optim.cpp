#include "cyclenet/optim.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace cyclenet {

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "rmsprop") return OptimizerKind::RmsProp;
  if (name == "adam") return OptimizerKind::Adam;
  throw std::invalid_argument("optimizer must be sgd|rmsprop|adam, got `" + name + "`");
}

const char* optimizer_kind_name(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::RmsProp: return "rmsprop";
    case OptimizerKind::Adam: return "adam";
  }
  return "?";
}

Optimizer::Optimizer(OptimizerConfig cfg, std::vector<Param*> params)
    : cfg_(cfg), params_(std::move(params)) {
  for (Param* p : params_) {
    if (cfg_.kind == OptimizerKind::Adam) m_.emplace_back(p->value.shape());
    if (cfg_.kind != OptimizerKind::Sgd) v_.emplace_back(p->value.shape());
  }
}

void Optimizer::step() {
  ++t_;
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Param& p = *params_[pi];
    if (!p.grad.same_shape(p.value))
      throw std::invalid_argument("Optimizer::step: grad shape mismatch for " + p.name);
    double* w = p.value.data();
    const double* g = p.grad.data();
    const size_t n = p.value.size();
    switch (cfg_.kind) {
      case OptimizerKind::Sgd: {
        for (size_t i = 0; i < n; ++i) w[i] -= cfg_.lr * g[i];
        break;
      }
      case OptimizerKind::RmsProp: {
        double* v = v_[pi].data();
        for (size_t i = 0; i < n; ++i) {
          v[i] = cfg_.rms_rho * v[i] + (1.0 - cfg_.rms_rho) * g[i] * g[i];
          w[i] -= cfg_.lr * g[i] / std::sqrt(v[i] + cfg_.rms_eps);
        }
        break;
      }
      case OptimizerKind::Adam: {
        double* m = m_[pi].data();
        double* v = v_[pi].data();
        const double c1 = 1.0 - std::pow(cfg_.adam_beta1, double(t_));
        const double c2 = 1.0 - std::pow(cfg_.adam_beta2, double(t_));
        for (size_t i = 0; i < n; ++i) {
          m[i] = cfg_.adam_beta1 * m[i] + (1.0 - cfg_.adam_beta1) * g[i];
          v[i] = cfg_.adam_beta2 * v[i] + (1.0 - cfg_.adam_beta2) * g[i] * g[i];
          double m_hat = m[i] / c1;
          double v_hat = v[i] / c2;
          w[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.adam_eps);
        }
        break;
      }
    }
  }
}

std::vector<std::pair<std::string, Tensor*>> Optimizer::state_buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    if (cfg_.kind == OptimizerKind::Adam) out.push_back({"m." + params_[pi]->name, &m_[pi]});
    if (cfg_.kind != OptimizerKind::Sgd) out.push_back({"v." + params_[pi]->name, &v_[pi]});
  }
  return out;
}

double plateau_lr(double base_lr, const std::vector<double>& history, int patience,
                  double min_delta, double factor) {
  if (patience <= 0) throw std::invalid_argument("plateau_lr: patience must be positive");
  if (factor <= 1.0) throw std::invalid_argument("plateau_lr: factor must exceed 1");
  double lr = base_lr;
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;
  for (double err : history) {
    if (err < best - min_delta) {
      best = err;
      stale = 0;
    } else {
      ++stale;
      if (stale >= patience) {
        lr /= factor;
        stale = 0;
      }
    }
  }
  return lr;
}

}  // namespace cyclenet
