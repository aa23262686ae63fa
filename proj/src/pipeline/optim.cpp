#include "pipeline/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace tbsn {

void OptimConfig::validate() const {
  if (lr0 < 0 || eps <= 0 || weight_decay < 0)
    throw std::invalid_argument("optimizer: lr0/eps/weight_decay out of range");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw std::invalid_argument("optimizer: betas must lie in [0, 1)");
  if (lr_decay_every < 1 || lr_decay <= 0)
    throw std::invalid_argument("optimizer: bad lr decay settings");
}

double lr_at(const OptimConfig& cfg, int64_t iter) {
  return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(iter / cfg.lr_decay_every));
}

template <typename T>
AdamW<T>::AdamW(ParameterStore<T>& store, const OptimConfig& cfg)
    : store_(&store), cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : store.all()) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

template <typename T>
void AdamW<T>::step(int64_t iter) {
  const double lr = lr_at(cfg_, iter);
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto& params = store_->all();
  for (size_t i = 0; i < params.size(); ++i) {
    Param<T>& p = *params[i];
    const double wd = p.decay ? cfg_.weight_decay : 0.0;
    for (size_t j = 0; j < p.size(); ++j) {
      const double g = static_cast<double>(p.grad[j]);
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      double x = static_cast<double>(p.value[j]);
      x -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + wd * x);
      p.value[j] = static_cast<T>(x);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace tbsn
