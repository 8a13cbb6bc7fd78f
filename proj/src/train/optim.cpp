#include "arvit/train/optim.hpp"

#include <cmath>

#include "arvit/core/errors.hpp"
#include "arvit/core/json_fields.hpp"

namespace arvit {

void AdamConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("adam: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam: beta1 must lie in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam: beta2 must lie in [0,1)");
  if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
}

nlohmann::json AdamConfig::to_json() const {
  return {{"lr", lr}, {"beta1", beta1}, {"beta2", beta2}, {"eps", eps}};
}

AdamConfig AdamConfig::from_json(const nlohmann::json& j, const std::string& path) {
  JsonFields f(j, path);
  AdamConfig c;
  c.lr = f.get<Real>("lr", c.lr);
  c.beta1 = f.get<Real>("beta1", c.beta1);
  c.beta2 = f.get<Real>("beta2", c.beta2);
  c.eps = f.get<Real>("eps", c.eps);
  f.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return c;
}

Adam::Adam(const ParameterStore& store, AdamConfig config) : config_(config) {
  config_.validate();
  m_.resize(store.size());
  v_.resize(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!store.entry(i).trainable) continue;
    m_[i] = Tensor::zeros(store.value(i).shape());
    v_[i] = Tensor::zeros(store.value(i).shape());
  }
}

void Adam::step(ParameterStore& store, const std::vector<std::optional<Tensor>>& grads) {
  if (store.size() != m_.size() || grads.size() > store.size()) {
    throw ContractError("adam: optimizer built for " + std::to_string(m_.size()) +
                        " entries, store has " + std::to_string(store.size()) + ", " +
                        std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i]) continue;
    if (!store.entry(i).trainable) {
      throw ContractError("adam: gradient supplied for buffer " + store.entry(i).name);
    }
    if (grads[i]->shape() != store.value(i).shape() || m_[i].shape() != store.value(i).shape()) {
      throw ContractError("adam: shape mismatch for " + store.entry(i).name);
    }
  }
  ++t_;
  const Real b1 = config_.beta1, b2 = config_.beta2;
  const Real c1 = 1.0 - std::pow(b1, static_cast<Real>(t_));
  const Real c2 = 1.0 - std::pow(b2, static_cast<Real>(t_));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i]) continue;
    auto theta = store.value(i).data();
    auto g = grads[i]->data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const Real mhat = m[k] / c1;
      const Real vhat = v[k] / c2;
      theta[k] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

void Adam::restore(std::size_t t, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) {
    throw ContractError("adam: restored state has the wrong number of entries");
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].shape() != m_[i].shape() || v[i].shape() != v_[i].shape()) {
      throw ContractError("adam: restored moment " + std::to_string(i) + " has the wrong shape");
    }
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

bool EarlyStopMonitor::update(std::size_t epoch, Real loss) {
  if (loss < best_) {
    best_ = loss;
    best_epoch_ = epoch;
    since_ = 0;
    return true;
  }
  ++since_;
  return false;
}

}  // namespace arvit
