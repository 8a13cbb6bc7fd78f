#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "arvit/model/params.hpp"
#include "json.hpp"

namespace arvit {

struct AdamConfig {
  Real lr = 1e-4;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;

  void validate() const;
  nlohmann::json to_json() const;
  static AdamConfig from_json(const nlohmann::json& j, const std::string& path);
  bool operator==(const AdamConfig&) const = default;
};

// Adam with bias correction. Moments are kept per store entry; entries that
// are not trainable keep empty moments.
class Adam {
 public:
  Adam() = default;
  Adam(const ParameterStore& store, AdamConfig config);

  // t += 1, then for every trainable entry with a gradient:
  //   m = b1 m + (1-b1) g,  v = b2 v + (1-b2) g^2
  //   theta -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
  // Entries without a gradient are left alone. Shape mismatches throw
  // ContractError.
  void step(ParameterStore& store, const std::vector<std::optional<Tensor>>& grads);

  const AdamConfig& config() const { return config_; }
  std::size_t steps() const { return t_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

  // Restores a saved state; sizes must match the store the optimizer serves.
  void restore(std::size_t t, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

// Tracks validation loss per epoch. An epoch improves only when its loss is
// strictly below the best so far; training stops once `patience` epochs in a
// row fail to improve.
class EarlyStopMonitor {
 public:
  explicit EarlyStopMonitor(std::size_t patience) : patience_(patience) {}

  // Returns true when this epoch is the new best.
  bool update(std::size_t epoch, Real loss);
  bool should_stop() const { return since_ >= patience_; }

  std::size_t patience() const { return patience_; }
  Real best_loss() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }
  std::size_t epochs_since_improvement() const { return since_; }

 private:
  std::size_t patience_;
  Real best_ = std::numeric_limits<Real>::infinity();
  std::size_t best_epoch_ = 0;
  std::size_t since_ = 0;
};

}  // namespace arvit
