#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "arvit/core/errors.hpp"
#include "arvit/data/dataset.hpp"
#include "arvit/model/model.hpp"
#include "arvit/train/optim.hpp"
#include "json.hpp"

namespace arvit {

struct TrainConfig {
  std::size_t max_epochs = 200;
  std::size_t batch_size = 4;
  std::size_t patience = 20;
  std::size_t eval_batch_size = 32;
  std::uint64_t shuffle_seed = 0;
  AdamConfig adam;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j, const std::string& path);
  static TrainConfig from_json(const nlohmann::json& j, const std::string& path,
                               const TrainConfig& base);
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  Real train_loss = 0.0;
  Real val_loss = 0.0;
  Real seconds = 0.0;  // wall clock since fit started
};

struct FitResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  Real best_val_loss = 0.0;
  std::string stop_reason;  // "early_stop", "max_epochs" or "callback"
};

// Loss or gradient became NaN/Inf. Carries the offending batch.
class DivergenceError : public NumericError {
 public:
  DivergenceError(std::size_t epoch, std::vector<std::string> batch_ids, Real loss);
  std::size_t epoch() const { return epoch_; }
  const std::vector<std::string>& batch_ids() const { return ids_; }
  Real loss() const { return loss_; }

 private:
  std::size_t epoch_;
  std::vector<std::string> ids_;
  Real loss_;
};

// Called after every epoch; returning false ends training (best parameters
// are still restored).
using EpochCallback = std::function<bool(const EpochRecord&)>;

// Each epoch: shuffle with Rng(shuffle_seed ^ epoch), run mini-batches (last
// partial batch kept) through forward, BCE, backward and an Adam step, then
// compute the validation loss. Stops on early stopping, max_epochs or the
// callback, and leaves the model holding the best-validation parameters.
FitResult fit(Model& model, Adam& optimizer, std::span<const Sample> train,
              std::span<const Sample> val, const Normalization& norm, const TrainConfig& config,
              const EpochCallback& on_epoch = {});

// Eval-mode mean BCE and predictions over a sample list, in batches.
Real evaluate_loss(Model& model, std::span<const Sample> samples, const Normalization& norm,
                   std::size_t batch_size = 32);
std::vector<Prediction> predict_samples(Model& model, std::span<const Sample> samples,
                                        const Normalization& norm, std::size_t batch_size = 32);

void write_training_log(std::ostream& out, const std::vector<EpochRecord>& log);

}  // namespace arvit
