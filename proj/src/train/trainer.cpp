#include "arvit/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "arvit/core/json_fields.hpp"
#include "arvit/core/rng.hpp"

namespace arvit {

void TrainConfig::validate() const {
  if (max_epochs == 0) throw ConfigError("train.max_epochs must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (eval_batch_size == 0) throw ConfigError("train.eval_batch_size must be positive");
  adam.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"max_epochs", max_epochs},       {"batch_size", batch_size},
          {"patience", patience},           {"eval_batch_size", eval_batch_size},
          {"shuffle_seed", shuffle_seed},   {"adam", adam.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const std::string& path) {
  return from_json(j, path, TrainConfig{});
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const std::string& path,
                                   const TrainConfig& base) {
  JsonFields f(j, path);
  TrainConfig c = base;
  c.max_epochs = f.get<std::size_t>("max_epochs", c.max_epochs);
  c.batch_size = f.get<std::size_t>("batch_size", c.batch_size);
  c.patience = f.get<std::size_t>("patience", c.patience);
  c.eval_batch_size = f.get<std::size_t>("eval_batch_size", c.eval_batch_size);
  c.shuffle_seed = f.get<std::uint64_t>("shuffle_seed", c.shuffle_seed);
  if (f.has("adam")) c.adam = AdamConfig::from_json(f.raw("adam"), f.field_path("adam"));
  f.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return c;
}

namespace {

std::string describe_divergence(std::size_t epoch, const std::vector<std::string>& ids, Real loss) {
  std::string s = "training diverged at epoch " + std::to_string(epoch) + " (loss " +
                  std::to_string(loss) + ") on batch [";
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? ", " : "") + ids[i];
  return s + "]";
}

std::vector<std::size_t> chunk(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return idx;
}

}  // namespace

DivergenceError::DivergenceError(std::size_t epoch, std::vector<std::string> batch_ids, Real loss)
    : NumericError(describe_divergence(epoch, batch_ids, loss)),
      epoch_(epoch),
      ids_(std::move(batch_ids)),
      loss_(loss) {}

std::vector<Prediction> predict_samples(Model& model, std::span<const Sample> samples,
                                        const Normalization& norm, std::size_t batch_size) {
  std::vector<Prediction> out;
  out.reserve(samples.size());
  for (std::size_t b = 0; b < samples.size(); b += batch_size) {
    const Batch batch = make_batch(samples, chunk(b, std::min(samples.size(), b + batch_size)), norm);
    for (const Prediction& p : model.predict(batch.images, batch.masks)) out.push_back(p);
  }
  return out;
}

Real evaluate_loss(Model& model, std::span<const Sample> samples, const Normalization& norm,
                   std::size_t batch_size) {
  if (samples.empty()) throw ContractError("evaluate_loss: no samples");
  Real total = 0.0;
  for (std::size_t b = 0; b < samples.size(); b += batch_size) {
    const Batch batch = make_batch(samples, chunk(b, std::min(samples.size(), b + batch_size)), norm);
    Tape tape;
    ForwardContext ctx(tape, model.params(), Mode::kEval);
    const Model::Output out = model.forward(ctx, tape.constant(batch.images), batch.masks);
    const Var loss = bce_loss(out.prob, batch.labels, model.config().clamp_eps);
    total += loss.value().item() * static_cast<Real>(batch.labels.size());
  }
  return total / static_cast<Real>(samples.size());
}

FitResult fit(Model& model, Adam& optimizer, std::span<const Sample> train,
              std::span<const Sample> val, const Normalization& norm, const TrainConfig& config,
              const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw ContractError("fit: empty training set");
  if (val.empty()) throw ContractError("fit: empty validation set");

  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  ParameterStore& store = model.params();
  EarlyStopMonitor monitor(config.patience);
  std::vector<Tensor> best;
  FitResult result;
  result.stop_reason = "max_epochs";

  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(config.shuffle_seed ^ epoch);
    rng.shuffle(order);

    Real loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::span<const std::size_t> idx(order.data() + b,
                                             std::min(config.batch_size, order.size() - b));
      const Batch batch = make_batch(train, idx, norm);
      Tape tape;
      ForwardContext ctx(tape, store, Mode::kTrain, true);
      Real lv = std::numeric_limits<Real>::quiet_NaN();
      std::vector<std::optional<Tensor>> grads;
      try {
        const Model::Output out = model.forward(ctx, tape.constant(batch.images), batch.masks);
        const Var loss = bce_loss(out.prob, batch.labels, model.config().clamp_eps);
        lv = loss.value().item();
        if (!std::isfinite(lv)) throw DivergenceError(epoch, batch.ids, lv);
        grads = ctx.gradients(tape.backward(loss));
      } catch (const DivergenceError&) {
        throw;
      } catch (const NumericError&) {
        throw DivergenceError(epoch, batch.ids, lv);
      }
      for (const auto& g : grads) {
        if (g && !g->all_finite()) throw DivergenceError(epoch, batch.ids, lv);
      }
      optimizer.step(store, grads);
      loss_sum += lv * static_cast<Real>(idx.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<Real>(train.size());
    try {
      rec.val_loss = evaluate_loss(model, val, norm, config.eval_batch_size);
    } catch (const NumericError&) {
      rec.val_loss = std::numeric_limits<Real>::quiet_NaN();
    }
    if (!std::isfinite(rec.val_loss)) throw DivergenceError(epoch, {"<validation>"}, rec.val_loss);
    rec.seconds = std::chrono::duration<Real>(Clock::now() - start).count();
    result.log.push_back(rec);

    if (monitor.update(epoch, rec.val_loss)) {
      best.clear();
      for (const auto& e : store.entries()) best.push_back(e.value);
    }
    if (monitor.should_stop()) {
      result.stop_reason = "early_stop";
      break;
    }
    if (on_epoch && !on_epoch(rec)) {
      result.stop_reason = "callback";
      break;
    }
  }

  for (std::size_t i = 0; i < best.size(); ++i) store.value(i) = best[i];
  result.best_epoch = monitor.best_epoch();
  result.best_val_loss = monitor.best_loss();
  return result;
}

void write_training_log(std::ostream& out, const std::vector<EpochRecord>& log) {
  out << "epoch,train_loss,val_loss,seconds\n";
  char line[128];
  for (const EpochRecord& r : log) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.3f\n", r.epoch, r.train_loss, r.val_loss,
                  r.seconds);
    out << line;
  }
}

}  // namespace arvit
