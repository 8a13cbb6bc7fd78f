#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "arvit/core/ops.hpp"
#include "arvit/core/rng.hpp"
#include "arvit/core/tape.hpp"

namespace arvit {

// Named tensors owned by a model: trainable weights plus non-trainable
// buffers (normalization running statistics). Order of insertion is the
// canonical order used by optimizers and checkpoints.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
  };

  std::size_t add(std::string name, Tensor value, bool trainable = true);

  std::size_t size() const { return entries_.size(); }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  Tensor& value(std::size_t i) { return entries_.at(i).value; }
  const Tensor& value(std::size_t i) const { return entries_.at(i).value; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::optional<std::size_t> find(std::string_view name) const;

  std::size_t trainable_count() const;

 private:
  std::vector<Entry> entries_;
};

enum class Mode { kTrain, kEval };

// Per-pass view of a model: binds stored parameters to tape leaves on first
// use and carries the train/eval switch.
class ForwardContext {
 public:
  ForwardContext(Tape& tape, ParameterStore& store, Mode mode, bool track_grads = false);

  Tape& tape() { return tape_; }
  ParameterStore& store() { return store_; }
  bool training() const { return mode_ == Mode::kTrain; }

  Var param(std::size_t index);

  // Binds a parameter to an existing tape value (gradient checks substitute
  // perturbed copies this way).
  void bind(std::size_t index, Var v);

  // Accumulated gradient per parameter index; nullopt for parameters not
  // bound in this pass or not reached by the loss.
  std::vector<std::optional<Tensor>> gradients(const Gradients& grads) const;

 private:
  Tape& tape_;
  ParameterStore& store_;
  Mode mode_;
  bool track_grads_;
  std::vector<std::optional<Var>> bound_;
};

// ---- layer primitives ------------------------------------------------------

struct Conv2dLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;

  // He-normal weights (fan-in scaling), zero bias.
  static Conv2dLayer build(ParameterStore& store, Rng& rng, const std::string& name,
                           std::size_t in_channels, std::size_t out_channels,
                           std::size_t kernel, std::size_t stride, std::size_t pad);
  Var forward(ForwardContext& ctx, Var x) const;
};

struct BatchNormLayer {
  std::size_t gamma = 0;
  std::size_t beta = 0;
  std::size_t running_mean = 0;
  std::size_t running_var = 0;
  Real eps = 1e-5;
  Real momentum = 0.1;

  static BatchNormLayer build(ParameterStore& store, const std::string& name,
                              std::size_t channels);
  // Training mode normalizes with batch statistics and folds them into the
  // running buffers; eval mode uses the buffers.
  Var forward(ForwardContext& ctx, Var x) const;
};

struct LinearLayer {
  std::size_t weight = 0;
  std::size_t bias = 0;

  // Normal weights with std sqrt(gain / fan_in), zero bias.
  static LinearLayer build(ParameterStore& store, Rng& rng, const std::string& name,
                           std::size_t in_features, std::size_t out_features,
                           Real gain = 2.0);
  Var forward(ForwardContext& ctx, Var x) const;
};

struct LayerNormLayer {
  std::size_t gamma = 0;
  std::size_t beta = 0;
  Real eps = 1e-6;

  static LayerNormLayer build(ParameterStore& store, const std::string& name, std::size_t dim,
                              Real eps = 1e-6);
  Var forward(ForwardContext& ctx, Var x) const;
};

}  // namespace arvit
