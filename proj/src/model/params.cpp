#include "arvit/model/params.hpp"

#include <cmath>

#include "arvit/core/errors.hpp"

namespace arvit {

std::size_t ParameterStore::add(std::string name, Tensor value, bool trainable) {
  if (find(name)) throw ConfigError("duplicate parameter name: " + name);
  entries_.push_back(Entry{std::move(name), std::move(value), trainable});
  return entries_.size() - 1;
}

std::optional<std::size_t> ParameterStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.trainable ? e.value.numel() : 0;
  return n;
}

ForwardContext::ForwardContext(Tape& tape, ParameterStore& store, Mode mode, bool track_grads)
    : tape_(tape), store_(store), mode_(mode), track_grads_(track_grads),
      bound_(store.size()) {}

Var ForwardContext::param(std::size_t index) {
  auto& slot = bound_.at(index);
  if (!slot) {
    const auto& e = store_.entry(index);
    slot = tape_.leaf(e.value, track_grads_ && e.trainable);
  }
  return *slot;
}

void ForwardContext::bind(std::size_t index, Var v) { bound_.at(index) = v; }

std::vector<std::optional<Tensor>> ForwardContext::gradients(const Gradients& grads) const {
  std::vector<std::optional<Tensor>> out(bound_.size());
  for (std::size_t i = 0; i < bound_.size(); ++i) {
    if (!bound_[i]) continue;
    if (const Tensor* g = grads.find(*bound_[i])) out[i] = *g;
  }
  return out;
}

namespace {

Tensor normal_tensor(Shape shape, Rng& rng, Real stddev) {
  Tensor t(std::move(shape));
  for (Real& v : t.data()) v = rng.normal() * stddev;
  return t;
}

}  // namespace

Conv2dLayer Conv2dLayer::build(ParameterStore& store, Rng& rng, const std::string& name,
                               std::size_t in_channels, std::size_t out_channels,
                               std::size_t kernel, std::size_t stride, std::size_t pad) {
  const Real fan_in = static_cast<Real>(in_channels * kernel * kernel);
  Conv2dLayer layer;
  layer.weight = store.add(name + ".weight",
                           normal_tensor({out_channels, in_channels, kernel, kernel}, rng,
                                         std::sqrt(2.0 / fan_in)));
  layer.bias = store.add(name + ".bias", Tensor::zeros({out_channels}));
  layer.stride = stride;
  layer.pad = pad;
  return layer;
}

Var Conv2dLayer::forward(ForwardContext& ctx, Var x) const {
  return conv2d(x, ctx.param(weight), ctx.param(bias), stride, pad);
}

BatchNormLayer BatchNormLayer::build(ParameterStore& store, const std::string& name,
                                     std::size_t channels) {
  BatchNormLayer layer;
  layer.gamma = store.add(name + ".gamma", Tensor::ones({channels}));
  layer.beta = store.add(name + ".beta", Tensor::zeros({channels}));
  layer.running_mean = store.add(name + ".running_mean", Tensor::zeros({channels}), false);
  layer.running_var = store.add(name + ".running_var", Tensor::ones({channels}), false);
  return layer;
}

Var BatchNormLayer::forward(ForwardContext& ctx, Var x) const {
  if (!ctx.training()) {
    return batch_norm_eval(x, ctx.param(gamma), ctx.param(beta), ctx.store().value(running_mean),
                           ctx.store().value(running_var), eps);
  }
  BatchStats stats;
  Var out = batch_norm_train(x, ctx.param(gamma), ctx.param(beta), eps, &stats);
  const Shape& s = x.shape();
  const Real count = static_cast<Real>(s[0] * s[2] * s[3]);
  const Real unbias = count > 1 ? count / (count - 1) : 1.0;
  Tensor& rm = ctx.store().value(running_mean);
  Tensor& rv = ctx.store().value(running_var);
  for (std::size_t c = 0; c < rm.numel(); ++c) {
    rm[c] = (1.0 - momentum) * rm[c] + momentum * stats.mean[c];
    rv[c] = (1.0 - momentum) * rv[c] + momentum * stats.variance[c] * unbias;
  }
  return out;
}

LinearLayer LinearLayer::build(ParameterStore& store, Rng& rng, const std::string& name,
                               std::size_t in_features, std::size_t out_features, Real gain) {
  LinearLayer layer;
  layer.weight = store.add(name + ".weight",
                           normal_tensor({in_features, out_features}, rng,
                                         std::sqrt(gain / static_cast<Real>(in_features))));
  layer.bias = store.add(name + ".bias", Tensor::zeros({out_features}));
  return layer;
}

Var LinearLayer::forward(ForwardContext& ctx, Var x) const {
  return linear(x, ctx.param(weight), ctx.param(bias));
}

LayerNormLayer LayerNormLayer::build(ParameterStore& store, const std::string& name,
                                     std::size_t dim, Real eps) {
  LayerNormLayer layer;
  layer.gamma = store.add(name + ".gamma", Tensor::ones({dim}));
  layer.beta = store.add(name + ".beta", Tensor::zeros({dim}));
  layer.eps = eps;
  return layer;
}

Var LayerNormLayer::forward(ForwardContext& ctx, Var x) const {
  return layer_norm(x, ctx.param(gamma), ctx.param(beta), eps);
}

}  // namespace arvit
