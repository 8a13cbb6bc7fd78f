#include "arvit/blocks/attention_blocks.hpp"

#include <algorithm>

#include "arvit/core/errors.hpp"
#include "arvit/core/resample.hpp"

namespace arvit {

RoiMask RoiMask::from_plane(const Tensor& plane) {
  const std::size_t h = plane.rank() == 3 ? plane.dim(1) : plane.dim(0);
  const std::size_t w = plane.rank() == 3 ? plane.dim(2) : plane.dim(1);
  return from_plane(plane, h, w);
}

RoiMask RoiMask::from_plane(const Tensor& plane, std::size_t source_height,
                            std::size_t source_width) {
  RoiMask m;
  if (plane.rank() == 2) {
    m.values_ = plane.reshaped({1, plane.dim(0), plane.dim(1)});
  } else if (plane.rank() == 3 && plane.dim(0) == 1) {
    m.values_ = plane;
  } else {
    throw DimensionError("mask must be [H,W] or [1,H,W], got " + shape_str(plane.shape()));
  }
  for (Real v : m.values_.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("mask values must lie in [0,1]");
  }
  m.source_h_ = source_height;
  m.source_w_ = source_width;
  return m;
}

RoiMask RoiMask::ones(std::size_t height, std::size_t width) {
  return from_plane(Tensor::ones({1, height, width}));
}

bool RoiMask::any_positive() const {
  return std::any_of(values_.data().begin(), values_.data().end(),
                     [](Real v) { return v > 0.0; });
}

Tensor match_mask(const RoiMask& mask, std::size_t height, std::size_t width,
                  std::size_t channels) {
  if (height == 0 || width == 0 || channels == 0) {
    throw DimensionError("match_mask: target dimensions must be positive");
  }
  std::vector<Real> resized =
      resize_area(mask.values().data(), mask.height(), mask.width(), height, width);
  for (Real& v : resized) v = std::clamp(v, 0.0, 1.0);
  return Tensor({1, height, width}, std::move(resized));
}

Tensor match_masks(std::span<const RoiMask> masks, std::size_t height, std::size_t width,
                   std::size_t channels) {
  if (masks.empty()) throw InputError("no masks supplied");
  Tensor out({masks.size(), 1, height, width});
  const std::size_t plane = height * width;
  for (std::size_t n = 0; n < masks.size(); ++n) {
    Tensor m = match_mask(masks[n], height, width, channels);
    std::copy(m.data().begin(), m.data().end(), out.data().begin() + n * plane);
  }
  return out;
}

ResidualBlock ResidualBlock::build(ParameterStore& store, Rng& rng, const std::string& name,
                                   const ResidualBlockConfig& config) {
  if (config.in_channels == 0 || config.out_channels == 0 || config.stride == 0) {
    throw ConfigError(name + ": channels and stride must be positive");
  }
  ResidualBlock b;
  b.config_ = config;
  b.conv1_ = Conv2dLayer::build(store, rng, name + ".conv1", config.in_channels,
                                config.out_channels, 3, config.stride, 1);
  if (config.use_norm) b.norm1_ = BatchNormLayer::build(store, name + ".bn1", config.out_channels);
  b.conv2_ = Conv2dLayer::build(store, rng, name + ".conv2", config.out_channels,
                                config.out_channels, 3, 1, 1);
  if (config.use_norm) b.norm2_ = BatchNormLayer::build(store, name + ".bn2", config.out_channels);
  if (config.stride != 1 || config.in_channels != config.out_channels) {
    b.projection_ = Conv2dLayer::build(store, rng, name + ".proj", config.in_channels,
                                       config.out_channels, 1, config.stride, 0);
    if (config.use_norm) {
      b.projection_norm_ = BatchNormLayer::build(store, name + ".proj_bn", config.out_channels);
    }
  }
  return b;
}

Var ResidualBlock::normalize(ForwardContext& ctx, const std::optional<BatchNormLayer>& norm,
                             Var x) const {
  return norm ? norm->forward(ctx, x) : x;
}

Var ResidualBlock::forward(ForwardContext& ctx, Var x) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != config_.in_channels) {
    throw DimensionError("residual block expects [N," + std::to_string(config_.in_channels) +
                         ",H,W] input, got " + shape_str(s));
  }
  Var h = relu(normalize(ctx, norm1_, conv1_.forward(ctx, x)));
  h = normalize(ctx, norm2_, conv2_.forward(ctx, h));
  Var shortcut = projection_ ? normalize(ctx, projection_norm_, projection_->forward(ctx, x)) : x;
  return relu(add(h, shortcut));
}

Var apply_masks(Var x, std::span<const RoiMask> masks) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw DimensionError("mask gating expects [N,C,H,W], got " + shape_str(s));
  if (masks.size() != s[0]) {
    throw InputError("expected " + std::to_string(s[0]) + " masks, got " +
                     std::to_string(masks.size()));
  }
  Tensor matched = match_masks(masks, s[2], s[3], s[1]);
  return mul(x, x.tape->constant(std::move(matched)));
}

Var ra_block(ForwardContext& ctx, Var x, std::span<const RoiMask> masks,
             const ResidualBlock& block) {
  return apply_masks(block.forward(ctx, x), masks);
}

ChannelAttention ChannelAttention::build(ParameterStore& store, Rng& rng,
                                         const std::string& name,
                                         const ChannelAttentionConfig& config) {
  if (config.channels == 0) throw ConfigError(name + ": channel count must be positive");
  if (config.reduction == 0 || config.channels % config.reduction != 0) {
    throw ConfigError(name + ": reduction ratio " + std::to_string(config.reduction) +
                      " must be >= 1 and divide " + std::to_string(config.channels) +
                      " channels");
  }
  ChannelAttention ca;
  ca.config_ = config;
  const std::size_t in = config.combine == PoolCombine::kConcat ? 2 * config.channels
                                                                : config.channels;
  const std::size_t hidden = config.channels / config.reduction;
  ca.fc1_ = LinearLayer::build(store, rng, name + ".fc1", in, hidden);
  ca.fc2_ = LinearLayer::build(store, rng, name + ".fc2", hidden, config.channels, 1.0);
  return ca;
}

ChannelAttention::Output ChannelAttention::forward(ForwardContext& ctx, Var x) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != config_.channels) {
    throw DimensionError("channel attention expects [N," + std::to_string(config_.channels) +
                         ",H,W] input, got " + shape_str(s));
  }
  Var avg = global_avg_pool(x);
  Var mx = global_max_pool(x);
  Var descriptor = config_.combine == PoolCombine::kSum ? add(avg, mx) : concat({avg, mx}, 1);
  Var weights = sigmoid(fc2_.forward(ctx, relu(fc1_.forward(ctx, descriptor))));
  Var gated = mul(x, reshape(weights, {s[0], s[1], 1, 1}));
  return {weights, gated};
}

}  // namespace arvit
