#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "arvit/model/params.hpp"

namespace arvit {

// Lesion mask used as spatial attention. Values live in [0,1]; the source
// resolution is kept so downstream code knows what the mask was derived from.
class RoiMask {
 public:
  // Accepts [H,W] or [1,H,W]. Throws InputError for values outside [0,1].
  static RoiMask from_plane(const Tensor& plane);
  static RoiMask from_plane(const Tensor& plane, std::size_t source_height,
                            std::size_t source_width);
  static RoiMask ones(std::size_t height, std::size_t width);

  const Tensor& values() const { return values_; }  // [1,H,W]
  std::size_t height() const { return values_.dim(1); }
  std::size_t width() const { return values_.dim(2); }
  std::size_t source_height() const { return source_h_; }
  std::size_t source_width() const { return source_w_; }
  bool any_positive() const;

 private:
  Tensor values_;
  std::size_t source_h_ = 0;
  std::size_t source_w_ = 0;
};

// Dimension-matching operator for mask gating: area-averages the mask down to
// (height, width). The [1,H,W] result broadcasts over batch and `channels`.
Tensor match_mask(const RoiMask& mask, std::size_t height, std::size_t width,
                  std::size_t channels);

// One matched mask per sample, stacked to [N,1,H,W].
Tensor match_masks(std::span<const RoiMask> masks, std::size_t height, std::size_t width,
                   std::size_t channels);

struct ResidualBlockConfig {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  bool use_norm = true;
};

// Two 3x3 conv-norm stages with a skip connection:
//   relu(norm(conv2(relu(norm(conv1(x))))) + shortcut(x))
// The shortcut is identity when shapes match, else a strided 1x1 projection.
class ResidualBlock {
 public:
  static ResidualBlock build(ParameterStore& store, Rng& rng, const std::string& name,
                             const ResidualBlockConfig& config);

  Var forward(ForwardContext& ctx, Var x) const;

  const ResidualBlockConfig& config() const { return config_; }
  bool has_projection() const { return projection_.has_value(); }

  const Conv2dLayer& conv1() const { return conv1_; }
  const Conv2dLayer& conv2() const { return conv2_; }
  const std::optional<Conv2dLayer>& projection() const { return projection_; }

 private:
  Var normalize(ForwardContext& ctx, const std::optional<BatchNormLayer>& norm, Var x) const;

  ResidualBlockConfig config_;
  Conv2dLayer conv1_;
  Conv2dLayer conv2_;
  std::optional<BatchNormLayer> norm1_;
  std::optional<BatchNormLayer> norm2_;
  std::optional<Conv2dLayer> projection_;
  std::optional<BatchNormLayer> projection_norm_;
};

// ROI-mask attention block: (F(x) + x) gated by the mask resized to the block
// output. Gating follows the block's final activation.
Var ra_block(ForwardContext& ctx, Var x, std::span<const RoiMask> masks,
             const ResidualBlock& block);

// Multiplies x[N,C,H,W] by per-sample masks matched to its resolution.
Var apply_masks(Var x, std::span<const RoiMask> masks);

enum class PoolCombine { kSum, kConcat };

struct ChannelAttentionConfig {
  std::size_t channels = 0;
  std::size_t reduction = 8;
  PoolCombine combine = PoolCombine::kSum;
};

// Channel attention: pooled descriptors (average and max) go through a shared
// two-layer MLP; sigmoid weights rescale each channel.
class ChannelAttention {
 public:
  struct Output {
    Var weights;  // [N,C], each in (0,1)
    Var gated;    // [N,C,H,W]
  };

  // Throws ConfigError unless reduction >= 1 divides the channel count.
  static ChannelAttention build(ParameterStore& store, Rng& rng, const std::string& name,
                                const ChannelAttentionConfig& config);

  Output forward(ForwardContext& ctx, Var x) const;

  const ChannelAttentionConfig& config() const { return config_; }
  const LinearLayer& fc1() const { return fc1_; }
  const LinearLayer& fc2() const { return fc2_; }

 private:
  ChannelAttentionConfig config_;
  LinearLayer fc1_;
  LinearLayer fc2_;
};

}  // namespace arvit
