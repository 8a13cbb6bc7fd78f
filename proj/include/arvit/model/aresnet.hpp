#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "arvit/blocks/attention_blocks.hpp"
#include "arvit/model/params.hpp"
#include "json.hpp"

namespace arvit {

enum class AttentionKind { kNone, kRoiMask, kChannel };

// Attention applied after each of the four residual stages.
using AttentionLayout = std::array<AttentionKind, 4>;

std::string to_string(AttentionKind kind);
// Accepts "none", "roi_mask"/"RA", "channel"/"CA".
AttentionKind parse_attention_kind(std::string_view text, std::size_t stage);

// network1 = plain; network2 = RA on stages 1-2; network3 = RA on stages 3-4;
// network4 = RA everywhere; network5 = RA on 1-2 and CA on 3-4.
AttentionLayout attention_preset(std::string_view name);
std::optional<std::string> attention_preset_name(const AttentionLayout& layout);
bool uses_roi_mask(const AttentionLayout& layout);

struct AResNetConfig {
  std::size_t input_channels = 1;
  std::size_t input_size = 224;
  std::size_t stem_channels = 64;
  std::size_t stem_kernel = 7;
  std::size_t stem_stride = 2;
  bool stem_pool = true;
  std::array<std::size_t, 4> widths{64, 128, 256, 512};
  std::array<std::size_t, 4> strides{1, 2, 2, 2};
  std::size_t blocks_per_stage = 2;
  AttentionLayout layout = attention_preset("network5");
  std::size_t ca_reduction = 8;
  PoolCombine ca_combine = PoolCombine::kSum;
  bool use_norm = true;

  // ResNet18-shaped branch on 224x224 inputs.
  static AResNetConfig full(const AttentionLayout& layout);
  // Desk-scale branch: 3x3 stride-1 stem, no pooling, one block per stage.
  static AResNetConfig tiny(const AttentionLayout& layout);

  void validate() const;
  std::size_t feature_dim() const { return widths[3]; }
  std::size_t stem_resolution() const;
  std::array<std::size_t, 4> stage_resolutions() const;

  nlohmann::json to_json() const;
  // Fields absent from `j` keep the values of `base` (or of the named preset).
  static AResNetConfig from_json(const nlohmann::json& j, const std::string& path);
  static AResNetConfig from_json(const nlohmann::json& j, const std::string& path,
                                 const AResNetConfig& base);
};

// Local-feature branch: stem, four residual stages with per-stage attention,
// global average pooling.
class AResNetBranch {
 public:
  struct Output {
    Var features;                // [N, widths[3]]
    std::array<Var, 4> stages;   // stage outputs after attention
  };

  static AResNetBranch build(const AResNetConfig& config, ParameterStore& store, Rng& rng,
                             const std::string& prefix = "cnn");

  // Masks are required (one per sample) iff the layout uses ROI-mask attention.
  Output forward(ForwardContext& ctx, Var images, std::span<const RoiMask> masks) const;

  const AResNetConfig& config() const { return config_; }
  const std::vector<std::vector<ResidualBlock>>& stages() const { return stages_; }
  const std::array<std::optional<ChannelAttention>, 4>& channel_attention() const {
    return attention_;
  }

 private:
  AResNetConfig config_;
  Conv2dLayer stem_;
  std::optional<BatchNormLayer> stem_norm_;
  std::vector<std::vector<ResidualBlock>> stages_;
  std::array<std::optional<ChannelAttention>, 4> attention_;
};

}  // namespace arvit
