#include "arvit/model/aresnet.hpp"

#include <algorithm>

#include "arvit/core/errors.hpp"
#include "arvit/core/json_fields.hpp"

namespace arvit {

namespace {

std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < kernel) return 0;
  return (in + 2 * pad - kernel) / stride + 1;
}

std::string stage_path(const std::string& path, std::size_t stage) {
  return path + "[" + std::to_string(stage) + "]";
}

}  // namespace

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::kNone: return "none";
    case AttentionKind::kRoiMask: return "roi_mask";
    case AttentionKind::kChannel: return "channel";
  }
  return "none";
}

AttentionKind parse_attention_kind(std::string_view text, std::size_t stage) {
  if (text == "none") return AttentionKind::kNone;
  if (text == "roi_mask" || text == "RA") return AttentionKind::kRoiMask;
  if (text == "channel" || text == "CA") return AttentionKind::kChannel;
  throw ConfigError("attention layout stage " + std::to_string(stage + 1) + ": unknown kind '" +
                    std::string(text) + "' (expected none, roi_mask or channel)");
}

AttentionLayout attention_preset(std::string_view name) {
  using K = AttentionKind;
  if (name == "network1") return {K::kNone, K::kNone, K::kNone, K::kNone};
  if (name == "network2") return {K::kRoiMask, K::kRoiMask, K::kNone, K::kNone};
  if (name == "network3") return {K::kNone, K::kNone, K::kRoiMask, K::kRoiMask};
  if (name == "network4") return {K::kRoiMask, K::kRoiMask, K::kRoiMask, K::kRoiMask};
  if (name == "network5") return {K::kRoiMask, K::kRoiMask, K::kChannel, K::kChannel};
  throw ConfigError("unknown attention preset '" + std::string(name) + "'");
}

std::optional<std::string> attention_preset_name(const AttentionLayout& layout) {
  for (const char* name : {"network1", "network2", "network3", "network4", "network5"}) {
    if (attention_preset(name) == layout) return std::string(name);
  }
  return std::nullopt;
}

bool uses_roi_mask(const AttentionLayout& layout) {
  return std::find(layout.begin(), layout.end(), AttentionKind::kRoiMask) != layout.end();
}

AResNetConfig AResNetConfig::full(const AttentionLayout& layout) {
  AResNetConfig c;
  c.layout = layout;
  return c;
}

AResNetConfig AResNetConfig::tiny(const AttentionLayout& layout) {
  AResNetConfig c;
  c.input_size = 32;
  c.stem_channels = 8;
  c.stem_kernel = 3;
  c.stem_stride = 1;
  c.stem_pool = false;
  c.widths = {8, 16, 16, 32};
  c.blocks_per_stage = 1;
  c.ca_reduction = 4;
  c.layout = layout;
  return c;
}

std::size_t AResNetConfig::stem_resolution() const {
  std::size_t s = conv_out(input_size, stem_kernel, stem_stride, stem_kernel / 2);
  if (stem_pool) s = conv_out(s, 3, 2, 1);
  return s;
}

std::array<std::size_t, 4> AResNetConfig::stage_resolutions() const {
  std::array<std::size_t, 4> out{};
  std::size_t s = stem_resolution();
  for (std::size_t i = 0; i < 4; ++i) {
    s = conv_out(s, 3, strides[i], 1);
    out[i] = s;
  }
  return out;
}

void AResNetConfig::validate() const {
  if (input_channels == 0) throw ConfigError("cnn.input_channels must be positive");
  if (stem_channels == 0) throw ConfigError("cnn.stem_channels must be positive");
  if (stem_kernel == 0 || stem_stride == 0) {
    throw ConfigError("cnn.stem_kernel and cnn.stem_stride must be positive");
  }
  if (blocks_per_stage == 0) throw ConfigError("cnn.blocks_per_stage must be positive");
  for (std::size_t i = 0; i < 4; ++i) {
    if (widths[i] == 0) throw ConfigError(stage_path("cnn.widths", i) + " must be positive");
    if (i > 0 && widths[i] < widths[i - 1]) {
      throw ConfigError(stage_path("cnn.widths", i) + " must not be smaller than the previous stage");
    }
    if (strides[i] == 0) throw ConfigError(stage_path("cnn.strides", i) + " must be positive");
    if (layout[i] == AttentionKind::kChannel &&
        (ca_reduction == 0 || widths[i] % ca_reduction != 0)) {
      throw ConfigError("cnn.ca_reduction " + std::to_string(ca_reduction) +
                        " does not divide stage " + std::to_string(i + 1) + " width " +
                        std::to_string(widths[i]));
    }
  }
  if (stem_resolution() == 0 || stage_resolutions()[3] == 0) {
    throw ConfigError("cnn.input_size " + std::to_string(input_size) +
                      " is too small for the configured strides");
  }
}

nlohmann::json AResNetConfig::to_json() const {
  nlohmann::json layout_json = nlohmann::json::array();
  for (AttentionKind k : layout) layout_json.push_back(to_string(k));
  return {
      {"input_channels", input_channels},
      {"input_size", input_size},
      {"stem_channels", stem_channels},
      {"stem_kernel", stem_kernel},
      {"stem_stride", stem_stride},
      {"stem_pool", stem_pool},
      {"widths", widths},
      {"strides", strides},
      {"blocks_per_stage", blocks_per_stage},
      {"layout", layout_json},
      {"ca_reduction", ca_reduction},
      {"ca_combine", ca_combine == PoolCombine::kSum ? "sum" : "concat"},
      {"use_norm", use_norm},
  };
}

namespace {

std::array<std::size_t, 4> read_four(JsonFields& f, const char* key,
                                     const std::array<std::size_t, 4>& fallback) {
  if (!f.has(key)) return fallback;
  const nlohmann::json& v = f.raw(key);
  const std::string path = f.field_path(key);
  if (!v.is_array() || v.size() != 4) throw ConfigError(path + ": expected an array of 4 integers");
  std::array<std::size_t, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!v[i].is_number_integer() || v[i].get<long long>() < 0) {
      throw ConfigError(stage_path(path, i) + ": expected a non-negative integer");
    }
    out[i] = v[i].get<std::size_t>();
  }
  return out;
}

}  // namespace

AResNetConfig AResNetConfig::from_json(const nlohmann::json& j, const std::string& path) {
  return from_json(j, path, AResNetConfig{});
}

AResNetConfig AResNetConfig::from_json(const nlohmann::json& j, const std::string& path,
                                       const AResNetConfig& base) {
  JsonFields f(j, path);
  AResNetConfig c = base;
  if (f.has("preset")) {
    const std::string preset = f.required<std::string>("preset");
    if (preset == "full") {
      c = full(c.layout);
    } else if (preset == "tiny") {
      c = tiny(c.layout);
    } else {
      throw ConfigError(f.field_path("preset") + ": unknown preset '" + preset +
                        "' (expected full or tiny)");
    }
  }
  c.input_channels = f.get<std::size_t>("input_channels", c.input_channels);
  c.input_size = f.get<std::size_t>("input_size", c.input_size);
  c.stem_channels = f.get<std::size_t>("stem_channels", c.stem_channels);
  c.stem_kernel = f.get<std::size_t>("stem_kernel", c.stem_kernel);
  c.stem_stride = f.get<std::size_t>("stem_stride", c.stem_stride);
  c.stem_pool = f.get<bool>("stem_pool", c.stem_pool);
  c.widths = read_four(f, "widths", c.widths);
  c.strides = read_four(f, "strides", c.strides);
  c.blocks_per_stage = f.get<std::size_t>("blocks_per_stage", c.blocks_per_stage);
  c.ca_reduction = f.get<std::size_t>("ca_reduction", c.ca_reduction);
  c.use_norm = f.get<bool>("use_norm", c.use_norm);
  const std::string combine = f.get<std::string>("ca_combine", "sum");
  if (combine == "sum") {
    c.ca_combine = PoolCombine::kSum;
  } else if (combine == "concat") {
    c.ca_combine = PoolCombine::kConcat;
  } else {
    throw ConfigError(f.field_path("ca_combine") + ": expected sum or concat");
  }
  if (f.has("layout")) {
    const nlohmann::json& v = f.raw("layout");
    const std::string lpath = f.field_path("layout");
    if (v.is_string()) {
      try {
        c.layout = attention_preset(v.get<std::string>());
      } catch (const ConfigError& e) {
        throw ConfigError(lpath + ": " + e.what());
      }
    } else if (v.is_array() && v.size() == 4) {
      for (std::size_t i = 0; i < 4; ++i) {
        if (!v[i].is_string()) throw ConfigError(stage_path(lpath, i) + ": expected a string");
        try {
          c.layout[i] = parse_attention_kind(v[i].get<std::string>(), i);
        } catch (const ConfigError& e) {
          throw ConfigError(stage_path(lpath, i) + ": " + e.what());
        }
      }
    } else {
      throw ConfigError(lpath + ": expected a preset name or an array of 4 kinds");
    }
  }
  f.finish();
  c.validate();
  return c;
}

AResNetBranch AResNetBranch::build(const AResNetConfig& config, ParameterStore& store, Rng& rng,
                                   const std::string& prefix) {
  config.validate();
  AResNetBranch b;
  b.config_ = config;
  b.stem_ = Conv2dLayer::build(store, rng, prefix + ".stem", config.input_channels,
                               config.stem_channels, config.stem_kernel, config.stem_stride,
                               config.stem_kernel / 2);
  if (config.use_norm) b.stem_norm_ = BatchNormLayer::build(store, prefix + ".stem_bn", config.stem_channels);
  std::size_t channels = config.stem_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<ResidualBlock> blocks;
    for (std::size_t k = 0; k < config.blocks_per_stage; ++k) {
      ResidualBlockConfig bc;
      bc.in_channels = channels;
      bc.out_channels = config.widths[s];
      bc.stride = k == 0 ? config.strides[s] : 1;
      bc.use_norm = config.use_norm;
      blocks.push_back(ResidualBlock::build(
          store, rng, prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(k + 1),
          bc));
      channels = config.widths[s];
    }
    b.stages_.push_back(std::move(blocks));
    if (config.layout[s] == AttentionKind::kChannel) {
      ChannelAttentionConfig cc;
      cc.channels = config.widths[s];
      cc.reduction = config.ca_reduction;
      cc.combine = config.ca_combine;
      b.attention_[s] = ChannelAttention::build(
          store, rng, prefix + ".stage" + std::to_string(s + 1) + ".ca", cc);
    }
  }
  return b;
}

AResNetBranch::Output AResNetBranch::forward(ForwardContext& ctx, Var images,
                                             std::span<const RoiMask> masks) const {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != config_.input_channels) {
    throw DimensionError("cnn branch expects [N," + std::to_string(config_.input_channels) +
                         ",H,W] images, got " + shape_str(s));
  }
  if (s[2] != config_.input_size || s[3] != config_.input_size) {
    throw DimensionError("cnn branch configured for " + std::to_string(config_.input_size) + "x" +
                         std::to_string(config_.input_size) + " input, got " +
                         std::to_string(s[2]) + "x" + std::to_string(s[3]));
  }
  if (uses_roi_mask(config_.layout) && masks.size() != s[0]) {
    throw InputError("roi_mask attention needs one mask per sample: got " +
                     std::to_string(masks.size()) + " masks for " + std::to_string(s[0]) +
                     " images");
  }

  Var h = stem_.forward(ctx, images);
  if (stem_norm_) h = stem_norm_->forward(ctx, h);
  h = relu(h);
  if (config_.stem_pool) h = max_pool2d(h, 3, 2, 1);

  Output out{Var{}, {}};
  for (std::size_t st = 0; st < 4; ++st) {
    for (const ResidualBlock& block : stages_[st]) h = block.forward(ctx, h);
    if (config_.layout[st] == AttentionKind::kRoiMask) h = apply_masks(h, masks);
    if (attention_[st]) h = attention_[st]->forward(ctx, h).gated;
    out.stages[st] = h;
  }
  out.features = global_avg_pool(h);
  return out;
}

}  // namespace arvit
