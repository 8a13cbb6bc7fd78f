#include "arvit/model/vit.hpp"

#include <cmath>

#include "arvit/core/errors.hpp"
#include "arvit/core/json_fields.hpp"

namespace arvit {

namespace {

Tensor normal_tensor(Shape shape, Rng& rng, Real stddev) {
  Tensor t(std::move(shape));
  for (Real& v : t.data()) v = stddev * rng.normal();
  return t;
}

}  // namespace

ViTConfig ViTConfig::full() { return ViTConfig{}; }

ViTConfig ViTConfig::tiny() {
  ViTConfig c;
  c.input_height = 32;
  c.input_width = 32;
  c.patch_size = 8;
  c.embed_dim = 64;
  c.heads = 4;
  c.depth = 4;
  return c;
}

ViTConfig ViTConfig::preset(const std::string& name) {
  if (name == "vit-full" || name == "full") return full();
  if (name == "vit-tiny" || name == "tiny") return tiny();
  throw ConfigError("unknown vit preset '" + name + "' (expected vit-full or vit-tiny)");
}

void ViTConfig::validate() const {
  if (input_channels == 0 || input_height == 0 || input_width == 0) {
    throw ConfigError("vit input dimensions must be positive");
  }
  if (patch_size == 0) throw ConfigError("vit.patch_size must be positive");
  if (input_height % patch_size != 0 || input_width % patch_size != 0) {
    throw ConfigError("vit input " + std::to_string(input_height) + "x" +
                      std::to_string(input_width) + " is not divisible by patch size " +
                      std::to_string(patch_size));
  }
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("vit.embed_dim " + std::to_string(embed_dim) +
                      " must be a positive multiple of vit.heads " + std::to_string(heads));
  }
  if (depth == 0) throw ConfigError("vit.depth must be positive");
  if (mlp_ratio == 0) throw ConfigError("vit.mlp_ratio must be positive");
  if (!(norm_eps > 0.0)) throw ConfigError("vit.norm_eps must be positive");
}

nlohmann::json ViTConfig::to_json() const {
  return {
      {"input_channels", input_channels},
      {"input_height", input_height},
      {"input_width", input_width},
      {"patch_size", patch_size},
      {"embed_dim", embed_dim},
      {"heads", heads},
      {"depth", depth},
      {"mlp_ratio", mlp_ratio},
      {"readout", readout == Readout::kClassToken ? "class_token" : "mean_pool"},
      {"norm_eps", norm_eps},
  };
}

ViTConfig ViTConfig::from_json(const nlohmann::json& j, const std::string& path) {
  return from_json(j, path, ViTConfig{});
}

ViTConfig ViTConfig::from_json(const nlohmann::json& j, const std::string& path,
                               const ViTConfig& base) {
  JsonFields f(j, path);
  ViTConfig c = base;
  if (f.has("preset")) {
    const std::string name = f.required<std::string>("preset");
    try {
      c = preset(name);
    } catch (const ConfigError& e) {
      throw ConfigError(f.field_path("preset") + ": " + e.what());
    }
  }
  c.input_channels = f.get<std::size_t>("input_channels", c.input_channels);
  if (f.has("input_size")) {
    c.input_height = c.input_width = f.required<std::size_t>("input_size");
  }
  c.input_height = f.get<std::size_t>("input_height", c.input_height);
  c.input_width = f.get<std::size_t>("input_width", c.input_width);
  c.patch_size = f.get<std::size_t>("patch_size", c.patch_size);
  c.embed_dim = f.get<std::size_t>("embed_dim", c.embed_dim);
  c.heads = f.get<std::size_t>("heads", c.heads);
  c.depth = f.get<std::size_t>("depth", c.depth);
  c.mlp_ratio = f.get<std::size_t>("mlp_ratio", c.mlp_ratio);
  c.norm_eps = f.get<double>("norm_eps", c.norm_eps);
  const std::string readout = f.get<std::string>(
      "readout", c.readout == Readout::kClassToken ? "class_token" : "mean_pool");
  if (readout == "class_token") {
    c.readout = Readout::kClassToken;
  } else if (readout == "mean_pool") {
    c.readout = Readout::kMeanPool;
  } else {
    throw ConfigError(f.field_path("readout") + ": expected class_token or mean_pool");
  }
  f.finish();
  c.validate();
  return c;
}

Var patchify(Var image, std::size_t patch) {
  const Shape& s = image.shape();
  if (s.size() != 4) throw DimensionError("patchify expects [N,C,H,W], got " + shape_str(s));
  if (patch == 0 || s[2] % patch != 0 || s[3] % patch != 0) {
    throw ConfigError("image " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                      " is not divisible by patch size " + std::to_string(patch));
  }
  const std::size_t n = s[0], c = s[1], gh = s[2] / patch, gw = s[3] / patch;
  Var x = reshape(image, {n, c, gh, patch, gw, patch});
  x = permute(x, {0, 2, 4, 1, 3, 5});
  return reshape(x, {n, gh * gw, c * patch * patch});
}

Tensor patchify(const Tensor& image, std::size_t patch) {
  Tape tape;
  return patchify(tape.constant(image), patch).value();
}

Tensor unpatchify(const Tensor& patches, std::size_t channels, std::size_t height,
                  std::size_t width, std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ConfigError("unpatchify: size not divisible by patch size");
  }
  const std::size_t gh = height / patch, gw = width / patch;
  const Shape& s = patches.shape();
  if (s.size() != 3 || s[1] != gh * gw || s[2] != channels * patch * patch) {
    throw DimensionError("unpatchify: patches " + shape_str(s) + " do not match the image size");
  }
  Tape tape;
  Var x = reshape(tape.constant(patches), {s[0], gh, gw, channels, patch, patch});
  x = permute(x, {0, 3, 1, 4, 2, 5});
  return reshape(x, {s[0], channels, height, width}).value();
}

PatchEmbedding PatchEmbedding::build(ParameterStore& store, Rng& rng, const std::string& name,
                                     std::size_t patch_dim, std::size_t num_patches,
                                     std::size_t dim) {
  PatchEmbedding e;
  e.projection = LinearLayer::build(store, rng, name + ".proj", patch_dim, dim, 1.0);
  e.class_token = store.add(name + ".cls", normal_tensor({1, 1, dim}, rng, 0.02));
  e.positions = store.add(name + ".pos", normal_tensor({1, 1 + num_patches, dim}, rng, 0.02));
  return e;
}

Var PatchEmbedding::project(ForwardContext& ctx, Var patches) const {
  const Shape& s = patches.shape();
  const Shape& w = ctx.store().value(projection.weight).shape();
  if (s.size() != 3 || s[2] != w[0]) {
    throw DimensionError("patch embedding expects [N,Np," + std::to_string(w[0]) +
                         "] patches, got " + shape_str(s));
  }
  return projection.forward(ctx, patches);
}

Var PatchEmbedding::forward(ForwardContext& ctx, Var patches) const {
  Var e = project(ctx, patches);
  const Shape& s = e.shape();
  const Shape& pos = ctx.store().value(positions).shape();
  if (pos[1] != s[1] + 1) {
    throw DimensionError("position table holds " + std::to_string(pos[1] - 1) +
                         " patches, got " + std::to_string(s[1]));
  }
  Var cls = add(ctx.tape().constant(Tensor::zeros({s[0], 1, s[2]})), ctx.param(class_token));
  return add(concat({cls, e}, 1), ctx.param(positions));
}

MultiHeadSelfAttention MultiHeadSelfAttention::build(ParameterStore& store, Rng& rng,
                                                     const std::string& name, std::size_t dim,
                                                     std::size_t heads) {
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError(name + ": embedding dim " + std::to_string(dim) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
  MultiHeadSelfAttention m;
  m.dim_ = dim;
  m.heads_ = heads;
  m.q_ = LinearLayer::build(store, rng, name + ".q", dim, dim, 1.0);
  m.k_ = LinearLayer::build(store, rng, name + ".k", dim, dim, 1.0);
  m.v_ = LinearLayer::build(store, rng, name + ".v", dim, dim, 1.0);
  m.o_ = LinearLayer::build(store, rng, name + ".out", dim, dim, 1.0);
  return m;
}

MultiHeadSelfAttention::Output MultiHeadSelfAttention::forward(ForwardContext& ctx,
                                                               Var x) const {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[2] != dim_) {
    throw DimensionError("self-attention expects [N,T," + std::to_string(dim_) + "], got " +
                         shape_str(s));
  }
  const std::size_t n = s[0], t = s[1], dh = dim_ / heads_;
  auto split = [&](Var y) {
    y = permute(reshape(y, {n, t, heads_, dh}), {0, 2, 1, 3});
    return reshape(y, {n * heads_, t, dh});
  };
  Var q = split(q_.forward(ctx, x));
  Var k = split(k_.forward(ctx, x));
  Var v = split(v_.forward(ctx, x));
  Var scores = scale(bmm(q, k, true), 1.0 / std::sqrt(static_cast<Real>(dh)));
  Var attn = softmax_rows(scores);
  Var mixed = reshape(bmm(attn, v), {n, heads_, t, dh});
  mixed = reshape(permute(mixed, {0, 2, 1, 3}), {n, t, dim_});
  return {o_.forward(ctx, mixed), reshape(attn, {n, heads_, t, t})};
}

TransformerBlock TransformerBlock::build(ParameterStore& store, Rng& rng,
                                         const std::string& name, std::size_t dim,
                                         std::size_t heads, std::size_t mlp_ratio, Real eps) {
  TransformerBlock b;
  b.norm1_ = LayerNormLayer::build(store, name + ".norm1", dim, eps);
  b.attention_ = MultiHeadSelfAttention::build(store, rng, name + ".attn", dim, heads);
  b.norm2_ = LayerNormLayer::build(store, name + ".norm2", dim, eps);
  b.fc1_ = LinearLayer::build(store, rng, name + ".fc1", dim, dim * mlp_ratio);
  b.fc2_ = LinearLayer::build(store, rng, name + ".fc2", dim * mlp_ratio, dim, 1.0);
  return b;
}

TransformerBlock::Output TransformerBlock::forward(ForwardContext& ctx, Var x) const {
  auto a = attention_.forward(ctx, norm1_.forward(ctx, x));
  Var h = add(x, a.out);
  Var ffn = fc2_.forward(ctx, gelu(fc1_.forward(ctx, norm2_.forward(ctx, h))));
  return {add(h, ffn), a.attention};
}

ViTBranch ViTBranch::build(const ViTConfig& config, ParameterStore& store, Rng& rng,
                           const std::string& prefix) {
  config.validate();
  ViTBranch b;
  b.config_ = config;
  b.embedding_ = PatchEmbedding::build(store, rng, prefix + ".embed", config.patch_dim(),
                                       config.num_patches(), config.embed_dim);
  for (std::size_t i = 0; i < config.depth; ++i) {
    b.blocks_.push_back(TransformerBlock::build(store, rng,
                                                prefix + ".block" + std::to_string(i + 1),
                                                config.embed_dim, config.heads,
                                                config.mlp_ratio, config.norm_eps));
  }
  b.final_norm_ = LayerNormLayer::build(store, prefix + ".norm", config.embed_dim,
                                        config.norm_eps);
  return b;
}

ViTBranch::Output ViTBranch::forward(ForwardContext& ctx, Var images) const {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != config_.input_channels || s[2] != config_.input_height ||
      s[3] != config_.input_width) {
    throw DimensionError("vit branch expects [N," + std::to_string(config_.input_channels) + "," +
                         std::to_string(config_.input_height) + "," +
                         std::to_string(config_.input_width) + "] images, got " +
                         shape_str(s));
  }
  Output out;
  Var x = embedding_.forward(ctx, patchify(images, config_.patch_size));
  for (const TransformerBlock& block : blocks_) {
    auto o = block.forward(ctx, x);
    x = o.out;
    out.attention.push_back(o.attention);
  }
  x = final_norm_.forward(ctx, x);
  out.tokens = x;
  const std::size_t n = s[0], t = x.shape()[1], d = config_.embed_dim;
  if (config_.readout == Readout::kClassToken) {
    out.features = reshape(slice(x, 1, 0, 1), {n, d});
  } else {
    Var patches = slice(x, 1, 1, t - 1);
    Var ones = ctx.tape().constant(Tensor::full({n, 1, t - 1}, 1.0 / static_cast<Real>(t - 1)));
    out.features = reshape(bmm(ones, patches), {n, d});
  }
  return out;
}

}  // namespace arvit
