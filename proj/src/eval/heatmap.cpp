#include "arvit/eval/heatmap.hpp"

#include <algorithm>
#include <cmath>

#include "arvit/core/errors.hpp"

namespace arvit {

HeatmapMethod parse_heatmap_method(const std::string& name) {
  if (name == "grad-cam") return HeatmapMethod::kGradCam;
  if (name == "attention-rollout") return HeatmapMethod::kAttentionRollout;
  throw ConfigError("unknown heatmap method '" + name + "' (expected grad-cam or attention-rollout)");
}

std::string to_string(HeatmapMethod method) {
  return method == HeatmapMethod::kGradCam ? "grad-cam" : "attention-rollout";
}

bool normalize_unit(Raster& r) {
  if (r.values.empty()) return true;
  const auto [lo, hi] = std::minmax_element(r.values.begin(), r.values.end());
  const Real min = *lo, span = *hi - *lo;
  if (!(span > 0.0) || !std::isfinite(span)) {
    std::fill(r.values.begin(), r.values.end(), 0.0);
    return true;
  }
  for (Real& v : r.values) v = (v - min) / span;
  return false;
}

namespace {

void check_single(const Tensor& image, const Model& model) {
  const std::size_t s = model.config().input_size();
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != model.config().input_channels() ||
      image.dim(2) != s || image.dim(3) != s) {
    throw DimensionError("heatmap: expected one [1," + std::to_string(model.config().input_channels()) +
                         "," + std::to_string(s) + "," + std::to_string(s) + "] image");
  }
}

Heatmap finish(Raster raw, std::size_t size, HeatmapMethod method, const std::string& id) {
  Heatmap h;
  h.method = method;
  h.sample_id = id;
  h.values = resize_bilinear(raw, size, size);
  h.constant = normalize_unit(h.values);
  return h;
}

}  // namespace

Heatmap grad_cam(Model& model, const Tensor& image, const RoiMask& mask, const std::string& sample_id) {
  if (!model.cnn()) throw ConfigError("grad-cam needs a model with a CNN branch");
  check_single(image, model);
  Tape tape;
  ForwardContext ctx(tape, model.params(), Mode::kEval, true);
  const Model::Output out = model.forward(ctx, tape.constant(image), std::span<const RoiMask>(&mask, 1));
  const Var features = out.cnn->stages[3];
  const Tensor grad = tape.backward(sum(out.logit)).get_or_zero(features);
  const Tensor& a = features.value();
  const std::size_t c = a.dim(1), h = a.dim(2), w = a.dim(3), hw = h * w;

  Raster cam(h, w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    Real weight = 0.0;
    for (std::size_t i = 0; i < hw; ++i) weight += grad[ch * hw + i];
    weight /= static_cast<Real>(hw);
    for (std::size_t i = 0; i < hw; ++i) cam.values[i] += weight * a[ch * hw + i];
  }
  for (Real& v : cam.values) v = std::max(v, 0.0);
  return finish(std::move(cam), image.dim(2), HeatmapMethod::kGradCam, sample_id);
}

Heatmap attention_rollout(Model& model, const Tensor& image, const RoiMask& mask,
                          const std::string& sample_id) {
  if (!model.vit()) throw ConfigError("attention-rollout needs a model with a ViT branch");
  check_single(image, model);
  Tape tape;
  ForwardContext ctx(tape, model.params(), Mode::kEval);
  const Model::Output out = model.forward(ctx, tape.constant(image), std::span<const RoiMask>(&mask, 1));
  const ViTConfig& cfg = model.vit()->config();
  const std::size_t t = cfg.num_patches() + 1;

  std::vector<Real> rollout(t * t, 0.0);
  for (std::size_t i = 0; i < t; ++i) rollout[i * t + i] = 1.0;
  std::vector<Real> layer(t * t), next(t * t);
  for (const Var& att : out.vit->attention) {
    const Tensor& a = att.value();  // [1,h,T,T]
    const std::size_t heads = a.dim(1);
    std::fill(layer.begin(), layer.end(), 0.0);
    for (std::size_t hd = 0; hd < heads; ++hd)
      for (std::size_t k = 0; k < t * t; ++k) layer[k] += a[hd * t * t + k] / static_cast<Real>(heads);
    for (std::size_t i = 0; i < t; ++i) {
      Real row = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        layer[i * t + j] = 0.5 * layer[i * t + j] + (i == j ? 0.5 : 0.0);
        row += layer[i * t + j];
      }
      for (std::size_t j = 0; j < t; ++j) layer[i * t + j] /= row;
    }
    // rollout = layer * rollout
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t k = 0; k < t; ++k) {
        const Real lik = layer[i * t + k];
        for (std::size_t j = 0; j < t; ++j) next[i * t + j] += lik * rollout[k * t + j];
      }
    rollout.swap(next);
  }

  const std::size_t gh = cfg.input_height / cfg.patch_size, gw = cfg.input_width / cfg.patch_size;
  Raster grid(gh, gw);
  for (std::size_t p = 0; p < gh * gw; ++p) {
    if (cfg.readout == Readout::kClassToken) {
      grid.values[p] = rollout[p + 1];
    } else {
      for (std::size_t i = 1; i < t; ++i) grid.values[p] += rollout[i * t + p + 1] / static_cast<Real>(t - 1);
    }
  }
  return finish(std::move(grid), image.dim(2), HeatmapMethod::kAttentionRollout, sample_id);
}

Heatmap compute_heatmap(Model& model, const Sample& sample, const Normalization& norm,
                        HeatmapMethod method) {
  const Sample resized = resize_sample(sample, model.config().input_size());
  const std::vector<Sample> one{resized};
  const Batch batch = make_batch(one, norm);
  return method == HeatmapMethod::kGradCam
             ? grad_cam(model, batch.images, batch.masks[0], sample.id)
             : attention_rollout(model, batch.images, batch.masks[0], sample.id);
}

void write_heatmap_png(const std::filesystem::path& path, const Heatmap& h, std::size_t height,
                       std::size_t width) {
  Raster out = h.values.height == height && h.values.width == width
                   ? h.values
                   : resize_bilinear(h.values, height, width);
  for (Real& v : out.values) v = std::clamp(v, 0.0, 1.0);
  write_png_gray(path, out);
}

void write_overlay_png(const std::filesystem::path& path, const Heatmap& h, const Raster& source) {
  const Raster heat = h.values.height == source.height && h.values.width == source.width
                          ? h.values
                          : resize_bilinear(h.values, source.height, source.width);
  auto jet = [](Real x, Real centre) { return std::clamp(1.5 - std::abs(4.0 * x - centre), 0.0, 1.0); };
  std::vector<std::uint8_t> rgb(source.values.size() * 3);
  for (std::size_t i = 0; i < source.values.size(); ++i) {
    const Real x = std::clamp(heat.values[i], 0.0, 1.0);
    const Real g = std::clamp(source.values[i], 0.0, 1.0);
    rgb[3 * i + 0] = to_byte(0.5 * g + 0.5 * jet(x, 3.0));
    rgb[3 * i + 1] = to_byte(0.5 * g + 0.5 * jet(x, 2.0));
    rgb[3 * i + 2] = to_byte(0.5 * g + 0.5 * jet(x, 1.0));
  }
  write_png_rgb(path, source.height, source.width, rgb);
}

}  // namespace arvit
