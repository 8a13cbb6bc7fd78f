#pragma once

#include <filesystem>
#include <string>

#include "arvit/data/dataset.hpp"
#include "arvit/model/model.hpp"

namespace arvit {

enum class HeatmapMethod { kGradCam, kAttentionRollout };

HeatmapMethod parse_heatmap_method(const std::string& name);  // "grad-cam" | "attention-rollout"
std::string to_string(HeatmapMethod method);

struct Heatmap {
  Raster values;  // [0,1], min 0 and max 1 unless constant
  HeatmapMethod method = HeatmapMethod::kGradCam;
  std::string sample_id;
  bool constant = false;  // raw map had no spread; values are all zero
};

// Grad-CAM on the last CNN stage: channel weights are the spatial mean of
// d logit / d A, the map is relu(sum_c w_c A_c), upsampled bilinearly to the
// input size and min-max normalized. `image` is one standardized [1,C,S,S]
// input. Throws ConfigError for a model without a CNN branch.
Heatmap grad_cam(Model& model, const Tensor& image, const RoiMask& mask,
                 const std::string& sample_id = "");

// Attention rollout over the ViT blocks (heads averaged, identity added for
// the residual path, rows renormalized), read from the class token or the
// mean over patch tokens for mean-pool readout. Throws ConfigError for a
// model without a ViT branch.
Heatmap attention_rollout(Model& model, const Tensor& image, const RoiMask& mask,
                          const std::string& sample_id = "");

// Resizes the sample to the model input, standardizes it and dispatches.
Heatmap compute_heatmap(Model& model, const Sample& sample, const Normalization& norm,
                        HeatmapMethod method);

// Min-max normalization used by both methods; returns true for constant input.
bool normalize_unit(Raster& r);

// 8-bit grayscale PNG of the map, resized to height x width.
void write_heatmap_png(const std::filesystem::path& path, const Heatmap& h, std::size_t height,
                       std::size_t width);
// RGB overlay: the source image blended half and half with a jet-coloured
// map resized to the source dimensions.
void write_overlay_png(const std::filesystem::path& path, const Heatmap& h, const Raster& source);

}  // namespace arvit
