#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "arvit/model/aresnet.hpp"
#include "arvit/model/vit.hpp"
#include "json.hpp"

namespace arvit {

enum class Scale { kFull, kTiny };

Scale parse_scale(const std::string& name);
std::string to_string(Scale scale);

// Architecture variants plus the CNN-only attention layouts.
//   resnet18     CNN (network1), no ViT
//   vit          ViT only
//   aresnet      CNN (network5), no ViT
//   resnet-vit   CNN (network1) + ViT
//   aresnet-vit  CNN (network5) + ViT
//   network1..5  CNN only, with that attention layout
const std::vector<std::string>& known_variants();

struct ModelConfig {
  std::string variant = "aresnet-vit";
  std::optional<AResNetConfig> cnn;
  std::optional<ViTConfig> vit;
  std::size_t head_hidden = 256;
  Real threshold = 0.5;
  Real clamp_eps = 1e-7;

  static ModelConfig for_variant(const std::string& variant, Scale scale);

  // Throws ConfigError for a missing branch, mismatched input sizes, zero
  // hidden width or a threshold outside (0,1).
  void validate() const;
  std::size_t input_size() const;
  std::size_t input_channels() const;
  std::size_t feature_dim() const;
  bool needs_masks() const { return cnn && uses_roi_mask(cnn->layout); }

  nlohmann::json to_json() const;
  // Accepts {"variant", "scale", "cnn", "vit", "head_hidden", "threshold"};
  // "cnn"/"vit" objects override fields of the variant's preset.
  static ModelConfig from_json(const nlohmann::json& j, const std::string& path);
};

struct Prediction {
  Real probability = 0.5;  // clamped to [eps, 1-eps]
  int label = 0;           // 1 iff probability >= threshold
};

// Dual-branch classifier: concatenated branch features go through a
// one-hidden-layer MLP and a sigmoid.
class Model {
 public:
  struct Output {
    Var logit;  // [N,1]
    Var prob;   // [N]
    std::optional<AResNetBranch::Output> cnn;
    std::optional<ViTBranch::Output> vit;
  };

  static Model build(const ModelConfig& config, std::uint64_t seed);

  Output forward(ForwardContext& ctx, Var images, std::span<const RoiMask> masks) const;

  // Eval-mode probabilities for a batch, no gradient tracking.
  std::vector<Prediction> predict(const Tensor& images, std::span<const RoiMask> masks);
  std::vector<Prediction> predictions(const Output& out) const;

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  const std::optional<AResNetBranch>& cnn() const { return cnn_; }
  const std::optional<ViTBranch>& vit() const { return vit_; }
  const LinearLayer& head_hidden() const { return head1_; }
  const LinearLayer& head_output() const { return head2_; }

 private:
  ModelConfig config_;
  ParameterStore store_;
  std::optional<AResNetBranch> cnn_;
  std::optional<ViTBranch> vit_;
  LinearLayer head1_;
  LinearLayer head2_;
};

// Mean binary cross-entropy over the batch with p clamped to [eps, 1-eps]:
//   L = -(1/N) sum y ln p + (1-y) ln(1-p)
// Gradient (p-y) / (N p (1-p)); zero where the clamp is active.
Var bce_loss(Var p, std::span<const int> labels, Real eps = 1e-7);

}  // namespace arvit
