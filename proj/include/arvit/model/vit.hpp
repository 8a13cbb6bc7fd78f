#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "arvit/model/params.hpp"
#include "json.hpp"

namespace arvit {

enum class Readout { kClassToken, kMeanPool };

struct ViTConfig {
  std::size_t input_channels = 1;
  std::size_t input_height = 224;
  std::size_t input_width = 224;
  std::size_t patch_size = 16;
  std::size_t embed_dim = 768;
  std::size_t heads = 12;
  std::size_t depth = 12;
  std::size_t mlp_ratio = 4;
  Readout readout = Readout::kClassToken;
  Real norm_eps = 1e-6;

  // "vit-full": ViT-Base widths on 224x224 with 16x16 patches.
  static ViTConfig full();
  // "vit-tiny": 8x8 patches on 32x32, D=64, 4 heads, 4 blocks.
  static ViTConfig tiny();
  static ViTConfig preset(const std::string& name);

  void validate() const;
  std::size_t num_patches() const {
    return (input_height / patch_size) * (input_width / patch_size);
  }
  std::size_t patch_dim() const { return input_channels * patch_size * patch_size; }

  nlohmann::json to_json() const;
  static ViTConfig from_json(const nlohmann::json& j, const std::string& path);
  static ViTConfig from_json(const nlohmann::json& j, const std::string& path,
                             const ViTConfig& base);
};

// [N,C,H,W] -> [N, (H/P)(W/P), C*P*P]. Patches are taken row-major; each
// patch vector is laid out channel, row, column.
Var patchify(Var image, std::size_t patch);
Tensor patchify(const Tensor& image, std::size_t patch);
// Exact inverse of patchify.
Tensor unpatchify(const Tensor& patches, std::size_t channels, std::size_t height,
                  std::size_t width, std::size_t patch);

// Linear patch projection, class token and learned position table.
struct PatchEmbedding {
  LinearLayer projection;
  std::size_t class_token = 0;  // [1,1,D]
  std::size_t positions = 0;    // [1,1+Np,D]

  static PatchEmbedding build(ParameterStore& store, Rng& rng, const std::string& name,
                              std::size_t patch_dim, std::size_t num_patches, std::size_t dim);
  // patches[N,Np,F] -> [N,Np,D], no class token or positions.
  Var project(ForwardContext& ctx, Var patches) const;
  // patches[N,Np,F] -> tokens[N,1+Np,D] = [cls; patches W + b] + positions.
  Var forward(ForwardContext& ctx, Var patches) const;
};

class MultiHeadSelfAttention {
 public:
  struct Output {
    Var out;        // [N,T,D]
    Var attention;  // [N,h,T,T], rows sum to 1
  };

  // Throws ConfigError unless heads divides dim.
  static MultiHeadSelfAttention build(ParameterStore& store, Rng& rng, const std::string& name,
                                      std::size_t dim, std::size_t heads);
  Output forward(ForwardContext& ctx, Var x) const;

  std::size_t dim() const { return dim_; }
  std::size_t heads() const { return heads_; }
  const LinearLayer& query() const { return q_; }
  const LinearLayer& key() const { return k_; }
  const LinearLayer& value() const { return v_; }
  const LinearLayer& output() const { return o_; }

 private:
  std::size_t dim_ = 0;
  std::size_t heads_ = 1;
  LinearLayer q_, k_, v_, o_;
};

// Pre-norm encoder block:
//   x <- x + MHSA(LN(x));  x <- x + W2 gelu(W1 LN(x))
class TransformerBlock {
 public:
  struct Output {
    Var out;
    Var attention;
  };

  static TransformerBlock build(ParameterStore& store, Rng& rng, const std::string& name,
                                std::size_t dim, std::size_t heads, std::size_t mlp_ratio,
                                Real eps = 1e-6);
  Output forward(ForwardContext& ctx, Var x) const;

  const LayerNormLayer& norm1() const { return norm1_; }
  const LayerNormLayer& norm2() const { return norm2_; }
  const MultiHeadSelfAttention& attention() const { return attention_; }
  const LinearLayer& fc1() const { return fc1_; }
  const LinearLayer& fc2() const { return fc2_; }

 private:
  LayerNormLayer norm1_;
  MultiHeadSelfAttention attention_;
  LayerNormLayer norm2_;
  LinearLayer fc1_;
  LinearLayer fc2_;
};

// Global-feature branch: patchify, embed, encoder stack, final norm, readout.
class ViTBranch {
 public:
  struct Output {
    Var features;                 // [N,D]
    Var tokens;                   // [N,1+Np,D] after the final norm
    std::vector<Var> attention;   // per block, [N,h,T,T]
  };

  static ViTBranch build(const ViTConfig& config, ParameterStore& store, Rng& rng,
                         const std::string& prefix = "vit");
  Output forward(ForwardContext& ctx, Var images) const;

  const ViTConfig& config() const { return config_; }
  const PatchEmbedding& embedding() const { return embedding_; }
  const std::vector<TransformerBlock>& blocks() const { return blocks_; }

 private:
  ViTConfig config_;
  PatchEmbedding embedding_;
  std::vector<TransformerBlock> blocks_;
  LayerNormLayer final_norm_;
};

}  // namespace arvit
