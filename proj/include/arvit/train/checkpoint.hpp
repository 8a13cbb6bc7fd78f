#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "arvit/core/errors.hpp"
#include "arvit/data/dataset.hpp"
#include "arvit/model/model.hpp"
#include "arvit/train/optim.hpp"
#include "json.hpp"

namespace arvit {

enum class CheckpointErrorKind { kIo, kBadMagic, kVersion, kCorrupt, kConfigMismatch, kTensorMismatch };

std::string to_string(CheckpointErrorKind kind);

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& message);
  CheckpointErrorKind kind() const { return kind_; }
  // Dotted config path for kConfigMismatch, tensor name for kTensorMismatch.
  const std::string& field() const { return field_; }

  static CheckpointError mismatch(CheckpointErrorKind kind, std::string field,
                                  const std::string& message);

 private:
  CheckpointErrorKind kind_;
  std::string field_;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct AdamSnapshot {
  AdamConfig config;
  std::size_t steps = 0;
  std::vector<NamedTensor> m;  // trainable entries only, store order
  std::vector<NamedTensor> v;
};

struct Checkpoint {
  ModelConfig model;
  std::uint64_t model_seed = 0;
  std::uint64_t split_seed = 0;
  Normalization norm;
  nlohmann::json metrics = nlohmann::json::object();
  std::vector<NamedTensor> tensors;  // every store entry, store order
  std::optional<AdamSnapshot> optimizer;
};

// File layout, little-endian:
//   "ARVT"  u32 version  u64 n  n bytes of UTF-8 JSON header
//   u64 tensor count, then per tensor:
//     u32 name length, name bytes, u8 dtype (1 = f64), u32 rank, rank x u64 dims,
//     numel x f64 payload
// Tensors are the model entries followed by "adam.m/<name>" and
// "adam.v/<name>" moments when optimizer state is present.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const Model& model, std::uint64_t model_seed, const Adam* optimizer,
                           std::uint64_t split_seed, const Normalization& norm,
                           nlohmann::json metrics = nlohmann::json::object());

// Throws kConfigMismatch naming the first differing field (e.g.
// "model.cnn.layout") when the checkpoint was written for another config.
void check_config(const Checkpoint& ckpt, const ModelConfig& expected);

// Copies the checkpoint tensors into a model; names and shapes must match.
void load_weights(Model& model, const Checkpoint& ckpt);
Model restore_model(const Checkpoint& ckpt);
Adam restore_optimizer(const Checkpoint& ckpt, const Model& model);

}  // namespace arvit
