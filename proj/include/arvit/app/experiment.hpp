#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "arvit/data/dataset.hpp"
#include "arvit/model/model.hpp"
#include "arvit/train/trainer.hpp"
#include "json.hpp"

namespace arvit {

// Where samples come from: a generated synthetic set or a directory in the
// BUSI or fixture layout.
struct DatasetSpec {
  enum class Source { kSynth, kPath };

  Source source = Source::kSynth;
  std::string path;
  std::uint64_t synth_seed = 7;
  std::size_t per_class = 32;
  std::size_t size = 64;

  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j, const std::string& path);
};

struct DataOptions {
  bool augment = true;
  Real test_fraction = 0.2;
  Real val_fraction = 0.1;

  nlohmann::json to_json() const;
  static DataOptions from_json(const nlohmann::json& j, const std::string& path);
};

// Full description of one run. `seed` feeds the split, the weight
// initialization and (unless train.shuffle_seed is given) the batch order.
struct ExperimentConfig {
  DatasetSpec dataset;
  DataOptions data;
  ModelConfig model;
  nlohmann::json model_overrides = nlohmann::json::object();  // as written, for ablations
  TrainConfig train;
  std::uint64_t seed = 42;
  std::string output_dir = "runs/default";

  // Every field, defaults included.
  nlohmann::json to_json() const;
  // Strict: unknown keys and wrong types throw ConfigError naming the field.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& file);

  // Replaces the seed; the shuffle seed follows unless it was pinned.
  void set_seed(std::uint64_t s);
  bool shuffle_seed_pinned = false;

  // Same data, split and training settings with another model variant.
  // Branch overrides apply only to branches the variant has, and a CNN
  // attention layout override is dropped so the variant's own layout is used.
  ExperimentConfig with_variant(const std::string& variant) const;
};

// Loads the samples a spec refers to. Throws DataError when none remain.
LoadResult load_samples(const DatasetSpec& spec);

// Name used in report rows: Table-2 capitalization for the architecture
// variants, unchanged for network1..network5.
std::string display_name(const std::string& variant);

}  // namespace arvit
