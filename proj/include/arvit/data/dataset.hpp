#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "arvit/blocks/attention_blocks.hpp"
#include "arvit/data/image.hpp"
#include "json.hpp"

namespace arvit {

inline constexpr int kBenign = 0;
inline constexpr int kMalignant = 1;

std::string label_name(int label);

struct Sample {
  std::string id;
  Raster image;  // gray, [0,1]
  Raster mask;   // {0,1}, same size as image
  int label = kBenign;
};

struct LoadIssue {
  std::string path;
  std::string reason;
};

struct LoadReport {
  std::size_t benign = 0;
  std::size_t malignant = 0;
  std::size_t excluded = 0;  // normal-class (or otherwise out-of-scope) images
  std::vector<LoadIssue> issues;

  nlohmann::json to_json() const;
};

struct LoadResult {
  std::vector<Sample> samples;  // sorted by id
  LoadReport report;
};

// BUSI layout: root/{benign,malignant,normal}/<name>.png with <name>_mask.png
// (and <name>_mask_<k>.png for extra masks, united by pixelwise max). Only
// benign and malignant are kept. Per-sample problems go to the report; a
// missing root throws DataError.
LoadResult load_busi(const std::filesystem::path& root);

// Fixture layout: dir/labels.csv (id,label) with dir/<id>.png and
// dir/<id>_mask.png.
LoadResult load_fixture(const std::filesystem::path& dir);
void write_fixture(const std::filesystem::path& dir, std::span<const Sample> samples);

// Fixture when labels.csv is present, BUSI layout otherwise.
LoadResult load_dataset(const std::filesystem::path& path);

struct DatasetSplit {
  std::uint64_t seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;

  nlohmann::json to_json() const;
  static DatasetSplit from_json(const nlohmann::json& j);
  bool operator==(const DatasetSplit&) const = default;
};

// Stratified per class: test = round(test_fraction * n), val =
// max(1, round(val_fraction * remaining)), the rest train. Each list sorted.
// Throws DataError naming the class when it has fewer than 5 samples.
DatasetSplit split_dataset(std::span<const Sample> samples, std::uint64_t seed,
                           double test_fraction = 0.2, double val_fraction = 0.1);

// Five views per sample: original, hflip, rot90, rot180, rot270, with the
// mask transformed identically. Ids get a "~<op>" suffix (none for original).
std::vector<Sample> augment(std::span<const Sample> samples);

// Bilinear image, area-averaged then re-binarized mask.
Sample resize_sample(const Sample& s, std::size_t size);

struct Normalization {
  Real mean = 0.0;
  Real std = 1.0;

  static Normalization fit(std::span<const Sample> samples);
  nlohmann::json to_json() const { return {{"mean", mean}, {"std", std}}; }
};

struct PreparedData {
  DatasetSplit split;
  std::vector<Sample> train;  // resized, augmented when requested
  std::vector<Sample> val;
  std::vector<Sample> test;
  Normalization norm;
};

// Resize to `size`, partition by `split`, augment the training part only,
// fit normalization on it.
PreparedData prepare(std::span<const Sample> samples, const DatasetSplit& split,
                     std::size_t size, bool augment_train = true);

struct Batch {
  Tensor images;  // [N,1,S,S], standardized
  std::vector<RoiMask> masks;
  std::vector<int> labels;
  std::vector<std::string> ids;
};

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices,
                 const Normalization& norm);
Batch make_batch(std::span<const Sample> samples, const Normalization& norm);

// Deterministic stand-in data on a speckled background. Benign: smooth
// ellipse, darker interior, crisp edge. Malignant: star-perturbed ellipse
// with a blurred edge. The mask is the generated region. size >= 16.
std::vector<Sample> synth_generate(std::uint64_t seed, std::size_t per_class, std::size_t size);

}  // namespace arvit
