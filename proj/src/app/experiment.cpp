#include "arvit/app/experiment.hpp"

#include <fstream>

#include "arvit/core/json_fields.hpp"

namespace arvit {

nlohmann::json DatasetSpec::to_json() const {
  if (source == Source::kPath) return {{"source", "path"}, {"path", path}};
  return {{"source", "synth"}, {"seed", synth_seed}, {"per_class", per_class}, {"size", size}};
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j, const std::string& path) {
  JsonFields f(j, path);
  DatasetSpec d;
  const std::string source = f.get<std::string>("source", "synth");
  if (source == "synth") {
    d.source = Source::kSynth;
    d.synth_seed = f.get<std::uint64_t>("seed", d.synth_seed);
    d.per_class = f.get<std::size_t>("per_class", d.per_class);
    d.size = f.get<std::size_t>("size", d.size);
    if (d.per_class == 0) throw ConfigError(f.field_path("per_class") + ": must be positive");
    if (d.size < 16) throw ConfigError(f.field_path("size") + ": must be at least 16");
  } else if (source == "path") {
    d.source = Source::kPath;
    d.path = f.required<std::string>("path");
  } else {
    throw ConfigError(f.field_path("source") + ": unknown source '" + source + "' (expected synth or path)");
  }
  f.finish();
  return d;
}

nlohmann::json DataOptions::to_json() const {
  return {{"augment", augment}, {"test_fraction", test_fraction}, {"val_fraction", val_fraction}};
}

DataOptions DataOptions::from_json(const nlohmann::json& j, const std::string& path) {
  JsonFields f(j, path);
  DataOptions d;
  d.augment = f.get<bool>("augment", d.augment);
  d.test_fraction = f.get<Real>("test_fraction", d.test_fraction);
  d.val_fraction = f.get<Real>("val_fraction", d.val_fraction);
  f.finish();
  if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0)) {
    throw ConfigError(f.field_path("test_fraction") + ": must lie in (0,1)");
  }
  if (!(d.val_fraction > 0.0 && d.val_fraction < 1.0)) {
    throw ConfigError(f.field_path("val_fraction") + ": must lie in (0,1)");
  }
  return d;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json m = model.to_json();
  m["scale"] = model_overrides.is_object() && model_overrides.contains("scale") ? model_overrides["scale"]
                                                                                : nlohmann::json("full");
  return {{"dataset", dataset.to_json()}, {"data", data.to_json()}, {"model", m},
          {"train", train.to_json()},     {"seed", seed},           {"output_dir", output_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  JsonFields f(j, "");
  ExperimentConfig c;
  c.seed = f.get<std::uint64_t>("seed", c.seed);
  c.output_dir = f.get<std::string>("output_dir", c.output_dir);
  if (f.has("dataset")) c.dataset = DatasetSpec::from_json(f.raw("dataset"), "dataset");
  if (f.has("data")) c.data = DataOptions::from_json(f.raw("data"), "data");
  if (f.has("model")) {
    c.model_overrides = f.raw("model");
    c.model = ModelConfig::from_json(c.model_overrides, "model");
  } else {
    c.model = ModelConfig::from_json(nlohmann::json::object(), "model");
  }
  if (f.has("train")) {
    const nlohmann::json& t = f.raw("train");
    c.train = TrainConfig::from_json(t, "train");
    c.shuffle_seed_pinned = t.is_object() && t.contains("shuffle_seed");
  }
  f.finish();
  if (!c.shuffle_seed_pinned) c.train.shuffle_seed = c.seed;
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(file.string() + ": invalid JSON: " + e.what());
  }
  return from_json(j);
}

void ExperimentConfig::set_seed(std::uint64_t s) {
  seed = s;
  if (!shuffle_seed_pinned) train.shuffle_seed = s;
}

ExperimentConfig ExperimentConfig::with_variant(const std::string& variant) const {
  nlohmann::json m = model_overrides.is_object() ? model_overrides : nlohmann::json::object();
  m["variant"] = variant;
  const ModelConfig preset = ModelConfig::for_variant(variant, m.contains("scale") && m["scale"].is_string()
                                                                   ? parse_scale(m["scale"].get<std::string>())
                                                                   : Scale::kFull);
  if (!preset.cnn) m.erase("cnn");
  if (!preset.vit) m.erase("vit");
  if (m.contains("cnn") && m["cnn"].is_object()) m["cnn"].erase("layout");
  ExperimentConfig c = *this;
  c.model_overrides = m;
  c.model = ModelConfig::from_json(m, "model");
  return c;
}

LoadResult load_samples(const DatasetSpec& spec) {
  LoadResult r;
  if (spec.source == DatasetSpec::Source::kSynth) {
    r.samples = synth_generate(spec.synth_seed, spec.per_class, spec.size);
    for (const Sample& s : r.samples) (s.label == kMalignant ? r.report.malignant : r.report.benign)++;
  } else {
    r = load_dataset(spec.path);
  }
  if (r.samples.empty()) throw DataError("dataset has no usable benign or malignant samples");
  return r;
}

std::string display_name(const std::string& variant) {
  if (variant == "resnet18") return "ResNet18";
  if (variant == "vit") return "ViT";
  if (variant == "aresnet") return "AResNet";
  if (variant == "resnet-vit") return "ResNet-ViT";
  if (variant == "aresnet-vit") return "AResNet-ViT";
  return variant;
}

}  // namespace arvit
