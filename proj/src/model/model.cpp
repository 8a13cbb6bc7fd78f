#include "arvit/model/model.hpp"

#include <algorithm>
#include <cmath>

#include "arvit/core/errors.hpp"
#include "arvit/core/json_fields.hpp"

namespace arvit {

Scale parse_scale(const std::string& name) {
  if (name == "full") return Scale::kFull;
  if (name == "tiny") return Scale::kTiny;
  throw ConfigError("unknown scale '" + name + "' (expected full or tiny)");
}

std::string to_string(Scale scale) { return scale == Scale::kFull ? "full" : "tiny"; }

const std::vector<std::string>& known_variants() {
  static const std::vector<std::string> names{
      "resnet18", "vit",      "aresnet",  "resnet-vit", "aresnet-vit",
      "network1", "network2", "network3", "network4",   "network5"};
  return names;
}

ModelConfig ModelConfig::for_variant(const std::string& variant, Scale scale) {
  auto cnn = [scale](const char* layout) {
    const AttentionLayout l = attention_preset(layout);
    return scale == Scale::kFull ? AResNetConfig::full(l) : AResNetConfig::tiny(l);
  };
  const ViTConfig vit = scale == Scale::kFull ? ViTConfig::full() : ViTConfig::tiny();
  ModelConfig c;
  c.variant = variant;
  c.head_hidden = scale == Scale::kFull ? 256 : 32;
  if (variant == "resnet18") {
    c.cnn = cnn("network1");
  } else if (variant == "vit") {
    c.vit = vit;
  } else if (variant == "aresnet") {
    c.cnn = cnn("network5");
  } else if (variant == "resnet-vit") {
    c.cnn = cnn("network1");
    c.vit = vit;
  } else if (variant == "aresnet-vit") {
    c.cnn = cnn("network5");
    c.vit = vit;
  } else if (variant.rfind("network", 0) == 0 && variant.size() == 8 && variant[7] >= '1' &&
             variant[7] <= '5') {
    c.cnn = cnn(variant.c_str());
  } else {
    throw ConfigError("unknown model variant '" + variant +
                      "' (expected resnet18, vit, aresnet, resnet-vit, aresnet-vit or "
                      "network1..network5)");
  }
  return c;
}

void ModelConfig::validate() const {
  if (!cnn && !vit) throw ConfigError("model needs at least one branch");
  if (cnn) cnn->validate();
  if (vit) vit->validate();
  if (cnn && vit) {
    if (vit->input_height != cnn->input_size || vit->input_width != cnn->input_size) {
      throw ConfigError("branch input sizes differ: cnn " + std::to_string(cnn->input_size) +
                        ", vit " + std::to_string(vit->input_height) + "x" +
                        std::to_string(vit->input_width));
    }
    if (vit->input_channels != cnn->input_channels) {
      throw ConfigError("branch input channel counts differ");
    }
  }
  if (head_hidden == 0) throw ConfigError("head_hidden must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
  if (!(clamp_eps > 0.0 && clamp_eps < 0.5)) throw ConfigError("clamp_eps must lie in (0,0.5)");
}

std::size_t ModelConfig::input_size() const {
  return cnn ? cnn->input_size : vit->input_height;
}

std::size_t ModelConfig::input_channels() const {
  return cnn ? cnn->input_channels : vit->input_channels;
}

std::size_t ModelConfig::feature_dim() const {
  return (cnn ? cnn->feature_dim() : 0) + (vit ? vit->embed_dim : 0);
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json j = {{"variant", variant},
                      {"head_hidden", head_hidden},
                      {"threshold", threshold},
                      {"clamp_eps", clamp_eps}};
  j["cnn"] = cnn ? cnn->to_json() : nlohmann::json(nullptr);
  j["vit"] = vit ? vit->to_json() : nlohmann::json(nullptr);
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j, const std::string& path) {
  JsonFields f(j, path);
  const std::string variant = f.get<std::string>("variant", "aresnet-vit");
  Scale scale = Scale::kFull;
  if (f.has("scale")) {
    try {
      scale = parse_scale(f.required<std::string>("scale"));
    } catch (const ConfigError& e) {
      throw ConfigError(f.field_path("scale") + ": " + e.what());
    }
  }
  ModelConfig c;
  try {
    c = for_variant(variant, scale);
  } catch (const ConfigError& e) {
    throw ConfigError(f.field_path("variant") + ": " + e.what());
  }
  auto branch = [&](const char* key, auto& slot) {
    if (!f.has(key)) return;
    const nlohmann::json& v = f.raw(key);
    if (v.is_null()) {
      slot.reset();
      return;
    }
    using Config = typename std::remove_reference_t<decltype(slot)>::value_type;
    slot = Config::from_json(v, f.field_path(key), slot ? *slot : Config{});
  };
  branch("cnn", c.cnn);
  branch("vit", c.vit);
  c.head_hidden = f.get<std::size_t>("head_hidden", c.head_hidden);
  c.threshold = f.get<double>("threshold", c.threshold);
  c.clamp_eps = f.get<double>("clamp_eps", c.clamp_eps);
  f.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError((path.empty() ? std::string() : path + ": ") + e.what());
  }
  return c;
}

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config_ = config;
  Rng rng(seed);
  if (config.cnn) m.cnn_ = AResNetBranch::build(*config.cnn, m.store_, rng, "cnn");
  if (config.vit) m.vit_ = ViTBranch::build(*config.vit, m.store_, rng, "vit");
  m.head1_ = LinearLayer::build(m.store_, rng, "head.fc1", config.feature_dim(),
                                config.head_hidden);
  m.head2_ = LinearLayer::build(m.store_, rng, "head.fc2", config.head_hidden, 1, 1.0);
  return m;
}

Model::Output Model::forward(ForwardContext& ctx, Var images,
                             std::span<const RoiMask> masks) const {
  Output out;
  std::vector<Var> features;
  if (cnn_) {
    out.cnn = cnn_->forward(ctx, images, masks);
    features.push_back(out.cnn->features);
  }
  if (vit_) {
    out.vit = vit_->forward(ctx, images);
    features.push_back(out.vit->features);
  }
  Var fused = features.size() == 1 ? features[0] : concat(features, 1);
  out.logit = head2_.forward(ctx, relu(head1_.forward(ctx, fused)));
  out.prob = reshape(sigmoid(out.logit), {images.shape()[0]});
  return out;
}

std::vector<Prediction> Model::predictions(const Output& out) const {
  const Tensor& p = out.prob.value();
  std::vector<Prediction> preds(p.numel());
  const Real eps = config_.clamp_eps;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    preds[i].probability = std::clamp(p[i], eps, 1.0 - eps);
    preds[i].label = preds[i].probability >= config_.threshold ? 1 : 0;
  }
  return preds;
}

std::vector<Prediction> Model::predict(const Tensor& images, std::span<const RoiMask> masks) {
  Tape tape;
  ForwardContext ctx(tape, store_, Mode::kEval);
  return predictions(forward(ctx, tape.constant(images), masks));
}

Var bce_loss(Var p, std::span<const int> labels, Real eps) {
  const Tensor& pv = p.value();
  const std::size_t n = pv.numel();
  if (n == 0 || labels.empty()) throw ContractError("bce_loss: empty batch");
  if (labels.size() != n) {
    throw DimensionError("bce_loss: " + std::to_string(n) + " probabilities for " +
                         std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw InputError("bce_loss: label " + std::to_string(y) + " not in {0,1}");
  }
  Real total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real q = std::clamp(pv[i], eps, 1.0 - eps);
    total += labels[i] ? std::log(q) : std::log1p(-q);
  }
  const Real inv_n = 1.0 / static_cast<Real>(n);
  std::vector<int> y(labels.begin(), labels.end());
  const std::size_t pid = p.id;
  Tape* tape = p.tape;
  return tape->record(
      Tensor::scalar(-total * inv_n), {p},
      [tape, pid, y = std::move(y), eps, inv_n](const Tensor& g, GradBuffers& grads) {
        Tensor* gp = grads.slot(pid);
        if (!gp) return;
        const Tensor& pv = tape->value(pid);
        for (std::size_t i = 0; i < pv.numel(); ++i) {
          const Real q = pv[i];
          if (q < eps || q > 1.0 - eps) continue;
          (*gp)[i] += g[0] * (q - y[i]) * inv_n / (q * (1.0 - q));
        }
      },
      "bce_loss");
}

}  // namespace arvit
