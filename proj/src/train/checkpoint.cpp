#include "arvit/train/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace arvit {

std::string to_string(CheckpointErrorKind kind) {
  switch (kind) {
    case CheckpointErrorKind::kIo: return "io";
    case CheckpointErrorKind::kBadMagic: return "bad_magic";
    case CheckpointErrorKind::kVersion: return "version";
    case CheckpointErrorKind::kCorrupt: return "corrupt";
    case CheckpointErrorKind::kConfigMismatch: return "config_mismatch";
    case CheckpointErrorKind::kTensorMismatch: return "tensor_mismatch";
  }
  return "unknown";
}

CheckpointError::CheckpointError(CheckpointErrorKind kind, const std::string& message)
    : Error("checkpoint " + to_string(kind) + ": " + message), kind_(kind) {}

CheckpointError CheckpointError::mismatch(CheckpointErrorKind kind, std::string field,
                                          const std::string& message) {
  CheckpointError e(kind, message);
  e.field_ = std::move(field);
  return e;
}

namespace {

constexpr char kMagic[4] = {'A', 'R', 'V', 'T'};
constexpr std::uint8_t kDtypeF64 = 1;

class Writer {
 public:
  std::vector<std::uint8_t> bytes;

  template <class T>
  void put(T v) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    bytes.insert(bytes.end(), raw, raw + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  void put_tensor(const NamedTensor& t) {
    put(static_cast<std::uint32_t>(t.name.size()));
    put_bytes(t.name.data(), t.name.size());
    put(kDtypeF64);
    put(static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) put(static_cast<std::uint64_t>(d));
    for (Real v : t.value.data()) put(v);
  }
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }
  std::string get_string(std::uint64_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  NamedTensor get_tensor() {
    NamedTensor t;
    t.name = get_string(get<std::uint32_t>("tensor name length"), "tensor name");
    const auto dtype = get<std::uint8_t>("dtype");
    if (dtype != kDtypeF64) corrupt("tensor " + t.name + " has unknown dtype " + std::to_string(dtype));
    const auto rank = get<std::uint32_t>("rank");
    if (rank > 8) corrupt("tensor " + t.name + " has implausible rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = get<std::uint64_t>("dims");
      if (d != 0 && numel > remaining() / d) corrupt("tensor " + t.name + " is truncated");
      numel *= d;
      shape.push_back(static_cast<std::size_t>(d));
    }
    if (numel > remaining() / sizeof(Real)) corrupt("tensor " + t.name + " is truncated");
    std::vector<Real> data(numel);
    for (Real& v : data) v = get<Real>("payload");
    t.value = Tensor(std::move(shape), std::move(data));
    return t;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] static void corrupt(const std::string& msg) {
    throw CheckpointError(CheckpointErrorKind::kCorrupt, msg);
  }

 private:
  void need(std::uint64_t n, const char* what) const {
    if (n > remaining()) corrupt(std::string("file truncated while reading ") + what);
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

nlohmann::json header_json(const Checkpoint& c) {
  nlohmann::json j = {{"model", c.model.to_json()},
                      {"model_seed", c.model_seed},
                      {"split_seed", c.split_seed},
                      {"normalization", c.norm.to_json()},
                      {"metrics", c.metrics}};
  if (c.optimizer) {
    j["optimizer"] = {{"adam", c.optimizer->config.to_json()}, {"steps", c.optimizer->steps}};
  } else {
    j["optimizer"] = nullptr;
  }
  return j;
}

// First dotted path at which two JSON values differ, empty when equal.
std::string first_difference(const nlohmann::json& a, const nlohmann::json& b,
                             const std::string& path) {
  if (a.type() != b.type()) return path;
  if (a.is_object()) {
    for (auto it = a.begin(); it != a.end(); ++it) {
      if (!b.contains(it.key())) return path + "." + it.key();
      std::string d = first_difference(*it, b.at(it.key()), path + "." + it.key());
      if (!d.empty()) return d;
    }
    for (auto it = b.begin(); it != b.end(); ++it) {
      if (!a.contains(it.key())) return path + "." + it.key();
    }
    return {};
  }
  if (a.is_array()) {
    if (a.size() != b.size()) return path;
    for (std::size_t i = 0; i < a.size(); ++i) {
      std::string d = first_difference(a[i], b[i], path + "[" + std::to_string(i) + "]");
      if (!d.empty()) return d;
    }
    return {};
  }
  return a == b ? std::string() : path;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put(kCheckpointVersion);
  const std::string header = header_json(ckpt).dump();
  w.put(static_cast<std::uint64_t>(header.size()));
  w.put_bytes(header.data(), header.size());
  std::uint64_t count = ckpt.tensors.size();
  if (ckpt.optimizer) count += ckpt.optimizer->m.size() + ckpt.optimizer->v.size();
  w.put(count);
  for (const NamedTensor& t : ckpt.tensors) w.put_tensor(t);
  if (ckpt.optimizer) {
    for (const NamedTensor& t : ckpt.optimizer->m) w.put_tensor({"adam.m/" + t.name, t.value});
    for (const NamedTensor& t : ckpt.optimizer->v) w.put_tensor({"adam.v/" + t.name, t.value});
  }
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(CheckpointErrorKind::kBadMagic, "not an ARVT checkpoint");
  }
  Reader r(bytes);
  r.get_string(4, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorKind::kVersion,
                          "file version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
  }
  const auto header_len = r.get<std::uint64_t>("header length");
  const std::string header_text = r.get_string(header_len, "header");

  Checkpoint c;
  try {
    const nlohmann::json h = nlohmann::json::parse(header_text);
    c.model = ModelConfig::from_json(h.at("model"), "model");
    c.model_seed = h.at("model_seed").get<std::uint64_t>();
    c.split_seed = h.at("split_seed").get<std::uint64_t>();
    c.norm.mean = h.at("normalization").at("mean").get<Real>();
    c.norm.std = h.at("normalization").at("std").get<Real>();
    c.metrics = h.at("metrics");
    if (!h.at("optimizer").is_null()) {
      c.optimizer.emplace();
      c.optimizer->config = AdamConfig::from_json(h["optimizer"].at("adam"), "optimizer.adam");
      c.optimizer->steps = h["optimizer"].at("steps").get<std::size_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    Reader::corrupt(std::string("bad header: ") + e.what());
  } catch (const ConfigError& e) {
    Reader::corrupt(std::string("bad header: ") + e.what());
  }

  const auto count = r.get<std::uint64_t>("tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t = r.get_tensor();
    if (t.name.rfind("adam.m/", 0) == 0 || t.name.rfind("adam.v/", 0) == 0) {
      if (!c.optimizer) Reader::corrupt("optimizer tensor " + t.name + " without optimizer header");
      auto& list = t.name[5] == 'm' ? c.optimizer->m : c.optimizer->v;
      list.push_back({t.name.substr(7), std::move(t.value)});
    } else {
      c.tensors.push_back(std::move(t));
    }
  }
  if (r.remaining() != 0) Reader::corrupt(std::to_string(r.remaining()) + " trailing bytes");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointErrorKind::kIo, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw CheckpointError(CheckpointErrorKind::kIo, "read failed for " + path.string());
  return decode_checkpoint(bytes);
}

Checkpoint make_checkpoint(const Model& model, std::uint64_t model_seed, const Adam* optimizer,
                           std::uint64_t split_seed, const Normalization& norm,
                           nlohmann::json metrics) {
  Checkpoint c;
  c.model = model.config();
  c.model_seed = model_seed;
  c.split_seed = split_seed;
  c.norm = norm;
  c.metrics = std::move(metrics);
  const ParameterStore& store = model.params();
  for (const auto& e : store.entries()) c.tensors.push_back({e.name, e.value});
  if (optimizer) {
    AdamSnapshot s;
    s.config = optimizer->config();
    s.steps = optimizer->steps();
    for (std::size_t i = 0; i < store.size(); ++i) {
      if (!store.entry(i).trainable) continue;
      s.m.push_back({store.entry(i).name, optimizer->first_moments().at(i)});
      s.v.push_back({store.entry(i).name, optimizer->second_moments().at(i)});
    }
    c.optimizer = std::move(s);
  }
  return c;
}

void check_config(const Checkpoint& ckpt, const ModelConfig& expected) {
  const std::string diff = first_difference(ckpt.model.to_json(), expected.to_json(), "model");
  if (!diff.empty()) {
    throw CheckpointError::mismatch(CheckpointErrorKind::kConfigMismatch, diff,
                                    "checkpoint was written for a different configuration (" +
                                        diff + " differs)");
  }
}

void load_weights(Model& model, const Checkpoint& ckpt) {
  check_config(ckpt, model.config());
  ParameterStore& store = model.params();
  if (ckpt.tensors.size() != store.size()) {
    throw CheckpointError::mismatch(CheckpointErrorKind::kTensorMismatch, "",
                                    "checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                                        " tensors, model has " + std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const NamedTensor& t = ckpt.tensors[i];
    if (t.name != store.entry(i).name || t.value.shape() != store.value(i).shape()) {
      throw CheckpointError::mismatch(CheckpointErrorKind::kTensorMismatch, store.entry(i).name,
                                      "tensor " + std::to_string(i) + " is '" + t.name +
                                          "', expected '" + store.entry(i).name +
                                          "' with matching shape");
    }
  }
  for (std::size_t i = 0; i < store.size(); ++i) store.value(i) = ckpt.tensors[i].value;
}

Model restore_model(const Checkpoint& ckpt) {
  Model model = Model::build(ckpt.model, ckpt.model_seed);
  load_weights(model, ckpt);
  return model;
}

Adam restore_optimizer(const Checkpoint& ckpt, const Model& model) {
  if (!ckpt.optimizer) throw CheckpointError(CheckpointErrorKind::kCorrupt, "no optimizer state stored");
  const ParameterStore& store = model.params();
  Adam adam(store, ckpt.optimizer->config);
  std::vector<Tensor> m(store.size()), v(store.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!store.entry(i).trainable) continue;
    if (k >= ckpt.optimizer->m.size() || k >= ckpt.optimizer->v.size() ||
        ckpt.optimizer->m[k].name != store.entry(i).name ||
        ckpt.optimizer->v[k].name != store.entry(i).name ||
        ckpt.optimizer->m[k].value.shape() != store.value(i).shape() ||
        ckpt.optimizer->v[k].value.shape() != store.value(i).shape()) {
      throw CheckpointError::mismatch(CheckpointErrorKind::kTensorMismatch, store.entry(i).name,
                                      "optimizer moments do not match " + store.entry(i).name);
    }
    m[i] = ckpt.optimizer->m[k].value;
    v[i] = ckpt.optimizer->v[k].value;
    ++k;
  }
  if (k != ckpt.optimizer->m.size() || k != ckpt.optimizer->v.size()) {
    throw CheckpointError::mismatch(CheckpointErrorKind::kTensorMismatch, "",
                                    "optimizer holds extra moments");
  }
  adam.restore(ckpt.optimizer->steps, std::move(m), std::move(v));
  return adam;
}

}  // namespace arvit
