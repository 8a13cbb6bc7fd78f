#include "arvit/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>

#include "arvit/core/errors.hpp"
#include "arvit/core/rng.hpp"

namespace fs = std::filesystem;

namespace arvit {

std::string label_name(int label) { return label == kMalignant ? "malignant" : "benign"; }

nlohmann::json LoadReport::to_json() const {
  nlohmann::json issues_json = nlohmann::json::array();
  for (const auto& i : issues) issues_json.push_back({{"path", i.path}, {"reason", i.reason}});
  return {{"benign", benign}, {"malignant", malignant}, {"excluded", excluded},
          {"issues", issues_json}};
}

namespace {

void sort_by_id(std::vector<Sample>& samples) {
  std::sort(samples.begin(), samples.end(),
            [](const Sample& a, const Sample& b) { return a.id < b.id; });
}

void count(LoadReport& report, const Sample& s) {
  (s.label == kMalignant ? report.malignant : report.benign)++;
}

bool is_png(const fs::path& p) { return p.extension() == ".png" || p.extension() == ".PNG"; }

bool is_mask_name(const std::string& stem) { return stem.find("_mask") != std::string::npos; }

// Accepts <name>_mask and <name>_mask_<anything>.
bool mask_belongs_to(const std::string& mask_stem, const std::string& name) {
  const std::string base = name + "_mask";
  if (mask_stem == base) return true;
  return mask_stem.size() > base.size() + 1 && mask_stem.compare(0, base.size(), base) == 0 &&
         mask_stem[base.size()] == '_';
}

}  // namespace

LoadResult load_busi(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset directory not found: " + root.string());
  LoadResult result;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string cls = entry.path().filename().string();
    if (cls != "benign" && cls != "malignant") {
      for (const auto& f : fs::directory_iterator(entry.path())) {
        if (f.is_regular_file() && is_png(f.path()) && !is_mask_name(f.path().stem().string())) {
          ++result.report.excluded;
        }
      }
      continue;
    }
    const int label = cls == "malignant" ? kMalignant : kBenign;
    std::vector<fs::path> images;
    std::vector<fs::path> masks;
    for (const auto& f : fs::directory_iterator(entry.path())) {
      if (!f.is_regular_file() || !is_png(f.path())) continue;
      (is_mask_name(f.path().stem().string()) ? masks : images).push_back(f.path());
    }
    std::sort(images.begin(), images.end());
    std::sort(masks.begin(), masks.end());
    for (const fs::path& img : images) {
      const std::string name = img.stem().string();
      try {
        Sample s;
        s.id = name;
        s.label = label;
        s.image = read_png_gray(img);
        bool any = false;
        for (const fs::path& m : masks) {
          if (!mask_belongs_to(m.stem().string(), name)) continue;
          Raster part = read_png_gray(m);
          if (part.height != s.image.height || part.width != s.image.width) {
            throw DataError("mask " + m.filename().string() + " size differs from image");
          }
          if (!any) {
            s.mask = part;
            any = true;
          } else {
            for (std::size_t i = 0; i < part.values.size(); ++i)
              s.mask.values[i] = std::max(s.mask.values[i], part.values[i]);
          }
        }
        if (!any) throw DataError("missing mask");
        s.mask = binarize(s.mask);
        if (std::none_of(s.mask.values.begin(), s.mask.values.end(), [](Real v) { return v > 0; })) {
          throw DataError("mask has no positive pixel");
        }
        count(result.report, s);
        result.samples.push_back(std::move(s));
      } catch (const DataError& e) {
        result.report.issues.push_back({img.string(), e.what()});
      }
    }
  }
  sort_by_id(result.samples);
  return result;
}

LoadResult load_fixture(const fs::path& dir) {
  const fs::path csv = dir / "labels.csv";
  std::ifstream in(csv);
  if (!in) throw DataError("cannot open " + csv.string());
  LoadResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line == "id,label") continue;
    const auto comma = line.rfind(',');
    const std::string where = csv.string() + ":" + std::to_string(line_no);
    if (comma == std::string::npos) {
      result.report.issues.push_back({where, "expected id,label"});
      continue;
    }
    const std::string id = line.substr(0, comma);
    const std::string lab = line.substr(comma + 1);
    if (lab != "0" && lab != "1") {
      result.report.issues.push_back({where, "label must be 0 or 1, got '" + lab + "'"});
      continue;
    }
    try {
      Sample s;
      s.id = id;
      s.label = lab == "1" ? kMalignant : kBenign;
      s.image = read_png_gray(dir / (id + ".png"));
      s.mask = binarize(read_png_gray(dir / (id + "_mask.png")));
      if (s.mask.height != s.image.height || s.mask.width != s.image.width) {
        throw DataError("mask size differs from image");
      }
      count(result.report, s);
      result.samples.push_back(std::move(s));
    } catch (const DataError& e) {
      result.report.issues.push_back({(dir / id).string(), e.what()});
    }
  }
  sort_by_id(result.samples);
  return result;
}

void write_fixture(const fs::path& dir, std::span<const Sample> samples) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<const Sample*> order;
  for (const Sample& s : samples) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const Sample* a, const Sample* b) { return a->id < b->id; });
  std::ofstream csv(dir / "labels.csv", std::ios::binary);
  if (!csv) throw DataError("cannot write " + (dir / "labels.csv").string());
  csv << "id,label\n";
  for (const Sample* s : order) {
    write_png_gray(dir / (s->id + ".png"), s->image);
    write_png_gray(dir / (s->id + "_mask.png"), s->mask);
    csv << s->id << ',' << s->label << '\n';
  }
  if (!csv) throw DataError("cannot write " + (dir / "labels.csv").string());
}

LoadResult load_dataset(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("dataset path not found: " + path.string());
  return fs::exists(path / "labels.csv") ? load_fixture(path) : load_busi(path);
}

nlohmann::json DatasetSplit::to_json() const {
  return {{"seed", seed}, {"train", train}, {"val", val}, {"test", test}};
}

DatasetSplit DatasetSplit::from_json(const nlohmann::json& j) {
  try {
    DatasetSplit s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.train = j.at("train").get<std::vector<std::string>>();
    s.val = j.at("val").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed split manifest: ") + e.what());
  }
}

DatasetSplit split_dataset(std::span<const Sample> samples, std::uint64_t seed,
                           double test_fraction, double val_fraction) {
  DatasetSplit split;
  split.seed = seed;
  Rng rng(seed);
  for (int label : {kBenign, kMalignant}) {
    std::vector<std::string> ids;
    for (const Sample& s : samples)
      if (s.label == label) ids.push_back(s.id);
    if (ids.size() < 5) {
      throw DataError("class '" + label_name(label) + "' has " + std::to_string(ids.size()) +
                      " samples; at least 5 are needed to split");
    }
    std::sort(ids.begin(), ids.end());
    rng.shuffle(ids);
    const auto n = static_cast<double>(ids.size());
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * n));
    const auto rest = static_cast<double>(ids.size() - n_test);
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(val_fraction * rest)));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto& dst = i < n_test ? split.test : i < n_test + n_val ? split.val : split.train;
      dst.push_back(ids[i]);
    }
  }
  for (auto* list : {&split.train, &split.val, &split.test}) std::sort(list->begin(), list->end());
  return split;
}

std::vector<Sample> augment(std::span<const Sample> samples) {
  std::vector<Sample> out;
  out.reserve(samples.size() * 5);
  for (const Sample& s : samples) {
    out.push_back(s);
    out.push_back({s.id + "~hflip", hflip(s.image), hflip(s.mask), s.label});
    for (int q = 1; q <= 3; ++q) {
      out.push_back({s.id + "~rot" + std::to_string(90 * q), rot90(s.image, q), rot90(s.mask, q),
                     s.label});
    }
  }
  return out;
}

Sample resize_sample(const Sample& s, std::size_t size) {
  if (s.image.height < 2 || s.image.width < 2) {
    throw DataError("sample " + s.id + " is smaller than 2x2");
  }
  Sample out;
  out.id = s.id;
  out.label = s.label;
  out.image = resize_bilinear(s.image, size, size);
  out.mask = resize_mask(s.mask, size, size);
  return out;
}

Normalization Normalization::fit(std::span<const Sample> samples) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const Sample& s : samples)
    for (Real v : s.image.values) {
      sum += v;
      ++n;
    }
  if (n == 0) throw DataError("cannot fit normalization on an empty set");
  Normalization norm;
  norm.mean = sum / static_cast<double>(n);
  for (const Sample& s : samples)
    for (Real v : s.image.values) sq += (v - norm.mean) * (v - norm.mean);
  norm.std = std::sqrt(sq / static_cast<double>(n));
  if (!(norm.std > 1e-12)) norm.std = 1.0;
  return norm;
}

PreparedData prepare(std::span<const Sample> samples, const DatasetSplit& split,
                     std::size_t size, bool augment_train) {
  std::map<std::string, const Sample*> by_id;
  for (const Sample& s : samples) by_id.emplace(s.id, &s);
  auto gather = [&](const std::vector<std::string>& ids) {
    std::vector<Sample> out;
    out.reserve(ids.size());
    for (const std::string& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError("split references unknown sample '" + id + "'");
      out.push_back(resize_sample(*it->second, size));
    }
    return out;
  };
  PreparedData data;
  data.split = split;
  data.train = gather(split.train);
  data.val = gather(split.val);
  data.test = gather(split.test);
  if (augment_train) data.train = augment(data.train);
  data.norm = Normalization::fit(data.train);
  return data;
}

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices,
                 const Normalization& norm) {
  if (indices.empty()) throw ContractError("make_batch: empty batch");
  const Sample& first = samples[indices[0]];
  const std::size_t h = first.image.height, w = first.image.width;
  Batch b;
  b.images = Tensor({indices.size(), 1, h, w});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Sample& s = samples[indices[k]];
    if (s.image.height != h || s.image.width != w) {
      throw DimensionError("make_batch: sample " + s.id + " has a different size");
    }
    for (std::size_t i = 0; i < h * w; ++i)
      b.images[k * h * w + i] = (s.image.values[i] - norm.mean) / norm.std;
    b.masks.push_back(RoiMask::from_plane(s.mask.to_tensor()));
    b.labels.push_back(s.label);
    b.ids.push_back(s.id);
  }
  return b;
}

Batch make_batch(std::span<const Sample> samples, const Normalization& norm) {
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(samples, all, norm);
}

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Normal noise smoothed by a 3x3 box, unit-ish variance.
std::vector<Real> smooth_noise(Rng& rng, std::size_t s) {
  std::vector<Real> raw(s * s), out(s * s);
  for (Real& v : raw) v = rng.normal();
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      Real acc = 0;
      int n = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(s) || xx >= static_cast<long>(s)) continue;
          acc += raw[yy * s + xx];
          ++n;
        }
      out[y * s + x] = acc / n * 3.0;
    }
  return out;
}

Sample synth_one(std::uint64_t seed, int label, std::size_t index, std::size_t s) {
  Rng rng(mix(mix(seed) ^ mix(static_cast<std::uint64_t>(label) * 0x10000 + index)));
  const Real S = static_cast<Real>(s);
  const Real cx = rng.uniform(0.38, 0.62) * S, cy = rng.uniform(0.38, 0.62) * S;
  const Real a = rng.uniform(0.17, 0.27) * S, b = rng.uniform(0.13, 0.22) * S;
  const Real theta = rng.uniform(0.0, std::numbers::pi);
  const Real lesion = label == kMalignant ? rng.uniform(0.24, 0.34) : rng.uniform(0.10, 0.20);
  const Real background = rng.uniform(0.48, 0.62);
  const int spikes = 5 + static_cast<int>(rng.below(3));
  const Real amp = rng.uniform(0.28, 0.40);
  const Real phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const Real blur = 0.12;
  const std::vector<Real> coarse = smooth_noise(rng, s);
  std::vector<Real> fine(s * s);
  for (Real& v : fine) v = rng.normal();

  Sample out;
  char id[32];
  std::snprintf(id, sizeof id, "%s_%04zu", label_name(label).c_str(), index);
  out.id = id;
  out.label = label;
  out.image = Raster(s, s);
  out.mask = Raster(s, s);
  const Real c = std::cos(theta), sn = std::sin(theta);
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const Real dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      const Real u = (c * dx + sn * dy) / a, v = (-sn * dx + c * dy) / b;
      const Real rho = std::sqrt(u * u + v * v);
      Real boundary = 1.0;
      if (label == kMalignant) boundary += amp * std::sin(spikes * std::atan2(v, u) + phase);
      const bool inside = rho < boundary;
      Real weight;
      if (label == kMalignant) {
        weight = 1.0 / (1.0 + std::exp(-(boundary - rho) / blur));
      } else {
        weight = inside ? 1.0 : 0.0;
      }
      const std::size_t i = y * s + x;
      const Real bg = background * (1.0 + 0.12 * coarse[i] + 0.08 * fine[i]);
      const Real texture = label == kMalignant ? 0.25 * coarse[i] : 0.0;
      const Real fg = lesion * (1.0 + texture + 0.1 * fine[i]);
      out.image.values[i] = std::clamp(weight * fg + (1.0 - weight) * bg, 0.0, 1.0);
      out.mask.values[i] = inside ? 1.0 : 0.0;
    }
  return out;
}

}  // namespace

std::vector<Sample> synth_generate(std::uint64_t seed, std::size_t per_class, std::size_t size) {
  if (size < 16) throw ConfigError("synthetic image size must be at least 16");
  std::vector<Sample> out;
  out.reserve(2 * per_class);
  for (int label : {kBenign, kMalignant})
    for (std::size_t i = 0; i < per_class; ++i) out.push_back(synth_one(seed, label, i, size));
  sort_by_id(out);
  return out;
}

}  // namespace arvit
