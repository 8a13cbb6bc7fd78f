#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "arvit/core/errors.hpp"
#include "arvit/core/rng.hpp"
#include "arvit/eval/heatmap.hpp"
#include "arvit/eval/metrics.hpp"
#include "doctest.h"

using namespace arvit;
namespace fs = std::filesystem;

namespace {

double pairwise_auc(const std::vector<Real>& s, const std::vector<int>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return wins / pairs;
}

struct Fixture {
  std::vector<Real> scores;
  std::vector<int> labels;
};

Fixture random_fixture(Rng& rng, bool ties) {
  Fixture f;
  const std::size_t n = 2 + rng.below(49);
  for (std::size_t i = 0; i < n; ++i) {
    Real s = rng.uniform();
    if (ties) s = std::floor(s * 5.0) / 5.0;
    f.scores.push_back(s);
    f.labels.push_back(static_cast<int>(rng.below(2)));
  }
  f.labels[0] = 0;
  f.labels[1] = 1;
  return f;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Sample probe_sample(std::size_t size) {
  Sample s = synth_generate(5, 1, size)[1];
  return s;
}

}  // namespace

TEST_CASE("confusion counts and rates") {
  const std::vector<int> labels{1, 1, 0, 0, 0, 1};
  const std::vector<Real> preds{0.9, 0.4, 0.2, 0.7, 0.1, 0.8};
  const ConfusionCounts c = confusion(preds, labels);
  CHECK(c == ConfusionCounts{2, 2, 1, 1});
  CHECK(accuracy(c).value() == 4.0 / 6.0);
  CHECK(true_positive_rate(c).value() == 2.0 / 3.0);
  CHECK(true_negative_rate(c).value() == 2.0 / 3.0);

  const std::vector<Real> perfect{1, 1, 0, 0, 0, 1};
  const ConfusionCounts p = confusion(perfect, labels);
  CHECK(p.fp == 0);
  CHECK(p.fn == 0);
  CHECK(accuracy(p) == 1.0);
  CHECK(true_positive_rate(p) == 1.0);
  CHECK(true_negative_rate(p) == 1.0);

  const std::vector<Real> half(6, 0.5);
  const ConfusionCounts h = confusion(half, labels);
  CHECK(h.tp + h.fp == 6);

  const std::vector<int> negatives{0, 0, 0};
  const std::vector<Real> s3{0.1, 0.6, 0.2};
  const ConfusionCounts n = confusion(s3, negatives);
  CHECK_FALSE(true_positive_rate(n).has_value());
  CHECK(true_negative_rate(n).value() == 2.0 / 3.0);
  CHECK_FALSE(accuracy(ConfusionCounts{}).has_value());

  CHECK_THROWS_AS(confusion(std::vector<Real>{0.1}, labels), ContractError);
  CHECK_THROWS_AS(confusion(std::vector<Real>{0.1}, std::vector<int>{2}), InputError);

  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    ConfusionCounts r{rng.below(20) + 1, rng.below(20) + 1, rng.below(20), rng.below(20)};
    const Real acc = accuracy(r).value(), tpr = true_positive_rate(r).value(), tnr = true_negative_rate(r).value();
    for (Real v : {acc, tpr, tnr}) CHECK((v >= 0.0 && v <= 1.0));
    CHECK(acc >= std::min(tpr, tnr) - 1e-15);
    CHECK(acc <= std::max(tpr, tnr) + 1e-15);
  }
}

TEST_CASE("roc auc") {
  const std::vector<int> y{0, 0, 1, 1, 0, 1};
  CHECK(roc_auc(std::vector<Real>{0.1, 0.2, 0.8, 0.9, 0.3, 0.7}, y)->auc == 1.0);
  CHECK(roc_auc(std::vector<Real>(6, 0.4), y)->auc == 0.5);
  CHECK_FALSE(roc_auc(std::vector<Real>{0.1, 0.2}, std::vector<int>{1, 1}).has_value());
  CHECK_THROWS_AS(roc_auc(std::vector<Real>{NAN, 0.2}, std::vector<int>{0, 1}), InputError);

  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const Fixture f = random_fixture(rng, trial % 2 == 1);
    const auto curve = roc_auc(f.scores, f.labels);
    REQUIRE(curve.has_value());
    CHECK(std::abs(curve->auc - pairwise_auc(f.scores, f.labels)) <= 1e-12);
    CHECK(std::abs(trapezoid_area(curve->points) - curve->auc) <= 1e-9);
    CHECK(curve->points.front().fpr == 0.0);
    CHECK(curve->points.back().fpr == 1.0);
    CHECK(curve->points.back().tpr == 1.0);
    for (std::size_t i = 1; i < curve->points.size(); ++i) {
      CHECK(curve->points[i].fpr >= curve->points[i - 1].fpr);
      CHECK(curve->points[i].tpr >= curve->points[i - 1].tpr);
      CHECK(curve->points[i].threshold < curve->points[i - 1].threshold);
    }
  }

  for (int trial = 0; trial < 50; ++trial) {
    const Fixture f = random_fixture(rng, trial % 5 == 0);
    const Real base = roc_auc(f.scores, f.labels)->auc;
    std::vector<Real> ex, aff, flipped;
    std::vector<int> flipped_labels;
    for (std::size_t i = 0; i < f.scores.size(); ++i) {
      ex.push_back(std::exp(3.0 * f.scores[i]));
      aff.push_back(7.5 * f.scores[i] - 2.0);
      flipped.push_back(1.0 - f.scores[i]);
      flipped_labels.push_back(1 - f.labels[i]);
    }
    CHECK(roc_auc(ex, f.labels)->auc == doctest::Approx(base).epsilon(1e-12));
    CHECK(roc_auc(aff, f.labels)->auc == doctest::Approx(base).epsilon(1e-12));
    CHECK(roc_auc(flipped, flipped_labels)->auc == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("metrics report formats") {
  const std::vector<int> labels{1, 1, 0, 0, 0, 1};
  const std::vector<Real> preds{0.9, 0.4, 0.2, 0.7, 0.1, 0.8};
  const MetricsReport r = evaluate_scores("AResNet-ViT", preds, labels);
  CHECK(r.csv_row() == "AResNet-ViT,0.667,0.667,0.667,0.889");
  CHECK(r.csv_row(false) == "AResNet-ViT,0.667,0.667,0.667");
  const nlohmann::json j = r.to_json();
  CHECK(j["counts"]["tp"] == 2);
  CHECK(j["acc"].get<double>() == 4.0 / 6.0);
  CHECK(j["roc"].size() == r.roc.size());
  CHECK(j["roc"][0]["threshold"] == "inf");

  const MetricsReport single = evaluate_scores("x", std::vector<Real>{0.2, 0.9}, std::vector<int>{0, 0});
  CHECK(single.csv_row() == "x,0.500,NA,0.500,NA");
  CHECK(single.to_json()["auc"].is_null());

  // Column order and number formatting agree with the published tables.
  for (const auto& [file, with_auc] : {std::pair{"reference_architecture.csv", true},
                                       std::pair{"reference_attention.csv", false}}) {
    const auto lines = read_lines(fs::path(ARVIT_FIXTURE_DIR) / file);
    REQUIRE(lines.size() == 6);
    CHECK(lines[0] == metrics_csv_header(with_auc));
    for (std::size_t i = 1; i < lines.size(); ++i) {
      std::stringstream ss(lines[i]);
      std::string method, cell;
      std::getline(ss, method, ',');
      MetricsReport row;
      row.method = method;
      std::optional<Real>* slots[4] = {&row.acc, &row.tpr, &row.tnr, &row.auc};
      for (int k = 0; k < (with_auc ? 4 : 3); ++k) {
        std::getline(ss, cell, ',');
        *slots[k] = std::stod(cell);
      }
      CHECK(row.csv_row(with_auc) == lines[i]);
    }
  }
  const auto arch = read_lines(fs::path(ARVIT_FIXTURE_DIR) / "reference_architecture.csv");
  CHECK(arch[5] == "AResNet-ViT,0.889,0.861,0.896,0.925");
}

TEST_CASE("grad-cam") {
  ModelConfig cfg = ModelConfig::for_variant("aresnet-vit", Scale::kTiny);
  Model model = Model::build(cfg, 3);
  const Sample s = probe_sample(32);
  const Normalization norm{0.4, 0.2};
  const Heatmap h = compute_heatmap(model, s, norm, HeatmapMethod::kGradCam);
  CHECK(h.values.height == 32);
  CHECK(h.values.width == 32);
  CHECK(h.sample_id == s.id);
  CHECK_FALSE(h.constant);
  CHECK(*std::min_element(h.values.values.begin(), h.values.values.end()) == 0.0);
  CHECK(*std::max_element(h.values.values.begin(), h.values.values.end()) == 1.0);
  const Heatmap again = compute_heatmap(model, s, norm, HeatmapMethod::kGradCam);
  CHECK(again.values == h.values);

  // A 48x48 source is resized to the model input first.
  CHECK(compute_heatmap(model, probe_sample(48), norm, HeatmapMethod::kGradCam).values.height == 32);

  Model zero = Model::build(cfg, 3);
  for (std::size_t i = 0; i < zero.params().size(); ++i)
    if (zero.params().entry(i).trainable) zero.params().value(i) = Tensor::zeros(zero.params().value(i).shape());
  const Heatmap flat = compute_heatmap(zero, s, norm, HeatmapMethod::kGradCam);
  CHECK(flat.constant);
  for (Real v : flat.values.values) CHECK(v == 0.0);

  Model vit_only = Model::build(ModelConfig::for_variant("vit", Scale::kTiny), 1);
  CHECK_THROWS_AS(compute_heatmap(vit_only, s, norm, HeatmapMethod::kGradCam), ConfigError);
}

TEST_CASE("grad-cam respects a gated last stage") {
  ModelConfig cfg = ModelConfig::for_variant("resnet18", Scale::kTiny);
  cfg.cnn->layout = {AttentionKind::kNone, AttentionKind::kNone, AttentionKind::kNone, AttentionKind::kRoiMask};
  Model model = Model::build(cfg, 12);
  REQUIRE(cfg.cnn->stage_resolutions()[3] == 4);
  Sample s = probe_sample(32);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) s.mask.at(y, x) = x < 16 ? 0.0 : 1.0;
  const Heatmap h = compute_heatmap(model, s, Normalization{0.4, 0.2}, HeatmapMethod::kGradCam);
  REQUIRE_FALSE(h.constant);
  // Stage-4 cells in columns 0 and 1 are gated to zero; output columns whose
  // bilinear stencil only touches those cells stay exactly zero.
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 12; ++x) CHECK(h.values.at(y, x) == 0.0);
  Real right = 0.0;
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 16; x < 32; ++x) right += h.values.at(y, x);
  CHECK(right > 0.0);
}

TEST_CASE("attention rollout") {
  ModelConfig cfg = ModelConfig::for_variant("vit", Scale::kTiny);
  cfg.vit->depth = 1;
  Model model = Model::build(cfg, 6);
  const Sample s = probe_sample(32);
  const Normalization norm{0.4, 0.2};
  const Heatmap h = compute_heatmap(model, s, norm, HeatmapMethod::kAttentionRollout);
  CHECK(h.values.height == 32);
  CHECK_FALSE(h.constant);

  // One block: the class-token row of 0.5 (mean attention) + 0.5 I, patch part.
  const Batch b = make_batch(std::vector<Sample>{s}, norm);
  Tape tape;
  ForwardContext ctx(tape, model.params(), Mode::kEval);
  const Model::Output out = model.forward(ctx, tape.constant(b.images), b.masks);
  const Tensor& att = out.vit->attention[0].value();
  const std::size_t heads = att.dim(1), t = att.dim(2);
  Raster grid(4, 4);
  for (std::size_t p = 0; p < 16; ++p)
    for (std::size_t hd = 0; hd < heads; ++hd) grid.values[p] += 0.5 * att[hd * t * t + p + 1] / static_cast<Real>(heads);
  Raster expected = resize_bilinear(grid, 32, 32);
  normalize_unit(expected);
  for (std::size_t i = 0; i < expected.values.size(); ++i)
    CHECK(h.values.values[i] == doctest::Approx(expected.values[i]).epsilon(1e-12));

  Model cnn_only = Model::build(ModelConfig::for_variant("resnet18", Scale::kTiny), 1);
  CHECK_THROWS_AS(compute_heatmap(cnn_only, s, norm, HeatmapMethod::kAttentionRollout), ConfigError);
  CHECK(parse_heatmap_method("attention-rollout") == HeatmapMethod::kAttentionRollout);
  CHECK_THROWS_AS(parse_heatmap_method("saliency"), ConfigError);
}

TEST_CASE("heatmap png export") {
  const fs::path dir = fs::temp_directory_path() / ("arvit_heat_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  Model model = Model::build(ModelConfig::for_variant("aresnet-vit", Scale::kTiny), 3);
  const Sample s = probe_sample(48);
  const Heatmap h = compute_heatmap(model, s, Normalization{0.4, 0.2}, HeatmapMethod::kGradCam);
  write_heatmap_png(dir / "a.png", h, 48, 48);
  write_overlay_png(dir / "a.overlay.png", h, s.image);
  write_heatmap_png(dir / "b.png", h, 48, 48);
  write_overlay_png(dir / "b.overlay.png", h, s.image);
  const Raster gray = read_png_gray(dir / "a.png");
  CHECK(gray.height == 48);
  CHECK(gray.width == 48);
  CHECK(read_png_gray(dir / "a.overlay.png").width == 48);
  CHECK(file_bytes(dir / "a.png") == file_bytes(dir / "b.png"));
  CHECK(file_bytes(dir / "a.overlay.png") == file_bytes(dir / "b.overlay.png"));
  fs::remove_all(dir);
}
