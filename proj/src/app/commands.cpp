#include "arvit/app/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "arvit/train/checkpoint.hpp"

namespace arvit {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (const auto* c = dynamic_cast<const CheckpointError*>(&e)) {
    return c->kind() == CheckpointErrorKind::kConfigMismatch ||
                   c->kind() == CheckpointErrorKind::kTensorMismatch
               ? kExitConfig
               : kExitData;
  }
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const InputError*>(&e) ||
      dynamic_cast<const fs::filesystem_error*>(&e)) {
    return kExitData;
  }
  if (dynamic_cast<const NumericError*>(&e)) return kExitDivergence;
  return kExitFailure;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

namespace {

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string metrics_csv(const MetricsReport& r, bool with_auc = true) {
  return metrics_csv_header(with_auc) + "\n" + r.csv_row(with_auc) + "\n";
}

MetricsReport score(Model& model, std::span<const Sample> samples, const Normalization& norm,
                    const std::string& method) {
  const std::vector<Prediction> preds = predict_samples(model, samples, norm);
  std::vector<Real> probs;
  std::vector<int> labels;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    probs.push_back(preds[i].probability);
    labels.push_back(samples[i].label);
  }
  return evaluate_scores(method, probs, labels, model.config().threshold);
}

TrainOutcome train_on(const ExperimentConfig& config, std::span<const Sample> samples,
                      const LoadReport& report, const DatasetSplit& split, std::ostream& log) {
  const fs::path out = config.output_dir;
  make_dir(out);
  write_text(out / "config.resolved.json", config.to_json().dump(2) + "\n");
  write_text(out / "load_report.json", report.to_json().dump(2) + "\n");
  write_text(out / "split.json", split.to_json().dump(2) + "\n");

  const PreparedData data = prepare(samples, split, config.model.input_size(), config.data.augment);
  Model model = Model::build(config.model, config.seed);
  Adam adam(model.params(), config.train.adam);
  const std::string name = display_name(config.model.variant);
  log << name << ": " << data.train.size() << " train / " << data.val.size() << " val / "
      << data.test.size() << " test samples\n";

  TrainOutcome outcome;
  outcome.split = split;
  outcome.fit = fit(model, adam, data.train, data.val, data.norm, config.train,
                    [&](const EpochRecord& r) {
                      char line[128];
                      std::snprintf(line, sizeof line, "  epoch %3zu  train %.5f  val %.5f  %.1fs\n",
                                    r.epoch, r.train_loss, r.val_loss, r.seconds);
                      log << line << std::flush;
                      return true;
                    });
  log << "  stopped (" << outcome.fit.stop_reason << "), best epoch " << outcome.fit.best_epoch << "\n";

  std::ostringstream csv;
  write_training_log(csv, outcome.fit.log);
  write_text(out / "train_log.csv", csv.str());

  outcome.test = score(model, data.test, data.norm, name);
  nlohmann::json metrics = outcome.test.to_json();
  metrics["best_epoch"] = outcome.fit.best_epoch;
  metrics["best_val_loss"] = outcome.fit.best_val_loss;
  metrics["stop_reason"] = outcome.fit.stop_reason;
  save_checkpoint(out / "checkpoint.arvt",
                  make_checkpoint(model, config.seed, &adam, split.seed, data.norm, metrics));
  write_text(out / "metrics.json", metrics.dump(2) + "\n");
  write_text(out / "metrics.csv", metrics_csv(outcome.test));
  log << "  " << outcome.test.csv_row() << "\n";
  return outcome;
}

}  // namespace

TrainOutcome cmd_train(const ExperimentConfig& config, std::ostream& log) {
  const LoadResult data = load_samples(config.dataset);
  const DatasetSplit split = split_dataset(data.samples, config.seed, config.data.test_fraction,
                                           config.data.val_fraction);
  return train_on(config, data.samples, data.report, split, log);
}

MetricsReport cmd_evaluate(const ExperimentConfig& config, const fs::path& checkpoint,
                           const std::string& part, const fs::path& out_dir, std::ostream& out) {
  if (part != "train" && part != "val" && part != "test" && part != "all") {
    throw ConfigError("evaluate: unknown split part '" + part + "' (expected train, val, test or all)");
  }
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  check_config(ckpt, config.model);
  Model model = restore_model(ckpt);
  const LoadResult data = load_samples(config.dataset);
  const DatasetSplit split = split_dataset(data.samples, ckpt.split_seed, config.data.test_fraction,
                                           config.data.val_fraction);
  const PreparedData prepared = prepare(data.samples, split, config.model.input_size(), false);
  std::vector<Sample> chosen;
  if (part == "train" || part == "all") chosen.insert(chosen.end(), prepared.train.begin(), prepared.train.end());
  if (part == "val" || part == "all") chosen.insert(chosen.end(), prepared.val.begin(), prepared.val.end());
  if (part == "test" || part == "all") chosen.insert(chosen.end(), prepared.test.begin(), prepared.test.end());

  const MetricsReport report = score(model, chosen, ckpt.norm, display_name(config.model.variant));
  make_dir(out_dir);
  nlohmann::json j = report.to_json();
  j["part"] = part;
  j["checkpoint"] = checkpoint.string();
  write_text(out_dir / "metrics.json", j.dump(2) + "\n");
  write_text(out_dir / "metrics.csv", metrics_csv(report));
  out << metrics_csv(report);
  return report;
}

Suite parse_suite(const std::string& name) {
  if (name == "attention") return Suite::kAttention;
  if (name == "architecture") return Suite::kArchitecture;
  throw ConfigError("unknown ablation suite '" + name + "' (expected attention or architecture)");
}

std::string to_string(Suite suite) { return suite == Suite::kAttention ? "attention" : "architecture"; }

const std::vector<std::string>& suite_variants(Suite suite) {
  static const std::vector<std::string> attention{"network1", "network2", "network3", "network4", "network5"};
  static const std::vector<std::string> architecture{"resnet18", "vit", "aresnet", "resnet-vit", "aresnet-vit"};
  return suite == Suite::kAttention ? attention : architecture;
}

std::vector<AblationRow> cmd_ablate(Suite suite, const ExperimentConfig& config, std::ostream& log) {
  const fs::path out = config.output_dir;
  make_dir(out);
  write_text(out / "config.resolved.json", config.to_json().dump(2) + "\n");
  const LoadResult data = load_samples(config.dataset);
  const DatasetSplit split = split_dataset(data.samples, config.seed, config.data.test_fraction,
                                           config.data.val_fraction);
  const std::string manifest = split.to_json().dump(2) + "\n";
  write_text(out / "split.json", manifest);

  const bool with_auc = suite == Suite::kArchitecture;
  std::vector<AblationRow> rows;
  std::string csv = metrics_csv_header(with_auc) + "\n";
  nlohmann::json errors = nlohmann::json::object();
  for (const std::string& variant : suite_variants(suite)) {
    AblationRow row;
    row.variant = variant;
    try {
      ExperimentConfig vc = config.with_variant(variant);
      vc.output_dir = (out / variant).string();
      row.report = train_on(vc, data.samples, data.report, split, log).test;
      if (read_text(out / variant / "split.json") != manifest) {
        throw DataError("split manifest of " + variant + " differs from the suite manifest");
      }
    } catch (const std::exception& e) {
      row.report.reset();
      row.error = e.what();
      errors[variant] = row.error;
      log << "variant " << variant << " failed: " << e.what() << "\n";
    }
    if (row.report) {
      MetricsReport named = *row.report;
      named.method = display_name(variant);
      csv += named.csv_row(with_auc) + "\n";
    } else {
      MetricsReport empty;
      empty.method = display_name(variant);
      csv += empty.csv_row(with_auc) + "\n";
    }
    rows.push_back(std::move(row));
  }
  write_text(out / (to_string(suite) + ".csv"), csv);
  if (!errors.empty()) write_text(out / (to_string(suite) + ".errors.json"), errors.dump(2) + "\n");
  return rows;
}

std::vector<fs::path> cmd_heatmap(const ExperimentConfig& config, const fs::path& checkpoint,
                                  const std::vector<std::string>& ids, HeatmapMethod method,
                                  const fs::path& out_dir) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  check_config(ckpt, config.model);
  Model model = restore_model(ckpt);
  const LoadResult data = load_samples(config.dataset);

  std::vector<const Sample*> found;
  std::string missing;
  for (const std::string& id : ids) {
    const auto it = std::find_if(data.samples.begin(), data.samples.end(),
                                 [&](const Sample& s) { return s.id == id; });
    if (it == data.samples.end()) {
      missing += (missing.empty() ? "" : ", ") + id;
    } else {
      found.push_back(&*it);
    }
  }
  if (!missing.empty()) throw DataError("unknown sample ids: " + missing);

  make_dir(out_dir);
  std::vector<fs::path> written;
  const std::string tag = to_string(method);
  for (const Sample* s : found) {
    const Heatmap h = compute_heatmap(model, *s, ckpt.norm, method);
    const fs::path map = out_dir / (s->id + "." + tag + ".png");
    const fs::path overlay = out_dir / (s->id + "." + tag + ".overlay.png");
    write_heatmap_png(map, h, s->image.height, s->image.width);
    write_overlay_png(overlay, h, s->image);
    written.push_back(map);
    written.push_back(overlay);
  }
  return written;
}

std::size_t cmd_synth(std::uint64_t seed, std::size_t per_class, std::size_t size, const fs::path& out_dir) {
  const std::vector<Sample> samples = synth_generate(seed, per_class, size);
  write_fixture(out_dir, samples);
  return samples.size();
}

}  // namespace arvit
