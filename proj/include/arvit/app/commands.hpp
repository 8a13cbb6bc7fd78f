#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "arvit/app/experiment.hpp"
#include "arvit/eval/heatmap.hpp"
#include "arvit/eval/metrics.hpp"
#include "arvit/train/trainer.hpp"

namespace arvit {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDivergence = 4;

int exit_code_for(const std::exception& e);

struct TrainOutcome {
  FitResult fit;
  MetricsReport test;
  DatasetSplit split;
};

// Writes into config.output_dir:
//   config.resolved.json  split.json  load_report.json  train_log.csv
//   checkpoint.arvt  metrics.json  metrics.csv
TrainOutcome cmd_train(const ExperimentConfig& config, std::ostream& log);

// Re-creates the split from the checkpoint's split seed, scores the chosen
// part ("train", "val", "test" or "all") with the stored normalization and
// writes metrics.json / metrics.csv to out_dir. Prints the CSV to `out`.
MetricsReport cmd_evaluate(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                           const std::string& part, const std::filesystem::path& out_dir,
                           std::ostream& out);

enum class Suite { kAttention, kArchitecture };
Suite parse_suite(const std::string& name);
std::string to_string(Suite suite);
const std::vector<std::string>& suite_variants(Suite suite);

struct AblationRow {
  std::string variant;
  std::optional<MetricsReport> report;
  std::string error;
};

// Trains every variant of the suite on the shared data and split, each in
// output_dir/<variant>/, then writes output_dir/<suite>.csv (rows in suite
// order) and output_dir/split.json. A failing variant becomes an NA row and
// the suite continues.
std::vector<AblationRow> cmd_ablate(Suite suite, const ExperimentConfig& config, std::ostream& log);

// One `<id>.<method>.png` and one `<id>.<method>.overlay.png` per id, at the
// source image size. Unknown ids throw DataError listing all of them.
std::vector<std::filesystem::path> cmd_heatmap(const ExperimentConfig& config,
                                               const std::filesystem::path& checkpoint,
                                               const std::vector<std::string>& ids,
                                               HeatmapMethod method,
                                               const std::filesystem::path& out_dir);

// Writes a synthetic fixture directory; returns the sample count.
std::size_t cmd_synth(std::uint64_t seed, std::size_t per_class, std::size_t size,
                      const std::filesystem::path& out_dir);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace arvit
