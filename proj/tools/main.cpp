#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "arvit/app/commands.hpp"
#include "arvit/core/parallel.hpp"

namespace fs = std::filesystem;
using namespace arvit;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t threads = 1;
};

ExperimentConfig resolve(const Globals& g, const fs::path& fallback_dir) {
  fs::path file = g.config;
  if (file.empty()) {
    file = fallback_dir / "config.resolved.json";
    if (!fs::exists(file)) throw ConfigError("--config is required (no config.resolved.json in " + fallback_dir.string() + ")");
  }
  ExperimentConfig c = ExperimentConfig::load(file);
  if (g.seed) c.set_seed(*g.seed);
  if (!g.out.empty()) c.output_dir = g.out;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AResNet-ViT breast ultrasound classifier"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "experiment config (JSON)");
  app.add_option("--seed", g.seed, "override the experiment seed");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", g.threads, "worker threads for tensor ops")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "train one model and evaluate it on the test split");

  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a split");
  std::string checkpoint, part = "test";
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  evaluate->add_option("--split", part, "train, val, test or all");

  auto* ablate = app.add_subcommand("ablate", "run an ablation suite");
  std::string suite;
  ablate->add_option("suite", suite, "attention or architecture")->required();

  auto* heatmap = app.add_subcommand("heatmap", "export heatmaps for samples");
  std::vector<std::string> ids;
  std::string method = "grad-cam";
  heatmap->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  heatmap->add_option("--ids", ids, "sample ids")->required();
  heatmap->add_option("--method", method, "grad-cam or attention-rollout");

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset fixture");
  std::size_t per_class = 32, size = 64;
  synth->add_option("--per-class", per_class, "samples per class");
  synth->add_option("--size", size, "image side length");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    set_num_threads(g.threads);
    if (train->parsed()) {
      if (g.config.empty()) throw ConfigError("train needs --config");
      const ExperimentConfig c = resolve(g, ".");
      cmd_train(c, std::cout);
    } else if (evaluate->parsed()) {
      const fs::path ckpt = checkpoint;
      const ExperimentConfig c = resolve(g, ckpt.parent_path());
      const fs::path out = g.out.empty() ? ckpt.parent_path() / "evaluation" : fs::path(g.out);
      cmd_evaluate(c, ckpt, part, out, std::cout);
    } else if (ablate->parsed()) {
      if (g.config.empty()) throw ConfigError("ablate needs --config");
      const Suite s = parse_suite(suite);
      const ExperimentConfig c = resolve(g, ".");
      const auto rows = cmd_ablate(s, c, std::cout);
      const bool failed = std::any_of(rows.begin(), rows.end(), [](const AblationRow& r) { return !r.report; });
      std::cout << "wrote " << (fs::path(c.output_dir) / (to_string(s) + ".csv")).string() << "\n";
      return failed ? kExitFailure : kExitOk;
    } else if (heatmap->parsed()) {
      const fs::path ckpt = checkpoint;
      const HeatmapMethod m = parse_heatmap_method(method);
      const ExperimentConfig c = resolve(g, ckpt.parent_path());
      const fs::path out = g.out.empty() ? ckpt.parent_path() / "heatmaps" : fs::path(g.out);
      for (const fs::path& p : cmd_heatmap(c, ckpt, ids, m, out)) std::cout << p.string() << "\n";
    } else if (synth->parsed()) {
      if (g.out.empty()) throw ConfigError("synth needs --out");
      const std::size_t n = cmd_synth(g.seed.value_or(7), per_class, size, g.out);
      std::cout << "wrote " << n << " samples to " << g.out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitOk;
}
