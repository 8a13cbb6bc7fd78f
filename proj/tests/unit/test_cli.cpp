#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "arvit/app/commands.hpp"
#include "arvit/train/checkpoint.hpp"
#include "doctest.h"

using namespace arvit;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / ("arvit_cli_" + std::to_string(::getpid()));

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Run cli(const std::string& args) {
  fs::create_directories(kRoot);
  const fs::path out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
  const std::string cmd = std::string("\"") + ARVIT_CLI_PATH + "\" " + args + " > \"" + out.string() +
                          "\" 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

fs::path write_config(const std::string& name, const nlohmann::json& j) {
  fs::create_directories(kRoot);
  const fs::path p = kRoot / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

nlohmann::json small_experiment(const std::string& out) {
  return {{"dataset", {{"source", "synth"}, {"seed", 3}, {"per_class", 8}, {"size", 24}}},
          {"model",
           {{"variant", "aresnet-vit"},
            {"scale", "tiny"},
            {"cnn", {{"input_size", 16}, {"stem_channels", 4}, {"widths", {4, 8, 8, 8}}, {"ca_reduction", 2}}},
            {"vit", {{"input_size", 16}, {"embed_dim", 16}, {"heads", 2}, {"depth", 1}}},
            {"head_hidden", 8}}},
          {"train", {{"max_epochs", 2}, {"patience", 2}}},
          {"seed", 5},
          {"output_dir", (kRoot / out).string()}};
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> fa, fb;
  for (const auto& e : fs::recursive_directory_iterator(a)) fa.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b)) fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  if (fa != fb) return false;
  for (const auto& rel : fa)
    if (fs::is_regular_file(a / rel) && slurp(a / rel) != slurp(b / rel)) return false;
  return true;
}

}  // namespace

TEST_CASE("experiment config") {
  const ExperimentConfig c = ExperimentConfig::from_json(small_experiment("cfg"));
  const nlohmann::json echo = c.to_json();
  for (const char* key : {"dataset", "data", "model", "train", "seed", "output_dir"}) CHECK(echo.contains(key));
  CHECK(echo["train"]["adam"]["beta2"] == 0.999);
  CHECK(echo["data"]["augment"] == true);
  CHECK(echo["train"]["shuffle_seed"] == 5);
  CHECK(echo["model"]["cnn"]["layout"] == nlohmann::json{"roi_mask", "roi_mask", "channel", "channel"});
  CHECK(ExperimentConfig::from_json(echo).to_json() == echo);

  auto expect_error = [](nlohmann::json j, const std::string& fragment) {
    try {
      ExperimentConfig::from_json(j);
      FAIL("expected ConfigError for " << fragment);
    } catch (const ConfigError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
    }
  };
  nlohmann::json bad = small_experiment("cfg");
  bad["train"]["adam"] = {{"momentum", 0.9}};
  expect_error(bad, "train.adam.momentum");
  bad = small_experiment("cfg");
  bad["model"]["cnn"]["widths"] = {4, 8, "x", 8};
  expect_error(bad, "model.cnn.widths");
  bad = small_experiment("cfg");
  bad["dataset"]["source"] = "ftp";
  expect_error(bad, "dataset.source");
  bad = small_experiment("cfg");
  bad["learning_rate"] = 1;
  expect_error(bad, "learning_rate");
  bad = small_experiment("cfg");
  bad["model"]["variant"] = "densenet";
  expect_error(bad, "model.variant");

  ExperimentConfig seeded = c;
  seeded.set_seed(77);
  CHECK(seeded.train.shuffle_seed == 77);
  nlohmann::json pinned = small_experiment("cfg");
  pinned["train"]["shuffle_seed"] = 9;
  ExperimentConfig p = ExperimentConfig::from_json(pinned);
  p.set_seed(77);
  CHECK(p.train.shuffle_seed == 9);

  const ExperimentConfig n3 = c.with_variant("network3");
  CHECK(n3.model.cnn->layout == attention_preset("network3"));
  CHECK(n3.model.cnn->widths == c.model.cnn->widths);
  CHECK_FALSE(n3.model.vit.has_value());
  const ExperimentConfig v = c.with_variant("vit");
  CHECK_FALSE(v.model.cnn.has_value());
  CHECK(v.model.vit->embed_dim == 16);
  const ExperimentConfig from_echo = ExperimentConfig::from_json(echo).with_variant("resnet18");
  CHECK(from_echo.model.cnn->layout == attention_preset("network1"));
  CHECK(display_name("resnet-vit") == "ResNet-ViT");
  CHECK(display_name("network2") == "network2");
}

TEST_CASE("exit code table") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(DataError("x")) == 3);
  CHECK(exit_code_for(DivergenceError(1, {"a"}, NAN)) == 4);
  CHECK(exit_code_for(CheckpointError(CheckpointErrorKind::kCorrupt, "x")) == 3);
  CHECK(exit_code_for(CheckpointError::mismatch(CheckpointErrorKind::kConfigMismatch, "model.variant", "x")) == 2);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("synth command") {
  const fs::path a = kRoot / "synth_a", b = kRoot / "synth_b";
  Run r = cli("synth --seed 7 --per-class 32 --size 64 --out \"" + a.string() + "\"");
  REQUIRE(r.code == 0);
  CHECK(cli("synth --seed 7 --per-class 32 --size 64 --out \"" + b.string() + "\"").code == 0);
  const LoadResult loaded = load_dataset(a);
  CHECK(loaded.samples.size() == 64);
  CHECK(loaded.report.benign == 32);
  CHECK(loaded.report.malignant == 32);
  CHECK(loaded.samples[0].image.height == 64);
  CHECK(lines_of(slurp(a / "labels.csv")).size() == 65);
  CHECK(same_tree(a, b));

  CHECK(cli("synth --out /proc/arvit_forbidden/x").code == 3);
  CHECK(cli("synth --per-class 2 --size 8 --out \"" + (kRoot / "tiny").string() + "\"").code == 2);
  CHECK(cli("synth").code == 2);
  CHECK(cli("frobnicate").code == 2);
}

TEST_CASE("train, evaluate and heatmap commands") {
  const fs::path cfg = write_config("exp.json", small_experiment("run"));
  Run r = cli("--config \"" + cfg.string() + "\" train");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const fs::path run = kRoot / "run";
  for (const char* f : {"checkpoint.arvt", "config.resolved.json", "train_log.csv", "metrics.json",
                        "metrics.csv", "split.json", "load_report.json"})
    CHECK_MESSAGE(fs::exists(run / f), f);
  CHECK(lines_of(slurp(run / "train_log.csv"))[0] == "epoch,train_loss,val_loss,seconds");

  r = cli("evaluate --checkpoint \"" + (run / "checkpoint.arvt").string() + "\" --out \"" +
          (kRoot / "eval").string() + "\"");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto rows = lines_of(slurp(kRoot / "eval" / "metrics.csv"));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == "method,acc,tpr,tnr,auc");
  CHECK(rows[1].rfind("AResNet-ViT,", 0) == 0);
  CHECK(rows[1].find("NA") == std::string::npos);
  CHECK(r.out.find("method,acc,tpr,tnr,auc") != std::string::npos);
  const auto metrics = nlohmann::json::parse(slurp(kRoot / "eval" / "metrics.json"));
  for (const char* k : {"acc", "tpr", "tnr", "auc"}) CHECK(metrics[k].is_number());

  nlohmann::json other = small_experiment("run");
  other["model"]["variant"] = "resnet-vit";
  const fs::path other_cfg = write_config("other.json", other);
  r = cli("--config \"" + other_cfg.string() + "\" evaluate --checkpoint \"" + (run / "checkpoint.arvt").string() + "\"");
  CHECK(r.code == 2);
  CHECK(r.err.find("model.cnn.layout") != std::string::npos);

  const std::string ids = "benign_0001 malignant_0000 malignant_0003";
  const fs::path h1 = kRoot / "heat1", h2 = kRoot / "heat2";
  r = cli("heatmap --checkpoint \"" + (run / "checkpoint.arvt").string() + "\" --ids " + ids + " --out \"" + h1.string() + "\"");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(cli("heatmap --checkpoint \"" + (run / "checkpoint.arvt").string() + "\" --ids " + ids + " --out \"" + h2.string() + "\"").code == 0);
  std::size_t pngs = 0;
  for (const auto& e : fs::directory_iterator(h1)) pngs += e.path().extension() == ".png";
  CHECK(pngs == 6);
  CHECK(fs::exists(h1 / "malignant_0003.grad-cam.png"));
  CHECK(fs::exists(h1 / "malignant_0003.grad-cam.overlay.png"));
  CHECK(read_png_gray(h1 / "benign_0001.grad-cam.png").height == 24);
  CHECK(read_png_gray(h1 / "benign_0001.grad-cam.overlay.png").width == 24);
  CHECK(same_tree(h1, h2));
  r = cli("heatmap --checkpoint \"" + (run / "checkpoint.arvt").string() + "\" --method attention-rollout --ids benign_0001 --out \"" + h1.string() + "\"");
  CHECK(r.code == 0);
  CHECK(fs::exists(h1 / "benign_0001.attention-rollout.png"));
  r = cli("heatmap --checkpoint \"" + (run / "checkpoint.arvt").string() + "\" --ids benign_0001 ghost_1 ghost_2");
  CHECK(r.code == 3);
  CHECK(r.err.find("ghost_1, ghost_2") != std::string::npos);

  // The resolved echo reproduces the run bitwise.
  r = cli("--config \"" + (run / "config.resolved.json").string() + "\" --out \"" + (kRoot / "rerun").string() + "\" train");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(slurp(kRoot / "rerun" / "checkpoint.arvt") == slurp(run / "checkpoint.arvt"));
  CHECK(slurp(kRoot / "rerun" / "metrics.csv") == slurp(run / "metrics.csv"));
  CHECK(slurp(kRoot / "rerun" / "split.json") == slurp(run / "split.json"));

  // Corrupted checkpoint: typed error, data exit code.
  std::string bytes = slurp(run / "checkpoint.arvt");
  std::ofstream(kRoot / "broken.arvt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  r = cli("--config \"" + cfg.string() + "\" evaluate --checkpoint \"" + (kRoot / "broken.arvt").string() + "\"");
  CHECK(r.code == 3);
  CHECK(r.err.find("corrupt") != std::string::npos);
}

TEST_CASE("fault injection exit codes") {
  std::ofstream(kRoot / "malformed.json") << "{\"seed\": 1, \"train\": {\"batch_size\": \"four\"}}";
  Run r = cli("--config \"" + (kRoot / "malformed.json").string() + "\" train");
  CHECK(r.code == 2);
  CHECK(r.err.find("train.batch_size") != std::string::npos);

  std::ofstream(kRoot / "notjson.json") << "{seed: ";
  CHECK(cli("--config \"" + (kRoot / "notjson.json").string() + "\" train").code == 2);
  CHECK(cli("--config \"" + (kRoot / "absent.json").string() + "\" train").code == 2);

  nlohmann::json missing = small_experiment("missing");
  missing["dataset"] = {{"source", "path"}, {"path", (kRoot / "no_such_dataset").string()}};
  r = cli("--config \"" + write_config("missing.json", missing).string() + "\" train");
  CHECK(r.code == 3);

  nlohmann::json diverge = small_experiment("diverge");
  diverge["train"]["adam"] = {{"lr", 1e300}};
  r = cli("--config \"" + write_config("diverge.json", diverge).string() + "\" train");
  CHECK(r.code == 4);
  CHECK(r.err.find("diverged") != std::string::npos);

  CHECK(cli("--config \"" + write_config("s.json", small_experiment("s")).string() + "\" ablate everything").code == 2);
}

TEST_CASE("ablation suites") {
  nlohmann::json j = small_experiment("ablate");
  j["train"]["max_epochs"] = 1;
  const ExperimentConfig c = ExperimentConfig::from_json(j);
  std::ostringstream log;
  const auto rows = cmd_ablate(Suite::kAttention, c, log);
  REQUIRE(rows.size() == 5);
  const auto csv = lines_of(slurp(kRoot / "ablate" / "attention.csv"));
  REQUIRE(csv.size() == 6);
  CHECK(csv[0] == "method,acc,tpr,tnr");
  for (int i = 1; i <= 5; ++i) {
    CHECK(csv[i].rfind("network" + std::to_string(i) + ",", 0) == 0);
    CHECK(slurp(kRoot / "ablate" / ("network" + std::to_string(i)) / "split.json") ==
          slurp(kRoot / "ablate" / "split.json"));
    CHECK(rows[i - 1].report.has_value());
  }
  const auto cfg3 = nlohmann::json::parse(slurp(kRoot / "ablate" / "network3" / "config.resolved.json"));
  CHECK(cfg3["model"]["cnn"]["layout"] == nlohmann::json{"none", "none", "roi_mask", "roi_mask"});

  const Run r = cli("--config \"" + write_config("arch.json", j).string() + "\" --out \"" +
                    (kRoot / "arch").string() + "\" ablate architecture");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto arch = lines_of(slurp(kRoot / "arch" / "architecture.csv"));
  REQUIRE(arch.size() == 6);
  CHECK(arch[0] == "method,acc,tpr,tnr,auc");
  const char* names[] = {"ResNet18", "ViT", "AResNet", "ResNet-ViT", "AResNet-ViT"};
  for (int i = 0; i < 5; ++i) CHECK(arch[i + 1].rfind(std::string(names[i]) + ",", 0) == 0);
  fs::remove_all(kRoot);
}
