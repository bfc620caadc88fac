#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

#include "cap/cli.hpp"
#include "cap/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  Run r;
  r.code = cap::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cap_test_cli" / name;
  fs::remove_all(dir);
  return dir;
}

std::size_t lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

fs::path small_dataset(const std::string& name) {
  const fs::path dir = scratch(name);
  const Run r = cli({"generate", "--n", "300", "--q", "4", "--d", "6", "--imbalance", "4", "--seed", "1", "--p", "0.1",
                     "--out", dir.string()});
  REQUIRE(r.code == 0);
  return dir;
}

}  // namespace

TEST_CASE("generate writes the dataset, split and manifest") {
  const fs::path dir = scratch("gen");
  const Run r = cli({"generate", "--n", "1000", "--q", "10", "--d", "32", "--imbalance", "10", "--seed", "1", "--p",
                     "0.05", "--out", dir.string()});
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "dataset.csv"));
  CHECK(fs::exists(dir / "split.json"));
  const json manifest = json::parse(cap::read_text_file(dir / "manifest.json"));
  CHECK(manifest["command"] == "generate");
  CHECK(manifest["seed"] == 1);
  const json split = json::parse(cap::read_text_file(dir / "split.json"));
  CHECK(split["test"].size() == 200);
  CHECK(split["labeled"].size() == 40);
}

TEST_CASE("generate is byte-reproducible") {
  const fs::path a = scratch("gen_a");
  const fs::path b = scratch("gen_b");
  for (const auto& dir : {a, b})
    CHECK(cli({"generate", "--n", "200", "--q", "3", "--seed", "4", "--out", dir.string()}).code == 0);
  CHECK(cap::read_text_file(a / "dataset.csv") == cap::read_text_file(b / "dataset.csv"));
  CHECK(cap::read_text_file(a / "split.json") == cap::read_text_file(b / "split.json"));
}

TEST_CASE("usage errors exit with 2") {
  CHECK(cli({"generate", "--n", "100"}).code == 2);
  CHECK(cli({}).code == 2);
  CHECK(cli({"fly"}).code == 2);
  CHECK(cli({"generate", "--n", "100", "--noise", "0.7", "--out", scratch("bad").string()}).code == 2);
  CHECK(cli({"generate", "--n", "10", "--p", "0.01", "--out", scratch("bad").string()}).code == 2);
  CHECK(cli({"train", "--data", scratch("missing").string(), "--out", scratch("x").string()}).code == 2);
}

TEST_CASE("train writes a self-describing run directory") {
  const fs::path data = small_dataset("train_data");
  const fs::path cfg = scratch("train_cfg") / "cfg.json";
  cap::write_text_file(cfg, R"({"warmup_epochs": 2, "total_epochs": 5, "batch_size": 16, "strategy": "cap"})");
  const fs::path out = scratch("train_out");
  const Run r = cli({"train", "--config", cfg.string(), "--data", data.string(), "--out", out.string(), "--dump-pseudo"});
  REQUIRE(r.code == 0);
  CHECK(lines(cap::read_text_file(out / "history.csv")) == 6);
  for (const char* f : {"config.json", "checkpoint_warmup.json", "checkpoint.json", "thresholds.csv",
                        "class_distribution.csv", "summary.json", "manifest.json", "pseudo_labels/round_3.csv"})
    CHECK(fs::exists(out / f));
  const json summary = json::parse(cap::read_text_file(out / "summary.json"));
  CHECK(summary["oracle_reads_during_assignment"] == 0);
  CHECK(summary["epochs"] == 5);
  const json manifest = json::parse(cap::read_text_file(out / "manifest.json"));
  CHECK(manifest["input_hash"].get<std::string>().size() == 64);
}

TEST_CASE("train is byte-reproducible") {
  const fs::path data = small_dataset("det_data");
  const fs::path a = scratch("det_a");
  const fs::path b = scratch("det_b");
  for (const auto& dir : {a, b})
    REQUIRE(cli({"train", "--data", data.string(), "--out", dir.string(), "--epochs", "4", "--warmup", "2",
                 "--batch-size", "16"})
                .code == 0);
  CHECK(cap::read_text_file(a / "history.csv") == cap::read_text_file(b / "history.csv"));
  CHECK(cap::read_text_file(a / "checkpoint.json") == cap::read_text_file(b / "checkpoint.json"));
}

TEST_CASE("flags override the config file") {
  const fs::path data = small_dataset("ovr_data");
  const fs::path cfg = scratch("ovr_cfg") / "cfg.json";
  cap::write_text_file(cfg, R"({"strategy": "top1", "interval": {"eta_pos": 0.5}, "warmup_epochs": 1, "total_epochs": 2})");
  const fs::path out = scratch("ovr_out");
  REQUIRE(cli({"train", "--config", cfg.string(), "--data", data.string(), "--out", out.string(), "--strategy", "cap",
               "--eta-pos", "0.9"})
              .code == 0);
  const json config = json::parse(cap::read_text_file(out / "config.json"));
  CHECK(config["strategy"] == "cap");
  CHECK(config["interval"]["eta_pos"] == 0.9);
  CHECK(config["total_epochs"] == 2);
}

TEST_CASE("corrupt config exits with 2 and names the field") {
  const fs::path data = small_dataset("bad_cfg_data");
  const fs::path cfg = scratch("bad_cfg") / "cfg.json";
  cap::write_text_file(cfg, R"({"batch_size": "many"})");
  const Run r = cli({"train", "--config", cfg.string(), "--data", data.string(), "--out", scratch("o").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("batch_size") != std::string::npos);
  cap::write_text_file(cfg, "{not json");
  CHECK(cli({"train", "--config", cfg.string(), "--data", data.string(), "--out", scratch("o").string()}).code == 2);
  CHECK(cli({"train", "--data", data.string(), "--out", scratch("o").string(), "--strategy", "magic"}).code == 2);
}

TEST_CASE("training abort exits with 1") {
  const fs::path dir = scratch("nan_data");
  cap::write_text_file(dir / "dataset.csv", "f0,y0,y1\nnan,1,0\n0.5,0,1\n0.1,1,1\n-0.3,0,0\n");
  cap::write_text_file(dir / "split.json", R"({"labeled":[0,1],"unlabeled":[2,3],"test":[],"p":0.5,"seed":1})");
  const Run r = cli({"train", "--data", dir.string(), "--out", scratch("nan_out").string(), "--epochs", "2",
                     "--warmup", "1"});
  CHECK(r.code == 1);
  CHECK(r.err.find("non-finite") != std::string::npos);
}

TEST_CASE("compare emits one row per strategy with the checkpoint hash") {
  const fs::path data = small_dataset("cmp_data");
  const fs::path out = scratch("cmp_out");
  const Run r = cli({"compare", "--data", data.string(), "--out", out.string(), "--epochs", "4", "--warmup", "2"});
  REQUIRE(r.code == 0);
  const std::string csv = cap::read_text_file(out / "comparison.csv");
  CHECK(lines(csv) == 5);
  CHECK(csv.rfind("strategy,map_raw,map_ema,cf1,of1,epsilon,checkpoint_hash\n", 0) == 0);
  CHECK(lines(cap::read_text_file(out / "first_round.csv")) == 5);
  for (const char* s : {"top1", "topk", "iat", "cap"}) CHECK(fs::exists(out / ("history_" + std::string(s) + ".csv")));
  const json report = json::parse(cap::read_text_file(out / "comparison.json"));
  CHECK(csv.find(report["checkpoint_hash"].get<std::string>()) != std::string::npos);

  const fs::path single = scratch("cmp_single");
  REQUIRE(cli({"compare", "--data", data.string(), "--out", single.string(), "--epochs", "3", "--warmup", "2",
               "--strategies", "top1"})
              .code == 0);
  CHECK(lines(cap::read_text_file(single / "comparison.csv")) == 2);
  CHECK(cli({"compare", "--data", data.string(), "--out", single.string(), "--strategies", "best"}).code == 2);
}

TEST_CASE("verify-bound") {
  const fs::path out = scratch("bound") / "coverage.json";
  const Run r = cli({"verify-bound", "--n", "100", "--m", "10000", "--q", "10", "--trials", "10000", "--seed", "1",
                     "--out", out.string()});
  CHECK(r.code == 0);
  const json report = json::parse(r.out);
  CHECK(report["trials"] == 10000);
  CHECK(report["within_bound"] == true);
  CHECK(json::parse(cap::read_text_file(out)) == report);
  CHECK(cli({"verify-bound", "--trials", "10"}).code == 2);
  const Run domain = cli({"verify-bound", "--prior", "1.0"});
  CHECK(domain.code == 2);
  CHECK(domain.err.find("domain error") != std::string::npos);
  CHECK(cli({"verify-bound", "--priors", "0.1,0.2", "--trials", "100", "--mode", "materialized", "--m", "100"}).code == 0);
  CHECK(cli({"verify-bound", "--mode", "exact"}).code == 2);
}
