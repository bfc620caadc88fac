#include "cap/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "cap/dataset.hpp"
#include "cap/errors.hpp"
#include "cap/io.hpp"
#include "cap/serialization.hpp"
#include "cap/theory.hpp"
#include "cap/trainer.hpp"

namespace cap {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Errors raised while validating inputs map to the usage exit code.
struct UsageFailure : Error {
  using Error::Error;
};

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

struct Manifest {
  std::string command;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string input_hash;
  fs::path output_dir;
  std::string started_at;
  std::vector<std::string> args;

  void write() const {
    json j{{"command", command},     {"config_path", config_path},      {"seed", seed},
           {"input_hash", input_hash}, {"output_dir", output_dir.string()}, {"started_at", started_at},
           {"finished_at", utc_now()}, {"args", args}};
    write_text_file(output_dir / "manifest.json", j.dump(2) + "\n");
  }
};

// Config file (optional) with command-line overrides on top.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::string> strategy;
  std::optional<double> eta_pos;
  std::optional<double> eta_neg;
  std::optional<double> tau;
  std::optional<Index> topk_l;
  std::optional<int> epochs;
  std::optional<int> warmup;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<Index> batch_size;
  std::optional<double> ema_decay;
  std::optional<std::string> optimizer;
  std::optional<std::string> refresh;
  std::optional<std::string> prediction_source;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "experiment config JSON");
    app.add_option("--strategy", strategy, "top1 | topk | iat | cap");
    app.add_option("--eta-pos", eta_pos, "reliable interval for positives");
    app.add_option("--eta-neg", eta_neg, "reliable interval for negatives");
    app.add_option("--tau", tau, "global threshold for iat");
    app.add_option("--topk-l", topk_l, "labels per instance for topk (0 = labeled average)");
    app.add_option("--epochs", epochs, "total epochs including warm-up");
    app.add_option("--warmup", warmup, "warm-up epochs");
    app.add_option("--seed", seed, "random seed");
    app.add_option("--lr", lr, "learning rate");
    app.add_option("--batch-size", batch_size, "mini-batch size");
    app.add_option("--ema-decay", ema_decay, "EMA decay");
    app.add_option("--optimizer", optimizer, "sgd | adam");
    app.add_option("--refresh", refresh, "per_epoch | per_batch");
    app.add_option("--prediction-source", prediction_source, "ema | raw");
  }

  // Returns the resolved config and the raw file bytes (empty without a file).
  std::pair<ExperimentConfig, std::string> resolve() const {
    ExperimentConfig config;
    std::string bytes;
    if (!config_path.empty()) {
      try {
        bytes = read_text_file(config_path);
      } catch (const Error& e) {
        throw UsageFailure(e.what());
      }
      json j;
      try {
        j = json::parse(bytes);
      } catch (const json::parse_error& e) {
        throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
      }
      config = config_from_json(j);
    }
    json overrides = json::object();
    if (strategy) overrides["strategy"] = *strategy;
    if (eta_pos) overrides["interval"]["eta_pos"] = *eta_pos;
    if (eta_neg) overrides["interval"]["eta_neg"] = *eta_neg;
    if (tau) overrides["tau"] = *tau;
    if (topk_l) overrides["topk_l"] = *topk_l;
    if (epochs) overrides["total_epochs"] = *epochs;
    if (warmup) overrides["warmup_epochs"] = *warmup;
    if (seed) overrides["seed"] = *seed;
    if (lr) overrides["learning_rate"] = *lr;
    if (batch_size) overrides["batch_size"] = *batch_size;
    if (ema_decay) overrides["ema_decay"] = *ema_decay;
    if (optimizer) overrides["optimizer"] = *optimizer;
    if (refresh) overrides["pseudo_label_refresh"] = *refresh;
    if (prediction_source) overrides["prediction_source"] = *prediction_source;
    return {merge_config(config, overrides), bytes};
  }
};

struct LoadedData {
  MultiLabelDataset dataset;
  SSMLLSplit split;
  std::string bytes;  // dataset + split files, for the manifest hash
};

LoadedData load_data_dir(const fs::path& dir) {
  LoadedData out;
  try {
    const std::string csv = read_text_file(dir / "dataset.csv");
    const std::string split = read_text_file(dir / "split.json");
    out.dataset = parse_csv(csv);
    out.split = split_from_json(json::parse(split));
    check_split(out.dataset, out.split);
    out.bytes = csv + split;
  } catch (const json::parse_error& e) {
    throw UsageFailure(std::string("split.json: ") + e.what());
  } catch (const Error& e) {
    throw UsageFailure(std::string("data directory '") + dir.string() + "': " + e.what());
  }
  return out;
}

int cmd_generate(const SyntheticConfig& synth, double p, double test_fraction, const fs::path& out_dir,
                 const std::vector<std::string>& args, std::ostream& out) {
  Manifest manifest{"generate", "", synth.seed, "", out_dir, utc_now(), args};
  MultiLabelDataset dataset;
  SSMLLSplit split_indices;
  try {
    dataset = generate_synthetic(synth);
    split_indices = split(dataset, p, test_fraction, synth.seed);
  } catch (const Error& e) {
    throw UsageFailure(e.what());
  }
  const std::string csv = format_csv(dataset);
  const std::string split_json = split_to_json(split_indices).dump() + "\n";
  write_text_file(out_dir / "dataset.csv", csv);
  write_text_file(out_dir / "split.json", split_json);
  std::string flags;
  for (const auto& a : args) flags += a + '\n';
  manifest.input_hash = content_hash(flags);
  manifest.write();
  out << "wrote " << (out_dir / "dataset.csv").string() << " (" << dataset.size() << " instances, "
      << dataset.num_classes() << " classes) and split.json (labeled " << split_indices.labeled.size()
      << ", unlabeled " << split_indices.unlabeled.size() << ", test " << split_indices.test.size() << ")\n";
  return kExitOk;
}

void write_pseudo_rounds(const TrainingHistory& history, const fs::path& dir) {
  for (std::size_t r = 0; r < history.pseudo_rounds.size(); ++r) {
    const auto& labels = history.pseudo_rounds[r];
    std::ostringstream os;
    for (Index k = 0; k < labels.cols(); ++k) os << (k ? "," : "") << 'y' << k;
    os << '\n';
    for (Index i = 0; i < labels.rows(); ++i) {
      for (Index k = 0; k < labels.cols(); ++k) os << (k ? "," : "") << static_cast<int>(labels(i, k));
      os << '\n';
    }
    write_text_file(dir / ("round_" + std::to_string(r + 1) + ".csv"), os.str());
  }
}

int cmd_train(const ConfigFlags& flags, const fs::path& data_dir, const fs::path& out_dir, bool dump_pseudo,
              const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const auto [config, config_bytes] = flags.resolve();
  const LoadedData data = load_data_dir(data_dir);
  Manifest manifest{"train", flags.config_path, config.seed, content_hash(config_bytes + data.bytes),
                    out_dir, utc_now(), args};
  write_text_file(out_dir / "config.json", config_to_json(config).dump(2) + "\n");

  const SemiSupervisedData parts = partition(data.dataset, data.split);
  TrainOptions options;
  options.keep_pseudo_labels = dump_pseudo;
  TrainingHistory history;
  TrainingState state = initialize_training(parts, config);
  warmup(state, parts, config, history);
  write_text_file(out_dir / "checkpoint_warmup.json", checkpoint_to_json(state).dump() + "\n");
  continue_training(state, parts, config, history, options);

  write_text_file(out_dir / "history.csv", history_csv(history));
  write_text_file(out_dir / "checkpoint.json", checkpoint_to_json(state).dump() + "\n");
  if (config.strategy.kind == StrategyKind::Cap) write_text_file(out_dir / "thresholds.csv", thresholds_csv(history));
  write_text_file(out_dir / "class_distribution.csv", overlap_curve_csv(distribution_overlap_curve(parts)));
  if (dump_pseudo) write_pseudo_rounds(history, out_dir / "pseudo_labels");

  const EpochRecord& last = history.epochs.back();
  json summary{{"strategy", strategy_name(config.strategy)},
               {"epochs", history.epochs.size()},
               {"map_raw", last.map_raw},
               {"map_ema", last.map_ema},
               {"oracle_reads_during_assignment", history.oracle_reads_during_assignment},
               {"warnings", history.warnings}};
  summary["final_pseudo_labels"] = last.pseudo ? report_to_json(*last.pseudo) : json(nullptr);
  write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");
  manifest.write();

  for (const auto& w : history.warnings) err << "warning: " << w << '\n';
  out << "trained " << strategy_name(config.strategy) << " for " << history.epochs.size()
      << " epochs; test mAP (EMA) " << format_double(last.map_ema) << ", raw " << format_double(last.map_raw)
      << '\n';
  return kExitOk;
}

std::vector<Strategy> parse_strategy_list(const std::string& list, const ExperimentConfig& base) {
  std::vector<Strategy> out;
  std::stringstream ss(list);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (name.empty()) continue;
    Strategy s = base.strategy;
    s.kind = parse_strategy_kind(name);
    out.push_back(s);
  }
  if (out.empty()) throw ConfigError("strategies", "no strategy given");
  return out;
}

int cmd_compare(const ConfigFlags& flags, const fs::path& data_dir, const fs::path& out_dir,
                const std::string& strategies, const std::vector<std::string>& args, std::ostream& out) {
  const auto [config, config_bytes] = flags.resolve();
  const auto list = parse_strategy_list(strategies, config);
  const LoadedData data = load_data_dir(data_dir);
  Manifest manifest{"compare", flags.config_path, config.seed, content_hash(config_bytes + data.bytes),
                    out_dir, utc_now(), args};
  write_text_file(out_dir / "config.json", config_to_json(config).dump(2) + "\n");

  const SemiSupervisedData parts = partition(data.dataset, data.split);
  const ComparisonReport report = compare_strategies(parts, config, list);
  write_text_file(out_dir / "comparison.csv", comparison_csv(report));
  write_text_file(out_dir / "comparison.json", comparison_to_json(report).dump(2) + "\n");
  write_text_file(out_dir / "first_round.csv", first_round_csv(report));
  for (const auto& o : report.outcomes)
    write_text_file(out_dir / ("history_" + strategy_name(o.strategy) + ".csv"), history_csv(o.history));
  manifest.write();
  out << comparison_csv(report);
  return kExitOk;
}

int cmd_verify_bound(const BoundTrial& trial, const fs::path& out_file, const std::vector<std::string>& args,
                     std::ostream& out) {
  if (trial.trials < 100) throw UsageFailure("--trials must be >= 100");
  const CoverageReport report = verify_theorem1(trial);
  const std::string text = coverage_to_json(report).dump(2) + "\n";
  if (!out_file.empty()) {
    write_text_file(out_file, text);
    const fs::path dir = out_file.has_parent_path() ? out_file.parent_path() : fs::path(".");
    json j = coverage_to_json(report);
    Manifest manifest{"verify-bound", "", trial.seed, content_hash(j.dump()), dir, utc_now(), args};
    manifest.write();
  }
  out << text;
  return report.within_bound ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Class-aware pseudo-labeling for semi-supervised multi-label learning"};
  app.require_subcommand(1);

  SyntheticConfig synth;
  double p = 0.05;
  double test_fraction = 0.2;
  std::string gen_out;
  auto* generate = app.add_subcommand("generate", "generate a synthetic long-tail dataset and split");
  generate->add_option("--n", synth.num_instances, "number of instances");
  generate->add_option("--q", synth.num_classes, "number of classes");
  generate->add_option("--d", synth.feature_dim, "feature dimension");
  generate->add_option("--imbalance", synth.imbalance_ratio, "head prior / tail prior");
  generate->add_option("--rate", synth.base_positive_rate, "head-class positive rate");
  generate->add_option("--noise", synth.label_noise, "label flip probability");
  generate->add_option("--seed", synth.seed, "random seed");
  generate->add_option("--p", p, "labeled proportion");
  generate->add_option("--test", test_fraction, "test fraction");
  generate->add_option("--out", gen_out, "output directory")->required();

  ConfigFlags train_flags;
  std::string train_data, train_out;
  bool dump_pseudo = false;
  auto* train_cmd = app.add_subcommand("train", "train one strategy");
  train_flags.attach(*train_cmd);
  train_cmd->add_option("--data", train_data, "directory with dataset.csv and split.json")->required();
  train_cmd->add_option("--out", train_out, "run directory")->required();
  train_cmd->add_flag("--dump-pseudo", dump_pseudo, "write every pseudo-label round as CSV");

  ConfigFlags compare_flags;
  std::string compare_data, compare_out, strategies = "top1,topk,iat,cap";
  auto* compare = app.add_subcommand("compare", "compare strategies from one warm-up checkpoint");
  compare_flags.attach(*compare);
  compare->add_option("--data", compare_data, "directory with dataset.csv and split.json")->required();
  compare->add_option("--out", compare_out, "output directory")->required();
  compare->add_option("--strategies", strategies, "comma-separated list of top1,topk,iat,cap");

  BoundTrial trial;
  trial.priors = VectorXd::Constant(10, 0.2);
  Index bound_q = 10;
  double prior = 0.2;
  std::vector<double> priors;
  std::string mode = "binomial";
  std::string bound_out;
  auto* verify = app.add_subcommand("verify-bound", "Monte Carlo coverage of the class-proportion bound");
  verify->add_option("--n", trial.n, "labeled instances per trial");
  verify->add_option("--m", trial.m, "unlabeled instances per trial");
  verify->add_option("--q", bound_q, "number of classes");
  verify->add_option("--trials", trial.trials, "number of trials (>= 100)");
  verify->add_option("--seed", trial.seed, "random seed");
  verify->add_option("--prior", prior, "prior shared by all classes");
  verify->add_option("--priors", priors, "per-class priors (overrides --prior and --q)")->delimiter(',');
  verify->add_option("--mode", mode, "binomial | materialized")->check(CLI::IsMember({"binomial", "materialized"}));
  verify->add_option("--out", bound_out, "also write the JSON report to this file");

  std::vector<const char*> argv{"cap"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*generate) return cmd_generate(synth, p, test_fraction, gen_out, args, out);
    if (*train_cmd) return cmd_train(train_flags, train_data, train_out, dump_pseudo, args, out, err);
    if (*compare) return cmd_compare(compare_flags, compare_data, compare_out, strategies, args, out);
    if (*verify) {
      if (!priors.empty()) {
        trial.priors = Eigen::Map<const VectorXd>(priors.data(), static_cast<Index>(priors.size()));
      } else {
        if (bound_q < 1) throw UsageFailure("--q must be >= 1");
        trial.priors = VectorXd::Constant(bound_q, prior);
      }
      trial.mode = mode == "materialized" ? SamplingMode::Materialized : SamplingMode::Binomial;
      return cmd_verify_bound(trial, bound_out, args, out);
    }
  } catch (const UsageFailure& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DomainError& e) {
    err << "domain error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace cap
