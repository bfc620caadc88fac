#include "cap/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "cap/errors.hpp"
#include "cap/io.hpp"
#include "cap/random.hpp"
#include "cap/serialization.hpp"

namespace cap {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Seed streams; each epoch shuffles with its own generator so that a run
// split into warm-up and continuation replays identically.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kEpochStreamBase = 1000;

Parameters<double>& operator+=(Parameters<double>& lhs, const Parameters<double>& rhs) {
  for (std::size_t l = 0; l < lhs.num_layers(); ++l) {
    lhs.weights[l] += rhs.weights[l];
    lhs.biases[l] += rhs.biases[l];
  }
  return lhs;
}

std::string matrix_hash(const MatrixXd& m) {
  return content_hash(std::string_view(reinterpret_cast<const char*>(m.data()),
                                       static_cast<std::size_t>(m.size()) * sizeof(double)));
}

std::string join_indices(const IndexList& indices) {
  std::string out;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(indices[i]);
  }
  return out;
}

double test_map(const Model& model, const SemiSupervisedData& data) {
  if (data.test_features.rows() == 0) return kNaN;
  try {
    return mean_average_precision(forward(model, data.test_features), data.test_labels);
  } catch (const MetricError&) {
    return kNaN;
  }
}

// Cycles through a shuffled index order, reshuffling on wrap-around.
class BatchCycler {
 public:
  BatchCycler(Index count, std::mt19937_64& rng) : order_(static_cast<std::size_t>(count)), rng_(rng) {
    std::iota(order_.begin(), order_.end(), Index{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  IndexList next(Index size) {
    IndexList batch;
    batch.reserve(static_cast<std::size_t>(size));
    while (static_cast<Index>(batch.size()) < size) {
      if (position_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        position_ = 0;
      }
      batch.push_back(order_[position_++]);
    }
    return batch;
  }

 private:
  IndexList order_;
  std::size_t position_ = 0;
  std::mt19937_64& rng_;
};

void check_finite(double value, const char* what, const IndexList& labeled, const IndexList& unlabeled) {
  if (std::isfinite(value)) return;
  throw NumericError(std::string("non-finite ") + what + " loss; labeled batch [" + join_indices(labeled) +
                     "], unlabeled batch [" + join_indices(unlabeled) + "]");
}

struct StepResult {
  double sup = 0.0;
  double unsup = 0.0;
};

StepResult gradient_step(TrainingState& state, const SemiSupervisedData& data, const LossConfig& loss,
                         const IndexList& labeled, const IndexList* unlabeled, const PseudoLabels* pseudo) {
  StepResult result;
  const MatrixXd xl = data.labeled_features(labeled, Eigen::all);
  const MatrixXd pl = forward(state.model, xl);
  const auto sup = supervised_loss(pl, data.labeled_labels(labeled, Eigen::all), loss);
  check_finite(sup.value, "supervised", labeled, unlabeled ? *unlabeled : IndexList{});
  Parameters<double> grads = backward(state.model, xl, sup.grad);
  result.sup = sup.value;

  if (unlabeled != nullptr) {
    const MatrixXd xu = data.unlabeled_features(*unlabeled, Eigen::all);
    const MatrixXd pu = forward(state.model, xu);
    const auto unsup = unlabeled_loss(pu, (*pseudo)(*unlabeled, Eigen::all), loss);
    check_finite(unsup.value, "unlabeled", labeled, *unlabeled);
    grads += backward(state.model, xu, unsup.grad);
    result.unsup = unsup.value;
  }

  optimizer_step(state.optimizer, state.model, grads);
  ema_update(state.ema, state.model);
  return result;
}

class PseudoLabeler {
 public:
  PseudoLabeler(const SemiSupervisedData& data, const ExperimentConfig& config, TrainingHistory& history,
                const TrainOptions& options)
      : data_(data), config_(config), history_(history), options_(options) {}

  PseudoLabels assign(const TrainingState& state, int epoch) {
    const MatrixXd probabilities = forward(prediction_model(state, config_), data_.unlabeled_features);
    if (history_.first_round_prediction_hash.empty())
      history_.first_round_prediction_hash = matrix_hash(probabilities);

    const std::uint64_t reads_before = data_.unlabeled_truth.reads();
    ThresholdTable table;
    PseudoLabels pseudo = assign_pseudo_labels(probabilities, data_.labeled_labels, config_, &table);
    history_.oracle_reads_during_assignment += data_.unlabeled_truth.reads() - reads_before;

    ++history_.rounds;
    if (config_.strategy.kind == StrategyKind::Cap) {
      if (history_.thresholds.empty())
        for (Index k : table.classes_without_positives)
          history_.warnings.push_back("class " + std::to_string(k) +
                                      " has no labeled positive; it never receives a positive pseudo-label");
      history_.thresholds.push_back({history_.rounds, epoch, std::move(table)});
    }
    if (options_.keep_pseudo_labels) history_.pseudo_rounds.push_back(pseudo);
    return pseudo;
  }

 private:
  const SemiSupervisedData& data_;
  const ExperimentConfig& config_;
  TrainingHistory& history_;
  const TrainOptions& options_;
};

void check_data(const SemiSupervisedData& data, const ExperimentConfig& config) {
  config.validate();
  if (data.num_labeled() == 0) throw ContractError("training needs at least one labeled instance");
  if (data.labeled_labels.rows() != data.num_labeled() || data.unlabeled_truth.rows() != data.num_unlabeled() ||
      data.test_labels.rows() != data.test_features.rows())
    throw ShapeError("partition row counts are inconsistent");
  if (data.unlabeled_features.cols() != data.labeled_features.cols() ||
      (data.test_features.rows() > 0 && data.test_features.cols() != data.labeled_features.cols()))
    throw ShapeError("partitions differ in feature width");
  if (config.total_epochs > config.warmup_epochs && data.num_unlabeled() == 0)
    throw ContractError("training past warm-up needs at least one unlabeled instance");
}

void run_epochs(TrainingState& state, const SemiSupervisedData& data, const ExperimentConfig& config,
                TrainingHistory& history, const TrainOptions& options, int until_epoch) {
  check_data(data, config);
  const Index n = data.num_labeled();
  const Index m = data.num_unlabeled();
  const Index batch = config.batch_size;
  // Mixed batches split the batch size in proportion n : m, at least one each.
  const Index labeled_batch = std::clamp<Index>(
      static_cast<Index>(std::llround(static_cast<double>(batch) * static_cast<double>(n) /
                                      static_cast<double>(n + m))),
      1, std::max<Index>(1, batch - 1));
  const Index unlabeled_batch = std::max<Index>(1, batch - labeled_batch);
  PseudoLabeler labeler(data, config, history, options);

  for (int epoch = state.epochs_done; epoch < until_epoch; ++epoch) {
    std::mt19937_64 rng(mix_seed(config.seed, kEpochStreamBase + static_cast<std::uint64_t>(epoch)));
    EpochRecord record;
    record.epoch = epoch;
    record.warmup = epoch < config.warmup_epochs;
    double sup_total = 0.0;
    double unsup_total = 0.0;
    Index steps = 0;

    if (record.warmup) {
      BatchCycler labeled(n, rng);
      const Index count = (n + batch - 1) / batch;
      for (Index s = 0; s < count; ++s) {
        const IndexList lb = labeled.next(std::min(batch, n - s * batch));
        sup_total += gradient_step(state, data, config.loss, lb, nullptr, nullptr).sup;
        ++steps;
      }
    } else {
      PseudoLabels pseudo = labeler.assign(state, epoch);
      record.pseudo = pseudo_label_report(pseudo, data.unlabeled_truth.reveal());

      BatchCycler labeled(n, rng);
      IndexList unlabeled_order(static_cast<std::size_t>(m));
      std::iota(unlabeled_order.begin(), unlabeled_order.end(), Index{0});
      std::shuffle(unlabeled_order.begin(), unlabeled_order.end(), rng);
      for (Index start = 0; start < m; start += unlabeled_batch) {
        if (start > 0 && config.pseudo_label_refresh == RefreshCadence::PerBatch)
          pseudo = labeler.assign(state, epoch);
        const auto first = unlabeled_order.begin() + start;
        const IndexList ub(first, first + std::min(unlabeled_batch, m - start));
        const IndexList lb = labeled.next(labeled_batch);
        const StepResult r = gradient_step(state, data, config.loss, lb, &ub, &pseudo);
        sup_total += r.sup;
        unsup_total += r.unsup;
        ++steps;
      }
    }

    if (!state.model.params.all_finite()) throw NumericError("model parameters became non-finite in epoch " + std::to_string(epoch));
    record.sup_loss = steps ? sup_total / static_cast<double>(steps) : 0.0;
    record.unsup_loss = steps ? unsup_total / static_cast<double>(steps) : 0.0;
    record.map_raw = test_map(state.model, data);
    record.map_ema = test_map(with_parameters(state.model, state.ema.params), data);
    history.epochs.push_back(std::move(record));
    state.epochs_done = epoch + 1;
  }
}

std::string csv_value(const std::optional<PseudoLabelReport>& report, double PseudoLabelReport::*field) {
  return format_double(report ? (*report).*field : kNaN);
}

}  // namespace

std::string strategy_name(const Strategy& strategy) {
  switch (strategy.kind) {
    case StrategyKind::Top1: return "top1";
    case StrategyKind::TopK: return "topk";
    case StrategyKind::GlobalThreshold: return "iat";
    case StrategyKind::Cap: return "cap";
  }
  return "unknown";
}

StrategyKind parse_strategy_kind(std::string_view name) {
  if (name == "top1") return StrategyKind::Top1;
  if (name == "topk") return StrategyKind::TopK;
  if (name == "iat" || name == "global_threshold") return StrategyKind::GlobalThreshold;
  if (name == "cap") return StrategyKind::Cap;
  throw ConfigError("strategy", "unknown strategy '" + std::string(name) + "' (expected top1, topk, iat or cap)");
}

void ExperimentConfig::validate() const {
  loss.validate();
  interval.validate();
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs", "must be >= 0");
  if (total_epochs < warmup_epochs) throw ConfigError("total_epochs", "must be >= warmup_epochs");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate", "must be a finite value >= 0");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("ema_decay", "must lie in [0, 1]");
  if (strategy.kind == StrategyKind::TopK && strategy.topk_l < 0) throw ConfigError("topk_l", "must be >= 0");
  if (strategy.kind == StrategyKind::GlobalThreshold && std::isnan(strategy.tau))
    throw ConfigError("tau", "must be a number");
  if (architecture == Architecture::OneHiddenLayer && hidden_units < 1)
    throw ConfigError("model.hidden_units", "must be >= 1 for a one-hidden-layer model");
}

Model prediction_model(const TrainingState& state, const ExperimentConfig& config) {
  if (config.prediction_source == PredictionSource::Raw) return state.model;
  return with_parameters(state.model, state.ema.params);
}

PseudoLabels assign_pseudo_labels(const MatrixXd& unlabeled_probabilities, const LabelMatrix& labeled_labels,
                                  const ExperimentConfig& config, ThresholdTable* table) {
  switch (config.strategy.kind) {
    case StrategyKind::Top1:
      return top1(unlabeled_probabilities);
    case StrategyKind::TopK: {
      const Index l =
          config.strategy.topk_l > 0 ? config.strategy.topk_l : average_positive_count(labeled_labels);
      if (l > unlabeled_probabilities.cols())
        throw ConfigError("topk_l", "exceeds the number of classes");
      return topk(unlabeled_probabilities, l);
    }
    case StrategyKind::GlobalThreshold:
      return global_threshold(unlabeled_probabilities, config.strategy.tau);
    case StrategyKind::Cap: {
      ThresholdTable computed =
          cat_thresholds(unlabeled_probabilities, estimate_class_distribution(labeled_labels), config.interval);
      PseudoLabels out = cap_assign(unlabeled_probabilities, computed);
      if (table) *table = std::move(computed);
      return out;
    }
  }
  throw ConfigError("strategy", "unhandled strategy");
}

double combined_objective(const Model& model, const SemiSupervisedData& data, const PseudoLabels& pseudo,
                          const LossConfig& loss) {
  const double labeled = supervised_loss(forward(model, data.labeled_features), data.labeled_labels, loss).value;
  const double unlabeled = unlabeled_loss(forward(model, data.unlabeled_features), pseudo, loss).value;
  return labeled + unlabeled;
}

TrainingState initialize_training(const SemiSupervisedData& data, const ExperimentConfig& config) {
  config.validate();
  ArchitectureSpec spec;
  spec.kind = config.architecture;
  spec.input_dim = data.labeled_features.cols();
  spec.num_classes = data.num_classes();
  spec.hidden_units = config.architecture == Architecture::OneHiddenLayer ? config.hidden_units : 0;

  TrainingState state;
  state.model = initialize_model<double>(spec, mix_seed(config.seed, kInitStream));
  state.ema = make_ema(state.model, config.ema_decay);
  OptimizerSettings settings;
  settings.kind = config.optimizer;
  settings.learning_rate = config.learning_rate;
  settings.warmup_steps = config.lr_warmup_steps;
  state.optimizer = make_optimizer(settings, state.model);
  return state;
}

void warmup(TrainingState& state, const SemiSupervisedData& data, const ExperimentConfig& config,
            TrainingHistory& history) {
  run_epochs(state, data, config, history, TrainOptions{}, std::max(state.epochs_done, config.warmup_epochs));
}

void continue_training(TrainingState& state, const SemiSupervisedData& data, const ExperimentConfig& config,
                       TrainingHistory& history, const TrainOptions& options) {
  run_epochs(state, data, config, history, options, config.total_epochs);
}

TrainResult train(const SemiSupervisedData& data, const ExperimentConfig& config, const TrainOptions& options) {
  TrainResult result;
  result.state = initialize_training(data, config);
  continue_training(result.state, data, config, result.history, options);
  return result;
}

TrainResult train(const MultiLabelDataset& dataset, const SSMLLSplit& split, const ExperimentConfig& config,
                  const TrainOptions& options) {
  return train(partition(dataset, split), config, options);
}

std::string history_csv(const TrainingHistory& history) {
  std::ostringstream os;
  os << "epoch,sup_loss,unsup_loss,map_raw,map_ema,cf1,of1,epsilon\n";
  for (const auto& r : history.epochs) {
    os << r.epoch << ',' << format_double(r.sup_loss) << ',' << format_double(r.unsup_loss) << ','
       << format_double(r.map_raw) << ',' << format_double(r.map_ema) << ','
       << csv_value(r.pseudo, &PseudoLabelReport::cf1) << ',' << csv_value(r.pseudo, &PseudoLabelReport::of1)
       << ',' << csv_value(r.pseudo, &PseudoLabelReport::epsilon) << '\n';
  }
  return os.str();
}

std::string thresholds_csv(const TrainingHistory& history) {
  std::ostringstream os;
  os << "round,class,c_pos,c_neg,tau_alpha,tau_beta\n";
  for (const auto& rec : history.thresholds) {
    for (Index k = 0; k < rec.table.num_classes(); ++k) {
      const auto kk = static_cast<std::size_t>(k);
      os << rec.round << ',' << k << ',' << rec.table.positive_counts[kk] << ',' << rec.table.negative_counts[kk]
         << ',' << format_double(rec.table.tau_alpha(k)) << ',' << format_double(rec.table.tau_beta(k)) << '\n';
    }
  }
  return os.str();
}

std::string checkpoint_hash(const TrainingState& state) {
  return content_hash(checkpoint_to_json(state).dump());
}

ComparisonReport compare_strategies(const SemiSupervisedData& data, const ExperimentConfig& base,
                                    const std::vector<Strategy>& strategies) {
  if (strategies.empty()) throw ConfigError("strategies", "at least one strategy is required");
  TrainingState checkpoint = initialize_training(data, base);
  TrainingHistory warm_history;
  warmup(checkpoint, data, base, warm_history);

  ComparisonReport report;
  report.checkpoint_hash = checkpoint_hash(checkpoint);
  const MatrixXd first_predictions = forward(prediction_model(checkpoint, base), data.unlabeled_features);
  report.first_round_prediction_hash = matrix_hash(first_predictions);

  for (const Strategy& strategy : strategies) {
    ExperimentConfig config = base;
    config.strategy = strategy;
    StrategyOutcome outcome;
    outcome.strategy = strategy;

    const std::uint64_t reads_before = data.unlabeled_truth.reads();
    const PseudoLabels probe = assign_pseudo_labels(first_predictions, data.labeled_labels, config);
    outcome.history = warm_history;
    outcome.history.oracle_reads_during_assignment += data.unlabeled_truth.reads() - reads_before;
    outcome.first_round = pseudo_label_report(probe, data.unlabeled_truth.reveal());

    TrainingState state = checkpoint;
    continue_training(state, data, config, outcome.history);
    const EpochRecord& last = outcome.history.epochs.back();
    outcome.map_raw = last.map_raw;
    outcome.map_ema = last.map_ema;
    outcome.final_pseudo = last.pseudo;
    report.outcomes.push_back(std::move(outcome));
  }
  return report;
}

std::string comparison_csv(const ComparisonReport& report) {
  std::ostringstream os;
  os << "strategy,map_raw,map_ema,cf1,of1,epsilon,checkpoint_hash\n";
  for (const auto& o : report.outcomes) {
    os << strategy_name(o.strategy) << ',' << format_double(o.map_raw) << ',' << format_double(o.map_ema) << ','
       << csv_value(o.final_pseudo, &PseudoLabelReport::cf1) << ','
       << csv_value(o.final_pseudo, &PseudoLabelReport::of1) << ','
       << csv_value(o.final_pseudo, &PseudoLabelReport::epsilon) << ',' << report.checkpoint_hash << '\n';
  }
  return os.str();
}

std::string first_round_csv(const ComparisonReport& report) {
  std::ostringstream os;
  os << "strategy,cf1,of1,epsilon,epsilon_pos,epsilon_neg,prediction_hash\n";
  for (const auto& o : report.outcomes) {
    const auto& r = o.first_round;
    os << strategy_name(o.strategy) << ',' << format_double(r.cf1) << ',' << format_double(r.of1) << ','
       << format_double(r.epsilon) << ',' << format_double(r.epsilon_pos) << ',' << format_double(r.epsilon_neg)
       << ',' << report.first_round_prediction_hash << '\n';
  }
  return os.str();
}

}  // namespace cap
