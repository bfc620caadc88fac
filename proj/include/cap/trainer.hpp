#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cap/dataset.hpp"
#include "cap/loss.hpp"
#include "cap/metrics.hpp"
#include "cap/model.hpp"
#include "cap/pseudolabel.hpp"
#include "cap/types.hpp"

namespace cap {

enum class StrategyKind { Top1, TopK, GlobalThreshold, Cap };

struct Strategy {
  StrategyKind kind = StrategyKind::Cap;
  double tau = 0.5;  // GlobalThreshold only
  Index topk_l = 0;  // TopK only; 0 = average positive count of the labeled set

  static Strategy top1() { return {StrategyKind::Top1}; }
  static Strategy topk(Index l = 0) { return {StrategyKind::TopK, 0.5, l}; }
  static Strategy global(double tau) { return {StrategyKind::GlobalThreshold, tau, 0}; }
  static Strategy cap() { return {StrategyKind::Cap}; }
};

// "top1", "topk", "iat" (global threshold) or "cap".
std::string strategy_name(const Strategy& strategy);
// Accepts the names above and "global_threshold"; throws ConfigError otherwise.
StrategyKind parse_strategy_kind(std::string_view name);

enum class RefreshCadence { PerEpoch, PerBatch };
enum class PredictionSource { Ema, Raw };

struct ExperimentConfig {
  Strategy strategy;
  LossConfig loss;
  ReliableInterval interval;
  int warmup_epochs = 12;
  int total_epochs = 30;  // includes the warm-up epochs
  Index batch_size = 64;
  double learning_rate = 1e-2;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t lr_warmup_steps = 0;
  double ema_decay = kDefaultEmaDecay;
  std::uint64_t seed = 1;
  RefreshCadence pseudo_label_refresh = RefreshCadence::PerEpoch;
  PredictionSource prediction_source = PredictionSource::Ema;
  Architecture architecture = Architecture::Linear;
  Index hidden_units = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  bool warmup = false;
  double sup_loss = 0.0;    // mean labeled-batch loss over the epoch
  double unsup_loss = 0.0;  // mean unlabeled-batch loss over the epoch
  double map_raw = 0.0;     // test mAP with the raw weights (NaN without a test set)
  double map_ema = 0.0;     // test mAP with the EMA weights
  std::optional<PseudoLabelReport> pseudo;  // quality of this epoch's pseudo-labels
};

struct ThresholdRecord {
  int round = 0;
  int epoch = 0;
  ThresholdTable table;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  std::vector<ThresholdRecord> thresholds;  // CAP only, one per assignment round
  std::vector<PseudoLabels> pseudo_rounds;  // filled when TrainOptions::keep_pseudo_labels
  int rounds = 0;
  // Reads of the hidden unlabeled labels that happened inside pseudo-label
  // assignment. Anything but zero is a leak.
  std::uint64_t oracle_reads_during_assignment = 0;
  std::string first_round_prediction_hash;
  std::vector<std::string> warnings;
};

struct TrainOptions {
  bool keep_pseudo_labels = false;
};

struct TrainingState {
  Model model;
  EmaShadow<double> ema;
  OptimizerState<double> optimizer;
  int epochs_done = 0;
};

struct TrainResult {
  TrainingState state;
  TrainingHistory history;
};

TrainingState initialize_training(const SemiSupervisedData& data, const ExperimentConfig& config);

// Supervised-only epochs until warmup_epochs are done.
void warmup(TrainingState& state, const SemiSupervisedData& data, const ExperimentConfig& config,
            TrainingHistory& history);

// Runs the remaining epochs up to total_epochs: warm-up epochs first, then in
// every epoch predict on the whole unlabeled pool, assign pseudo-labels and
// take mixed labeled/unlabeled gradient steps.
void continue_training(TrainingState& state, const SemiSupervisedData& data, const ExperimentConfig& config,
                       TrainingHistory& history, const TrainOptions& options = {});

TrainResult train(const SemiSupervisedData& data, const ExperimentConfig& config, const TrainOptions& options = {});
TrainResult train(const MultiLabelDataset& dataset, const SSMLLSplit& split, const ExperimentConfig& config,
                  const TrainOptions& options = {});

// Pseudo-labels for the unlabeled predictions under config.strategy. Only the
// labeled labels are consulted (for l and the class distribution).
PseudoLabels assign_pseudo_labels(const MatrixXd& unlabeled_probabilities, const LabelMatrix& labeled_labels,
                                  const ExperimentConfig& config, ThresholdTable* table = nullptr);

// Labeled mean loss plus unlabeled loss over the full partitions for fixed
// pseudo-labels.
double combined_objective(const Model& model, const SemiSupervisedData& data, const PseudoLabels& pseudo,
                          const LossConfig& loss);

// Model whose predictions drive pseudo-labeling under config.prediction_source.
Model prediction_model(const TrainingState& state, const ExperimentConfig& config);

// epoch,sup_loss,unsup_loss,map_raw,map_ema,cf1,of1,epsilon
std::string history_csv(const TrainingHistory& history);
// round,class,c_pos,c_neg,tau_alpha,tau_beta
std::string thresholds_csv(const TrainingHistory& history);

// SHA-256 of the serialized checkpoint.
std::string checkpoint_hash(const TrainingState& state);

struct StrategyOutcome {
  Strategy strategy;
  double map_raw = 0.0;
  double map_ema = 0.0;
  std::optional<PseudoLabelReport> final_pseudo;
  PseudoLabelReport first_round;
  TrainingHistory history;
};

struct ComparisonReport {
  std::string checkpoint_hash;
  std::string first_round_prediction_hash;
  std::vector<StrategyOutcome> outcomes;
};

// Warms up once, then trains every strategy from that same checkpoint.
ComparisonReport compare_strategies(const SemiSupervisedData& data, const ExperimentConfig& base,
                                    const std::vector<Strategy>& strategies);

std::string comparison_csv(const ComparisonReport& report);
std::string first_round_csv(const ComparisonReport& report);

}  // namespace cap
