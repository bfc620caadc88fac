#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cap/types.hpp"

namespace cap {

struct MultiLabelDataset {
  MatrixXd features;   // N x d
  LabelMatrix labels;  // N x q, entries in {0, 1}
  std::vector<std::string> class_names;

  Index size() const { return features.rows(); }
  Index feature_dim() const { return features.cols(); }
  Index num_classes() const { return labels.cols(); }

  // Throws ShapeError / ContractError when the invariants do not hold.
  void validate() const;
};

struct SyntheticConfig {
  Index num_instances = 1000;
  Index num_classes = 10;
  Index feature_dim = 32;
  double imbalance_ratio = 10.0;
  double base_positive_rate = 0.3;
  double label_noise = 0.05;
  std::uint64_t seed = 1;

  void validate() const;
};

// Per-class prior before sampling: base_positive_rate * ratio^(-k/(q-1)).
VectorXd long_tail_priors(const SyntheticConfig& config);

// Features are standard normal; class k is positive when the projection on a
// hidden unit direction w_k falls in the top prior_k fraction of the sample,
// after which each label is flipped with probability label_noise.
MultiLabelDataset generate_synthetic(const SyntheticConfig& config);

struct SSMLLSplit {
  IndexList labeled;
  IndexList unlabeled;
  IndexList test;
  double labeled_proportion = 0.0;
  std::uint64_t seed = 0;
};

// Carves round(test_fraction * N) test instances first, then labels
// ceil(p * remaining) of the rest. Index lists are sorted.
SSMLLSplit split(const MultiLabelDataset& dataset, double p, double test_fraction,
                 std::uint64_t seed);

enum class DistributionSource { EstimatedFromLabeled, TrueFromUnlabeled };

struct ClassDistribution {
  VectorXd gamma;  // positive proportion per class
  VectorXd rho;    // negative proportion per class, 1 - gamma
  DistributionSource source = DistributionSource::EstimatedFromLabeled;

  Index num_classes() const { return gamma.size(); }
};

ClassDistribution estimate_class_distribution(
    const LabelMatrix& labels,
    DistributionSource source = DistributionSource::EstimatedFromLabeled);

ClassDistribution estimate_class_distribution(
    const MultiLabelDataset& dataset, const IndexList& indices,
    DistributionSource source = DistributionSource::EstimatedFromLabeled);

// Label matrix of the unlabeled partition. Only evaluation and theory code may
// look at it; every reveal() is counted so tests can prove that pseudo-label
// assignment never did.
class HiddenLabels {
 public:
  HiddenLabels() = default;
  explicit HiddenLabels(LabelMatrix labels) : labels_(std::move(labels)) {}

  const LabelMatrix& reveal() const {
    ++reads_;
    return labels_;
  }
  std::uint64_t reads() const { return reads_; }
  Index rows() const { return labels_.rows(); }
  Index cols() const { return labels_.cols(); }

 private:
  LabelMatrix labels_;
  mutable std::uint64_t reads_ = 0;
};

struct SemiSupervisedData {
  MatrixXd labeled_features;
  LabelMatrix labeled_labels;
  MatrixXd unlabeled_features;
  HiddenLabels unlabeled_truth;
  MatrixXd test_features;
  LabelMatrix test_labels;

  Index num_labeled() const { return labeled_features.rows(); }
  Index num_unlabeled() const { return unlabeled_features.rows(); }
  Index num_classes() const { return labeled_labels.cols(); }
};

SemiSupervisedData partition(const MultiLabelDataset& dataset, const SSMLLSplit& split);

// CSV: header f0,...,f{d-1},y0,...,y{q-1}; one instance per row.
MultiLabelDataset load_csv(const std::filesystem::path& path);
void save_csv(const MultiLabelDataset& dataset, const std::filesystem::path& path);
MultiLabelDataset parse_csv(const std::string& text);
std::string format_csv(const MultiLabelDataset& dataset);

// Split manifest: {"labeled":[...],"unlabeled":[...],"test":[...],"p":..,"seed":..}
nlohmann::json split_to_json(const SSMLLSplit& split);
SSMLLSplit split_from_json(const nlohmann::json& json);
SSMLLSplit load_split(const std::filesystem::path& path);
void save_split(const SSMLLSplit& split, const std::filesystem::path& path);

// Throws SplitError unless the split's indices are disjoint and inside the dataset.
void check_split(const MultiLabelDataset& dataset, const SSMLLSplit& split);

}  // namespace cap
