#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cap/dataset.hpp"
#include "cap/types.hpp"

namespace cap {

// sqrt(ln n / 2n) + sqrt(ln m / 2m); throws DomainError unless n, m >= 2.
double hoeffding_bound(Index n, Index m);

// Failure probability allowed by the bound: 2/n + 2/m.
double theoretical_violation_rate(Index n, Index m);

// How label proportions are drawn in each trial. Binomial draws the positive
// count of each class directly; Materialized draws full label matrices and
// runs them through estimate_class_distribution. Both sample the same law.
enum class SamplingMode { Binomial, Materialized };

struct BoundTrial {
  Index n = 100;
  Index m = 10000;
  VectorXd priors;  // length q, each in (0, 1)
  Index trials = 10000;
  std::uint64_t seed = 1;
  SamplingMode mode = SamplingMode::Binomial;

  Index num_classes() const { return priors.size(); }
};

struct CoverageReport {
  Index n = 0;
  Index m = 0;
  Index q = 0;
  Index trials = 0;
  double bound = 0.0;
  VectorXd max_gaps;  // per trial: max_k |gamma_hat_k - gamma*_k|
  std::vector<std::pair<double, double>> max_gap_quantiles;  // (level, value)
  Index violations = 0;
  double violation_rate = 0.0;
  double theoretical_rate = 0.0;
  // 3 * sqrt(r (1 - r) / trials) with r the theoretical rate clipped to [0, 1].
  double slack = 0.0;
  bool within_bound = false;
};

// Trials use seeds mix_seed(seed, t), so any subset can be replayed alone.
CoverageReport verify_theorem1(const BoundTrial& trial);

// Labeled and unlabeled proportions for one trial index.
std::pair<VectorXd, VectorXd> sample_trial_proportions(const BoundTrial& trial, Index t);

nlohmann::json coverage_to_json(const CoverageReport& report);

struct OverlapCurve {
  VectorXd estimated;  // gamma_hat per class
  VectorXd truth;      // gamma* per class
  double max_gap = 0.0;
  Index n = 0;
  Index m = 0;
  double bound = 0.0;  // NaN when n or m < 2
};

OverlapCurve distribution_overlap_curve(const ClassDistribution& labeled, Index n,
                                        const ClassDistribution& unlabeled_truth, Index m);

// Reads the hidden unlabeled labels through the counted accessor.
OverlapCurve distribution_overlap_curve(const SemiSupervisedData& data);

// Tidy CSV: class,estimated,truth
std::string overlap_curve_csv(const OverlapCurve& curve);

}  // namespace cap
