#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "cap/dataset.hpp"
#include "cap/errors.hpp"
#include "cap/types.hpp"

namespace cap {

using PseudoLabels = LabelMatrix;

// Fractions of the estimated positive / negative mass kept for training.
struct ReliableInterval {
  double eta_pos = 1.0;
  double eta_neg = 1.0;

  void validate() const {
    if (!(eta_pos >= 0.0 && eta_pos <= 1.0)) throw ConfigError("interval.eta_pos", "must lie in [0, 1]");
    if (!(eta_neg >= 0.0 && eta_neg <= 1.0)) throw ConfigError("interval.eta_neg", "must lie in [0, 1]");
  }
};

// Per-class thresholds and the selection counts that realize them.
struct ThresholdTable {
  VectorXd tau_alpha;  // positive threshold; +inf when no positive is selected
  VectorXd tau_beta;   // negative threshold; -inf when no negative is selected
  std::vector<Index> positive_counts;
  std::vector<Index> negative_counts;
  Index num_instances = 0;
  std::vector<Index> classes_without_positives;  // gamma_k == 0 in the labeled data

  Index num_classes() const { return tau_alpha.size(); }
};

namespace detail {

inline Index round_half_up(double x) {
  // The epsilon absorbs representation error in products like 0.35 * 10.
  return static_cast<Index>(std::floor(x + 0.5 + 1e-9));
}

// Instance order for one class: score descending, then index ascending. This
// is a strict total order, so the first c entries are well defined under ties.
template <typename Derived>
struct ScoreOrder {
  const Eigen::MatrixBase<Derived>& scores;
  Index column;
  bool operator()(Index a, Index b) const {
    const auto sa = scores(a, column);
    const auto sb = scores(b, column);
    return sa != sb ? sa > sb : a < b;
  }
};

}  // namespace detail

// Positive for the arg-max class of each row (lowest index on ties).
template <typename Derived>
PseudoLabels top1(const Eigen::MatrixBase<Derived>& probabilities) {
  PseudoLabels out = PseudoLabels::Zero(probabilities.rows(), probabilities.cols());
  if (probabilities.cols() == 0) return out;
  for (Index i = 0; i < probabilities.rows(); ++i) {
    Index best = 0;
    for (Index k = 1; k < probabilities.cols(); ++k)
      if (probabilities(i, k) > probabilities(i, best)) best = k;
    out(i, best) = 1;
  }
  return out;
}

// Positive for the l highest-probability classes of each row.
template <typename Derived>
PseudoLabels topk(const Eigen::MatrixBase<Derived>& probabilities, Index l) {
  const Index q = probabilities.cols();
  if (l < 1 || l > q)
    throw ContractError("topk: l = " + std::to_string(l) + " outside [1, " + std::to_string(q) + "]");
  PseudoLabels out = PseudoLabels::Zero(probabilities.rows(), q);
  std::vector<Index> order(static_cast<std::size_t>(q));
  for (Index i = 0; i < probabilities.rows(); ++i) {
    std::iota(order.begin(), order.end(), Index{0});
    std::partial_sort(order.begin(), order.begin() + l, order.end(), [&](Index a, Index b) {
      const auto sa = probabilities(i, a);
      const auto sb = probabilities(i, b);
      return sa != sb ? sa > sb : a < b;
    });
    for (Index r = 0; r < l; ++r) out(i, order[static_cast<std::size_t>(r)]) = 1;
  }
  return out;
}

// Mean positive count per labeled instance, rounded half-up, clamped to [1, q].
inline Index average_positive_count(const LabelMatrix& labeled_labels) {
  const Index q = labeled_labels.cols();
  if (labeled_labels.rows() == 0 || q == 0) throw ContractError("average_positive_count: no labeled data");
  const double total = labeled_labels.cast<double>().sum();
  const double mean = total / static_cast<double>(labeled_labels.rows());
  return std::clamp<Index>(detail::round_half_up(mean), 1, q);
}

// Positive iff probability >= tau.
template <typename Derived>
PseudoLabels global_threshold(const Eigen::MatrixBase<Derived>& probabilities, double tau) {
  return (probabilities.array() >= typename Derived::Scalar(tau)).template cast<std::int8_t>();
}

// Row j is positive where its probability >= per_instance_taus(j).
template <typename Derived, typename DerivedT>
PseudoLabels instance_adaptive_variant(const Eigen::MatrixBase<Derived>& probabilities,
                                       const Eigen::MatrixBase<DerivedT>& per_instance_taus) {
  if (per_instance_taus.size() != probabilities.rows())
    throw ShapeError("instance_adaptive_variant: " + std::to_string(per_instance_taus.size()) +
                     " thresholds for " + std::to_string(probabilities.rows()) + " instances");
  PseudoLabels out(probabilities.rows(), probabilities.cols());
  for (Index i = 0; i < probabilities.rows(); ++i)
    for (Index k = 0; k < probabilities.cols(); ++k)
      out(i, k) = probabilities(i, k) >= per_instance_taus(i) ? 1 : 0;
  return out;
}

// Class-distribution-aware thresholds. For class k the top
// c+ = round(eta_pos * gamma_k * m) scores become positive and the bottom
// c- = min(round(eta_neg * rho_k * m), m - c+) become negative. The thresholds
// are the c+-th largest and c- -th smallest scores.
template <typename Derived>
ThresholdTable cat_thresholds(const Eigen::MatrixBase<Derived>& probabilities,
                              const ClassDistribution& distribution, const ReliableInterval& interval) {
  interval.validate();
  if (distribution.source != DistributionSource::EstimatedFromLabeled)
    throw ContractError("cat_thresholds: the class distribution must be estimated from labeled data");
  const Index m = probabilities.rows();
  const Index q = probabilities.cols();
  if (m == 0) throw ContractError("cat_thresholds: no unlabeled instances");
  if (distribution.num_classes() != q || distribution.rho.size() != q)
    throw ShapeError("cat_thresholds: distribution has " + std::to_string(distribution.num_classes()) +
                     " classes, probabilities have " + std::to_string(q));

  constexpr double kInf = std::numeric_limits<double>::infinity();
  ThresholdTable table;
  table.num_instances = m;
  table.tau_alpha = VectorXd::Constant(q, kInf);
  table.tau_beta = VectorXd::Constant(q, -kInf);
  table.positive_counts.assign(static_cast<std::size_t>(q), 0);
  table.negative_counts.assign(static_cast<std::size_t>(q), 0);

  std::vector<Index> order(static_cast<std::size_t>(m));
  const auto md = static_cast<double>(m);
  for (Index k = 0; k < q; ++k) {
    if (distribution.gamma(k) <= 0.0) table.classes_without_positives.push_back(k);
    const Index c_pos = std::clamp<Index>(detail::round_half_up(interval.eta_pos * distribution.gamma(k) * md), 0, m);
    const Index c_neg =
        std::min(std::clamp<Index>(detail::round_half_up(interval.eta_neg * distribution.rho(k) * md), 0, m), m - c_pos);
    table.positive_counts[static_cast<std::size_t>(k)] = c_pos;
    table.negative_counts[static_cast<std::size_t>(k)] = c_neg;

    const detail::ScoreOrder<Derived> desc{probabilities, k};
    std::iota(order.begin(), order.end(), Index{0});
    if (c_pos > 0) {
      std::nth_element(order.begin(), order.begin() + (c_pos - 1), order.end(), desc);
      table.tau_alpha(k) = static_cast<double>(probabilities(order[static_cast<std::size_t>(c_pos - 1)], k));
    }
    if (c_neg > 0) {
      // Position m - c_neg in descending order is the c_neg-th smallest.
      std::nth_element(order.begin(), order.begin() + (m - c_neg), order.end(), desc);
      table.tau_beta(k) = static_cast<double>(probabilities(order[static_cast<std::size_t>(m - c_neg)], k));
    }
  }
  return table;
}

// Assigns by rank, not by raw comparison, so ties at a threshold still yield
// exactly c+ positives and c- negatives. Positives are the first c+ instances
// in (score desc, index asc) order; negatives are the last c- of that order.
template <typename Derived>
PseudoLabels cap_assign(const Eigen::MatrixBase<Derived>& probabilities, const ThresholdTable& table) {
  const Index m = probabilities.rows();
  const Index q = probabilities.cols();
  if (table.num_classes() != q || table.num_instances != m)
    throw ShapeError("cap_assign: table built for " + std::to_string(table.num_instances) + "x" +
                     std::to_string(table.num_classes()) + ", probabilities are " + std::to_string(m) + "x" +
                     std::to_string(q));
  PseudoLabels out = PseudoLabels::Constant(m, q, kIgnored);
  std::vector<Index> order(static_cast<std::size_t>(m));
  for (Index k = 0; k < q; ++k) {
    const Index c_pos = table.positive_counts[static_cast<std::size_t>(k)];
    const Index c_neg = table.negative_counts[static_cast<std::size_t>(k)];
    if (c_pos < 0 || c_neg < 0 || c_pos + c_neg > m)
      throw ContractError("cap_assign: invalid counts for class " + std::to_string(k));
    if (c_pos == 0 && c_neg == 0) continue;
    const detail::ScoreOrder<Derived> desc{probabilities, k};
    std::iota(order.begin(), order.end(), Index{0});
    if (c_pos > 0) {
      std::nth_element(order.begin(), order.begin() + (c_pos - 1), order.end(), desc);
      for (Index r = 0; r < c_pos; ++r) out(order[static_cast<std::size_t>(r)], k) = 1;
    }
    if (c_neg > 0) {
      // The tail partition [m - c_neg, m) is disjoint from the head [0, c_pos).
      std::nth_element(order.begin() + c_pos, order.begin() + (m - c_neg), order.end(), desc);
      for (Index r = m - c_neg; r < m; ++r) out(order[static_cast<std::size_t>(r)], k) = 0;
    }
  }
  return out;
}

}  // namespace cap
