#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "cap/errors.hpp"
#include "cap/types.hpp"

namespace cap {

struct AveragePrecision {
  double mean = 0.0;
  VectorXd per_class;                 // NaN for skipped classes
  std::vector<Index> skipped_classes;  // no positive in the ground truth
};

// Per class: rank by (score desc, index asc) and average precision@rank over
// the ranks of the positives. Classes without positives are skipped.
template <typename DerivedS, typename DerivedT>
AveragePrecision average_precision(const Eigen::MatrixBase<DerivedS>& scores,
                                   const Eigen::MatrixBase<DerivedT>& truth) {
  if (scores.rows() != truth.rows() || scores.cols() != truth.cols())
    throw ShapeError("average_precision: scores and truth differ in shape");
  const Index n = scores.rows();
  const Index q = scores.cols();
  AveragePrecision out;
  out.per_class = VectorXd::Constant(q, std::numeric_limits<double>::quiet_NaN());
  std::vector<Index> order(static_cast<std::size_t>(n));
  double total = 0.0;
  Index evaluated = 0;
  for (Index k = 0; k < q; ++k) {
    std::iota(order.begin(), order.end(), Index{0});
    std::sort(order.begin(), order.end(), [&](Index a, Index b) {
      const auto sa = scores(a, k);
      const auto sb = scores(b, k);
      return sa != sb ? sa > sb : a < b;
    });
    Index hits = 0;
    double precision_sum = 0.0;
    for (Index r = 0; r < n; ++r) {
      if (static_cast<int>(truth(order[static_cast<std::size_t>(r)], k)) == 1) {
        ++hits;
        precision_sum += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    }
    if (hits == 0) {
      out.skipped_classes.push_back(k);
      continue;
    }
    out.per_class(k) = precision_sum / static_cast<double>(hits);
    total += out.per_class(k);
    ++evaluated;
  }
  if (evaluated == 0) throw MetricError("mean_average_precision: no class has a positive instance");
  out.mean = total / static_cast<double>(evaluated);
  return out;
}

template <typename DerivedS, typename DerivedT>
double mean_average_precision(const Eigen::MatrixBase<DerivedS>& scores, const Eigen::MatrixBase<DerivedT>& truth) {
  return average_precision(scores, truth).mean;
}

struct ConfusionCounts {
  Index tp = 0;
  Index fp = 0;
  Index fn = 0;
};

inline double f1_score(const ConfusionCounts& c) {
  const Index denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

// Quality of pseudo-labels against the hidden truth.
//
// Precision, recall, CF1 and OF1 grade committed labels only: entries equal to
// -1 are left out of the confusion counts. The pseudo-labeling error counts
// -1 as "not positive": per class k,
//   eps_pos_k = #(truth = 1, pseudo != 1) / m
//   eps_neg_k = #(truth = 0, pseudo == 1) / m
// and epsilon is the largest eps_pos_k + eps_neg_k over classes; epsilon_pos
// and epsilon_neg are the two parts at that class.
struct PseudoLabelReport {
  VectorXd precision;
  VectorXd recall;
  double cf1 = 0.0;
  double of1 = 0.0;
  VectorXd epsilon_per_class;
  VectorXd epsilon_pos_per_class;
  VectorXd epsilon_neg_per_class;
  double epsilon = 0.0;
  double epsilon_pos = 0.0;
  double epsilon_neg = 0.0;
  Index worst_class = 0;
};

template <typename DerivedP, typename DerivedT>
std::vector<ConfusionCounts> confusion_per_class(const Eigen::MatrixBase<DerivedP>& pseudo,
                                                 const Eigen::MatrixBase<DerivedT>& truth) {
  if (pseudo.rows() != truth.rows() || pseudo.cols() != truth.cols())
    throw ShapeError("pseudo-labels and truth differ in shape");
  std::vector<ConfusionCounts> counts(static_cast<std::size_t>(pseudo.cols()));
  for (Index k = 0; k < pseudo.cols(); ++k) {
    auto& c = counts[static_cast<std::size_t>(k)];
    for (Index i = 0; i < pseudo.rows(); ++i) {
      const auto p = static_cast<int>(pseudo(i, k));
      const auto t = static_cast<int>(truth(i, k));
      if (p == kIgnored) continue;
      if (p == 1 && t == 1) ++c.tp;
      else if (p == 1) ++c.fp;
      else if (t == 1) ++c.fn;
    }
  }
  return counts;
}

struct F1Scores {
  double cf1 = 0.0;
  double of1 = 0.0;
};

template <typename DerivedP, typename DerivedT>
F1Scores cf1_of1(const Eigen::MatrixBase<DerivedP>& pseudo, const Eigen::MatrixBase<DerivedT>& truth) {
  const auto counts = confusion_per_class(pseudo, truth);
  F1Scores out;
  if (counts.empty()) return out;
  ConfusionCounts pooled;
  double sum = 0.0;
  for (const auto& c : counts) {
    sum += f1_score(c);
    pooled.tp += c.tp;
    pooled.fp += c.fp;
    pooled.fn += c.fn;
  }
  out.cf1 = sum / static_cast<double>(counts.size());
  out.of1 = f1_score(pooled);
  return out;
}

template <typename DerivedP, typename DerivedT>
PseudoLabelReport pseudo_label_error(const Eigen::MatrixBase<DerivedP>& pseudo,
                                     const Eigen::MatrixBase<DerivedT>& truth) {
  if (pseudo.rows() != truth.rows() || pseudo.cols() != truth.cols())
    throw ShapeError("pseudo_label_error: pseudo-labels and truth differ in shape");
  const Index m = pseudo.rows();
  const Index q = pseudo.cols();
  PseudoLabelReport out;
  out.epsilon_pos_per_class = VectorXd::Zero(q);
  out.epsilon_neg_per_class = VectorXd::Zero(q);
  if (m == 0) {
    out.epsilon_per_class = VectorXd::Zero(q);
    return out;
  }
  for (Index k = 0; k < q; ++k) {
    Index missed = 0;
    Index wrong = 0;
    for (Index i = 0; i < m; ++i) {
      const bool assigned_positive = static_cast<int>(pseudo(i, k)) == 1;
      const bool truly_positive = static_cast<int>(truth(i, k)) == 1;
      if (truly_positive && !assigned_positive) ++missed;
      if (!truly_positive && assigned_positive) ++wrong;
    }
    out.epsilon_pos_per_class(k) = static_cast<double>(missed) / static_cast<double>(m);
    out.epsilon_neg_per_class(k) = static_cast<double>(wrong) / static_cast<double>(m);
  }
  out.epsilon_per_class = out.epsilon_pos_per_class + out.epsilon_neg_per_class;
  if (q > 0) {
    out.epsilon = out.epsilon_per_class.maxCoeff(&out.worst_class);
    out.epsilon_pos = out.epsilon_pos_per_class(out.worst_class);
    out.epsilon_neg = out.epsilon_neg_per_class(out.worst_class);
  }
  return out;
}

// Everything above in one report.
template <typename DerivedP, typename DerivedT>
PseudoLabelReport pseudo_label_report(const Eigen::MatrixBase<DerivedP>& pseudo,
                                      const Eigen::MatrixBase<DerivedT>& truth) {
  PseudoLabelReport out = pseudo_label_error(pseudo, truth);
  const auto counts = confusion_per_class(pseudo, truth);
  const Index q = pseudo.cols();
  out.precision = VectorXd::Zero(q);
  out.recall = VectorXd::Zero(q);
  for (Index k = 0; k < q; ++k) {
    const auto& c = counts[static_cast<std::size_t>(k)];
    if (c.tp + c.fp > 0) out.precision(k) = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    if (c.tp + c.fn > 0) out.recall(k) = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  }
  const F1Scores f1 = cf1_of1(pseudo, truth);
  out.cf1 = f1.cf1;
  out.of1 = f1.of1;
  return out;
}

}  // namespace cap
