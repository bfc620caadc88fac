#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "cap/errors.hpp"
#include "cap/types.hpp"

namespace cap {

enum class LossKind { Bce, Asl };

struct LossConfig {
  LossKind kind = LossKind::Asl;
  double lambda_pos = 1.0;  // focusing exponent on positive labels
  double lambda_neg = 4.0;  // focusing exponent on negative labels
  // Probabilities are clamped to [clamp, 1 - clamp] before the logs, which
  // bounds every per-entry loss by -log(clamp).
  double probability_clamp = 1e-7;

  double effective_lambda_pos() const { return kind == LossKind::Bce ? 0.0 : lambda_pos; }
  double effective_lambda_neg() const { return kind == LossKind::Bce ? 0.0 : lambda_neg; }

  void validate() const {
    if (!(lambda_pos >= 0.0) || !std::isfinite(lambda_pos))
      throw ConfigError("loss.lambda_pos", "must be a finite value >= 0");
    if (!(lambda_neg >= 0.0) || !std::isfinite(lambda_neg))
      throw ConfigError("loss.lambda_neg", "must be a finite value >= 0");
    if (!(probability_clamp > 0.0 && probability_clamp < 0.5))
      throw ConfigError("loss.probability_clamp", "must lie in (0, 0.5)");
  }
};

// l1(f) = -(1 - f)^lambda * log(f)
template <typename Scalar>
Scalar positive_term(Scalar f, Scalar lambda) {
  using std::log;
  using std::pow;
  const Scalar focus = lambda == Scalar(0) ? Scalar(1) : pow(Scalar(1) - f, lambda);
  return -focus * log(f);
}

// l0(f) = -f^lambda * log(1 - f)
template <typename Scalar>
Scalar negative_term(Scalar f, Scalar lambda) {
  using std::log;
  using std::pow;
  const Scalar focus = lambda == Scalar(0) ? Scalar(1) : pow(f, lambda);
  return -focus * log(Scalar(1) - f);
}

template <typename Scalar>
Scalar positive_term_derivative(Scalar f, Scalar lambda) {
  using std::log;
  using std::pow;
  const Scalar one_minus = Scalar(1) - f;
  if (lambda == Scalar(0)) return -Scalar(1) / f;
  return lambda * pow(one_minus, lambda - Scalar(1)) * log(f) - pow(one_minus, lambda) / f;
}

template <typename Scalar>
Scalar negative_term_derivative(Scalar f, Scalar lambda) {
  using std::log;
  using std::pow;
  const Scalar one_minus = Scalar(1) - f;
  if (lambda == Scalar(0)) return Scalar(1) / one_minus;
  return -lambda * pow(f, lambda - Scalar(1)) * log(one_minus) + pow(f, lambda) / one_minus;
}

template <typename Scalar>
struct LossValue {
  Scalar value = Scalar(0);
  Matrix<Scalar> grad;  // d value / d probabilities, same shape as the input
};

namespace detail {

// Sum over entries with target in {0, 1}; entries equal to -1 are skipped.
// The result and gradient are divided by `normalizer`.
template <typename DerivedP, typename DerivedT>
LossValue<typename DerivedP::Scalar> masked_loss(const Eigen::MatrixBase<DerivedP>& probabilities,
                                                 const Eigen::MatrixBase<DerivedT>& targets,
                                                 const LossConfig& config,
                                                 typename DerivedP::Scalar normalizer) {
  using Scalar = typename DerivedP::Scalar;
  const Scalar lo = Scalar(config.probability_clamp);
  const Scalar hi = Scalar(1) - lo;
  const Scalar lambda_pos = Scalar(config.effective_lambda_pos());
  const Scalar lambda_neg = Scalar(config.effective_lambda_neg());

  LossValue<Scalar> out;
  out.grad = Matrix<Scalar>::Zero(probabilities.rows(), probabilities.cols());
  if (normalizer <= Scalar(0)) return out;
  // Row-major accumulation order: one instance at a time, classes in order.
  for (Index i = 0; i < probabilities.rows(); ++i) {
    for (Index k = 0; k < probabilities.cols(); ++k) {
      const auto target = static_cast<int>(targets(i, k));
      if (target == kIgnored) continue;
      const Scalar f = probabilities(i, k);
      const Scalar fc = std::clamp(f, lo, hi);
      const bool inside = f >= lo && f <= hi;
      if (target == 1) {
        out.value += positive_term(fc, lambda_pos);
        if (inside) out.grad(i, k) = positive_term_derivative(fc, lambda_pos) / normalizer;
      } else {
        out.value += negative_term(fc, lambda_neg);
        if (inside) out.grad(i, k) = negative_term_derivative(fc, lambda_neg) / normalizer;
      }
    }
  }
  out.value /= normalizer;
  return out;
}

template <typename DerivedP, typename DerivedT>
void check_same_shape(const Eigen::MatrixBase<DerivedP>& a, const Eigen::MatrixBase<DerivedT>& b,
                      const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(what) + ": probabilities are " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " but targets are " + std::to_string(b.rows()) +
                     "x" + std::to_string(b.cols()));
}

}  // namespace detail

// Mean over instances of sum_k y_k * l1(f_k) + (1 - y_k) * l0(f_k).
template <typename DerivedP, typename DerivedL>
LossValue<typename DerivedP::Scalar> supervised_loss(const Eigen::MatrixBase<DerivedP>& probabilities,
                                                     const Eigen::MatrixBase<DerivedL>& labels,
                                                     const LossConfig& config) {
  using Scalar = typename DerivedP::Scalar;
  detail::check_same_shape(probabilities, labels, "supervised_loss");
  for (Index i = 0; i < labels.rows(); ++i)
    for (Index k = 0; k < labels.cols(); ++k) {
      const auto y = static_cast<int>(labels(i, k));
      if (y != 0 && y != 1) throw ContractError("supervised_loss: labels must be 0 or 1");
    }
  return detail::masked_loss(probabilities, labels, config, Scalar(probabilities.rows()));
}

// Instances whose pseudo-labels contain at least one non-ignored entry.
template <typename DerivedT>
Index active_rows(const Eigen::MatrixBase<DerivedT>& pseudo) {
  Index count = 0;
  for (Index i = 0; i < pseudo.rows(); ++i)
    if ((pseudo.row(i).array() != typename DerivedT::Scalar(kIgnored)).any()) ++count;
  return count;
}

// Same per-entry loss as supervised_loss, but entries marked -1 contribute
// nothing and the sum is divided by the number of instances that have at least
// one non-ignored entry. With no -1 entries this equals supervised_loss.
template <typename DerivedP, typename DerivedT>
LossValue<typename DerivedP::Scalar> unlabeled_loss(const Eigen::MatrixBase<DerivedP>& probabilities,
                                                    const Eigen::MatrixBase<DerivedT>& pseudo,
                                                    const LossConfig& config) {
  using Scalar = typename DerivedP::Scalar;
  detail::check_same_shape(probabilities, pseudo, "unlabeled_loss");
  for (Index i = 0; i < pseudo.rows(); ++i)
    for (Index k = 0; k < pseudo.cols(); ++k) {
      const auto y = static_cast<int>(pseudo(i, k));
      if (y != 0 && y != 1 && y != kIgnored)
        throw ContractError("unlabeled_loss: pseudo-labels must be 1, 0 or -1");
    }
  return detail::masked_loss(probabilities, pseudo, config, Scalar(active_rows(pseudo)));
}

}  // namespace cap
