#include <cmath>
#include <random>

#include "doctest.h"

#include "cap/errors.hpp"
#include "cap/loss.hpp"
#include "gradient_check.hpp"
#include "oracles.hpp"

using namespace cap;

namespace {

LossConfig asl(double lp, double ln) {
  LossConfig c;
  c.kind = LossKind::Asl;
  c.lambda_pos = lp;
  c.lambda_neg = ln;
  return c;
}

LabelMatrix with_ignored(const LabelMatrix& labels, double rate, std::mt19937_64& rng) {
  std::bernoulli_distribution drop(rate);
  LabelMatrix out = labels;
  for (Index i = 0; i < out.rows(); ++i)
    for (Index k = 0; k < out.cols(); ++k)
      if (drop(rng)) out(i, k) = kIgnored;
  return out;
}

}  // namespace

TEST_CASE("positive term values") {
  CHECK(positive_term(0.5, 0.0) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(positive_term(0.5, 2.0) == doctest::Approx(0.173287).epsilon(1e-6));
  CHECK(positive_term(1.0 - 1e-12, 1.0) < 1e-20);
}

TEST_CASE("negative term values") {
  CHECK(negative_term(0.5, 0.0) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(negative_term(0.5, 1.0) == doctest::Approx(0.346574).epsilon(1e-6));
  CHECK(negative_term(1e-12, 4.0) < 1e-20);
}

TEST_CASE("term derivatives match the closed forms") {
  for (double f : {0.1, 0.3, 0.5, 0.8}) {
    CHECK(positive_term_derivative(f, 0.0) == doctest::Approx(-1.0 / f));
    CHECK(negative_term_derivative(f, 0.0) == doctest::Approx(1.0 / (1.0 - f)));
    CHECK(positive_term_derivative(f, 1.0) == doctest::Approx(std::log(f) - (1.0 - f) / f));
    CHECK(negative_term_derivative(f, 1.0) == doctest::Approx(-std::log(1.0 - f) + f / (1.0 - f)));
  }
}

TEST_CASE("supervised loss single instance") {
  MatrixXd p(1, 1);
  p << 0.5;
  LabelMatrix y(1, 1);
  y << 1;
  CHECK(supervised_loss(p, y, asl(2.0, 4.0)).value == doctest::Approx(0.173287).epsilon(1e-6));
}

TEST_CASE("supervised loss averages per-instance sums") {
  MatrixXd p(2, 2);
  p << 0.5, 0.5, 0.5, 0.5;
  LabelMatrix y(2, 2);
  y << 1, 0, 0, 0;
  LossConfig bce;
  bce.kind = LossKind::Bce;
  CHECK(supervised_loss(p, y, bce).value == doctest::Approx(2.0 * std::log(2.0)));
}

TEST_CASE("asl with zero focusing equals binary cross entropy") {
  std::mt19937_64 rng(3);
  LossConfig bce;
  bce.kind = LossKind::Bce;
  for (int draw = 0; draw < 100; ++draw) {
    const MatrixXd p = oracle::uniform_matrix(7, 5, 0.001, 0.999, rng);
    const LabelMatrix y = oracle::bernoulli_labels(7, 5, 0.4, rng);
    const auto a = supervised_loss(p, y, asl(0.0, 0.0));
    const auto b = supervised_loss(p, y, bce);
    oracle::Real reference = 0;
    for (Index i = 0; i < p.rows(); ++i)
      for (Index k = 0; k < p.cols(); ++k) reference += oracle::bce_entry(p(i, k), y(i, k));
    reference /= p.rows();
    CHECK(std::abs(a.value - b.value) <= 1e-12);
    CHECK(std::abs(a.value - static_cast<double>(reference)) <= 1e-12);
    CHECK((a.grad - b.grad).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("bce ignores the focusing parameters") {
  LossConfig c;
  c.kind = LossKind::Bce;
  c.lambda_pos = 3.0;
  c.lambda_neg = 7.0;
  CHECK(c.effective_lambda_pos() == 0.0);
  CHECK(c.effective_lambda_neg() == 0.0);
}

TEST_CASE("supervised loss gradient matches finite differences") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lambda(0.0, 4.0);
  double worst = 0.0;
  for (int draw = 0; draw < 300; ++draw) {
    const MatrixXd p = oracle::uniform_matrix(3, 4, 0.02, 0.98, rng);
    const LabelMatrix y = oracle::bernoulli_labels(3, 4, 0.5, rng);
    worst = std::max(worst, gradient_check::loss_error(p, y, asl(lambda(rng), lambda(rng)), false));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("unlabeled loss gradient matches finite differences") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> lambda(0.0, 4.0);
  double worst = 0.0;
  for (int draw = 0; draw < 300; ++draw) {
    const MatrixXd p = oracle::uniform_matrix(4, 3, 0.02, 0.98, rng);
    LabelMatrix y = with_ignored(oracle::bernoulli_labels(4, 3, 0.5, rng), 0.4, rng);
    if (active_rows(y) == 0) y(0, 0) = 1;
    worst = std::max(worst, gradient_check::loss_error(p, y, asl(lambda(rng), lambda(rng)), true));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("gradient is zero outside the clamp band") {
  LossConfig c = asl(1.0, 4.0);
  c.probability_clamp = 1e-3;
  MatrixXd p(1, 4);
  p << 1e-5, 1.0 - 1e-5, 0.0, 1.0;
  LabelMatrix y(1, 4);
  y << 1, 0, 1, 0;
  const auto out = supervised_loss(p, y, c);
  CHECK(out.grad.cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::isfinite(out.value));
  CHECK(out.value <= 4.0 * -std::log(1e-3) + 1e-12);
}

TEST_CASE("losses are non-negative") {
  std::mt19937_64 rng(5);
  for (int draw = 0; draw < 200; ++draw) {
    const MatrixXd p = oracle::uniform_matrix(5, 5, 0.0, 1.0, rng);
    const LabelMatrix y = oracle::bernoulli_labels(5, 5, 0.3, rng);
    CHECK(supervised_loss(p, y, asl(1.0, 4.0)).value >= 0.0);
  }
}

TEST_CASE("positive term decreases and negative term increases on a grid") {
  for (double lambda : {0.0, 1.0, 2.0, 4.0}) {
    double prev_pos = positive_term(0.001, lambda);
    double prev_neg = negative_term(0.001, lambda);
    for (int i = 2; i < 1000; ++i) {
      const double f = i / 1000.0;
      const double pos = positive_term(f, lambda);
      const double neg = negative_term(f, lambda);
      CHECK(pos < prev_pos);
      CHECK(neg > prev_neg);
      prev_pos = pos;
      prev_neg = neg;
    }
  }
}

TEST_CASE("unlabeled loss with everything ignored is zero") {
  MatrixXd p = MatrixXd::Constant(3, 2, 0.3);
  LabelMatrix y = LabelMatrix::Constant(3, 2, kIgnored);
  const auto out = unlabeled_loss(p, y, asl(1.0, 4.0));
  CHECK(out.value == 0.0);
  CHECK(out.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("unlabeled loss without ignored entries equals supervised loss") {
  std::mt19937_64 rng(8);
  for (int draw = 0; draw < 50; ++draw) {
    const MatrixXd p = oracle::uniform_matrix(6, 4, 0.01, 0.99, rng);
    const LabelMatrix y = oracle::bernoulli_labels(6, 4, 0.3, rng);
    const auto a = unlabeled_loss(p, y, asl(1.0, 4.0));
    const auto b = supervised_loss(p, y, asl(1.0, 4.0));
    CHECK(a.value == b.value);
    CHECK(a.grad == b.grad);
  }
}

TEST_CASE("unlabeled loss with one committed entry") {
  MatrixXd p = MatrixXd::Constant(2, 3, 0.5);
  LabelMatrix y = LabelMatrix::Constant(2, 3, kIgnored);
  y(1, 2) = 1;
  CHECK(unlabeled_loss(p, y, asl(0.0, 4.0)).value == doctest::Approx(0.693147).epsilon(1e-6));
}

TEST_CASE("ignored entries carry no gradient") {
  std::mt19937_64 rng(9);
  const MatrixXd p = oracle::uniform_matrix(5, 4, 0.05, 0.95, rng);
  const LabelMatrix y = with_ignored(oracle::bernoulli_labels(5, 4, 0.5, rng), 0.5, rng);
  const auto out = unlabeled_loss(p, y, asl(1.0, 4.0));
  for (Index i = 0; i < y.rows(); ++i)
    for (Index k = 0; k < y.cols(); ++k)
      if (y(i, k) == kIgnored) CHECK(out.grad(i, k) == 0.0);
}

TEST_CASE("ignore mask linearity") {
  std::mt19937_64 rng(10);
  for (int draw = 0; draw < 100; ++draw) {
    const MatrixXd p = oracle::uniform_matrix(6, 5, 0.02, 0.98, rng);
    const LabelMatrix y = with_ignored(oracle::bernoulli_labels(6, 5, 0.4, rng), 0.3, rng);
    const Index rows = active_rows(y);
    if (rows == 0) continue;
    const auto out = unlabeled_loss(p, y, asl(1.0, 4.0));
    double complement = 0.0;
    for (Index i = 0; i < y.rows(); ++i)
      for (Index k = 0; k < y.cols(); ++k) {
        if (y(i, k) == kIgnored) continue;
        MatrixXd pi(1, 1);
        pi << p(i, k);
        LabelMatrix yi(1, 1);
        yi << y(i, k);
        complement += supervised_loss(pi, yi, asl(1.0, 4.0)).value;
      }
    CHECK(out.value * static_cast<double>(rows) == doctest::Approx(complement).epsilon(1e-12));
  }
}

TEST_CASE("active rows counts rows with a committed entry") {
  LabelMatrix y(3, 2);
  y << -1, -1, 0, -1, 1, 1;
  CHECK(active_rows(y) == 2);
}

TEST_CASE("loss errors") {
  MatrixXd p = MatrixXd::Constant(2, 2, 0.5);
  LabelMatrix bad(2, 2);
  bad << 1, 2, 0, 0;
  CHECK_THROWS_AS(unlabeled_loss(p, bad, asl(1.0, 4.0)), ContractError);
  LabelMatrix ignored(2, 2);
  ignored << 1, -1, 0, 0;
  CHECK_THROWS_AS(supervised_loss(p, ignored, asl(1.0, 4.0)), ContractError);
  LabelMatrix narrow = LabelMatrix::Zero(2, 3);
  CHECK_THROWS_AS(supervised_loss(p, narrow, asl(1.0, 4.0)), ShapeError);
  CHECK_THROWS_AS(unlabeled_loss(p, narrow, asl(1.0, 4.0)), ShapeError);
}

TEST_CASE("loss config validation") {
  LossConfig c;
  CHECK(c.kind == LossKind::Asl);
  CHECK(c.lambda_pos == 1.0);
  CHECK(c.lambda_neg == 4.0);
  CHECK(c.probability_clamp == 1e-7);
  c.lambda_neg = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = LossConfig{};
  c.probability_clamp = 0.5;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "loss.probability_clamp");
  }
}

TEST_CASE("loss works in single precision") {
  Eigen::MatrixXf p(1, 2);
  p << 0.5f, 0.25f;
  LabelMatrix y(1, 2);
  y << 1, 0;
  const auto out = supervised_loss(p, y, asl(0.0, 0.0));
  CHECK(out.value == doctest::Approx(std::log(2.0) - std::log(0.75)).epsilon(1e-6));
}
