#include <cmath>

#include "doctest.h"

#include "cap/errors.hpp"
#include "cap/theory.hpp"
#include "oracles.hpp"

using namespace cap;

namespace {

BoundTrial uniform_trial(Index n, Index m, Index q, double prior, Index trials) {
  BoundTrial t;
  t.n = n;
  t.m = m;
  t.priors = VectorXd::Constant(q, prior);
  t.trials = trials;
  return t;
}

}  // namespace

TEST_CASE("hoeffding bound arithmetic") {
  CHECK(std::abs(hoeffding_bound(100, 10000) - static_cast<double>(oracle::hoeffding(100, 10000))) <= 1e-6);
  CHECK(hoeffding_bound(100, 10000) == doctest::Approx(0.1732024).epsilon(1e-6));
  const double half = std::sqrt(std::log(50.0) / 100.0);
  CHECK(hoeffding_bound(50, 50) == doctest::Approx(2.0 * half));
  CHECK(hoeffding_bound(50, 1000000000) == doctest::Approx(half).epsilon(1e-3));
  CHECK(theoretical_violation_rate(100, 10000) == doctest::Approx(0.0202));
}

TEST_CASE("hoeffding bound domain") {
  CHECK_THROWS_AS(hoeffding_bound(1, 100), DomainError);
  CHECK_THROWS_AS(hoeffding_bound(100, 0), DomainError);
  CHECK(hoeffding_bound(2, 2) > 0.0);
}

TEST_CASE("hoeffding bound decreases in n and m from 3 on") {
  for (Index a = 3; a < 400; ++a) {
    CHECK(hoeffding_bound(a + 1, 50) < hoeffding_bound(a, 50));
    CHECK(hoeffding_bound(50, a + 1) < hoeffding_bound(50, a));
  }
}

TEST_CASE("coverage with a small trial budget") {
  const auto r = verify_theorem1(uniform_trial(100, 10000, 10, 0.2, 1000));
  CHECK(r.trials == 1000);
  CHECK(r.q == 10);
  CHECK(r.violations <= r.trials);
  CHECK(r.bound == hoeffding_bound(100, 10000));
  CHECK(r.within_bound);
  CHECK(r.max_gap_quantiles.size() == 4);
  CHECK(r.max_gap_quantiles.back().second == r.max_gaps.maxCoeff());
  for (std::size_t i = 1; i < r.max_gap_quantiles.size(); ++i)
    CHECK(r.max_gap_quantiles[i].second >= r.max_gap_quantiles[i - 1].second);
  const double rate = std::min(1.0, r.theoretical_rate);
  CHECK(r.slack == doctest::Approx(3.0 * std::sqrt(rate * (1.0 - rate) / 1000.0)));
}

TEST_CASE("coverage at the smallest sizes") {
  const auto r = verify_theorem1(uniform_trial(2, 2, 3, 0.5, 500));
  CHECK(r.theoretical_rate == 2.0);
  CHECK(r.within_bound);
}

TEST_CASE("trials replay from their index") {
  BoundTrial t = uniform_trial(30, 300, 4, 0.3, 200);
  t.seed = 17;
  const auto r = verify_theorem1(t);
  for (Index i : {0, 57, 199}) {
    const auto [labeled, unlabeled] = sample_trial_proportions(t, i);
    CHECK((labeled - unlabeled).cwiseAbs().maxCoeff() == r.max_gaps(i));
  }
  CHECK(verify_theorem1(t).max_gaps == r.max_gaps);
}

TEST_CASE("sampled proportions are multiples of 1/n and centred on the prior") {
  for (auto mode : {SamplingMode::Binomial, SamplingMode::Materialized}) {
    BoundTrial t = uniform_trial(40, 80, 3, 0.25, 100);
    t.mode = mode;
    double mean = 0.0;
    const int draws = 600;
    for (int i = 0; i < draws; ++i) {
      const auto [labeled, unlabeled] = sample_trial_proportions(t, i);
      for (Index k = 0; k < 3; ++k) {
        const double scaled = labeled(k) * 40.0;
        CHECK(scaled == doctest::Approx(std::round(scaled)));
      }
      mean += unlabeled.mean();
    }
    CHECK(mean / draws == doctest::Approx(0.25).epsilon(0.02));
  }
}

TEST_CASE("both sampling modes give the same gap law") {
  BoundTrial a = uniform_trial(50, 200, 3, 0.3, 3000);
  BoundTrial b = a;
  b.mode = SamplingMode::Materialized;
  const auto ra = verify_theorem1(a);
  const auto rb = verify_theorem1(b);
  // Standard error of each mean gap is about 0.0008.
  CHECK(std::abs(ra.max_gaps.mean() - rb.max_gaps.mean()) < 0.005);
}

TEST_CASE("verify_theorem1 rejects bad inputs") {
  auto t = uniform_trial(100, 100, 2, 0.5, 100);
  t.priors(1) = 1.0;
  CHECK_THROWS_AS(verify_theorem1(t), DomainError);
  t.priors(1) = 0.0;
  CHECK_THROWS_AS(verify_theorem1(t), DomainError);
  CHECK_THROWS_AS(verify_theorem1(uniform_trial(100, 100, 2, 0.5, 99)), ContractError);
  CHECK_THROWS_AS(verify_theorem1(uniform_trial(1, 100, 2, 0.5, 100)), DomainError);
}

TEST_CASE("coverage json fields") {
  const auto json = coverage_to_json(verify_theorem1(uniform_trial(20, 40, 2, 0.4, 100)));
  for (const char* key : {"n", "m", "q", "trials", "bound", "max_gap_quantiles", "violation_rate", "theoretical_rate"})
    CHECK(json.contains(key));
  CHECK(json["max_gap_quantiles"].contains("0.99"));
}

TEST_CASE("overlap curve of identical distributions") {
  LabelMatrix labels(4, 3);
  labels << 1, 0, 0, 1, 1, 0, 0, 0, 1, 1, 0, 0;
  const auto d = estimate_class_distribution(labels);
  const auto curve = distribution_overlap_curve(d, 4, d, 4);
  CHECK(curve.max_gap == 0.0);
  CHECK(curve.estimated == curve.truth);
  CHECK(curve.bound == hoeffding_bound(4, 4));
  CHECK(overlap_curve_csv(curve).rfind("class,estimated,truth\n", 0) == 0);
}

TEST_CASE("overlap curve with one class") {
  ClassDistribution a;
  a.gamma = VectorXd::Constant(1, 0.3);
  a.rho = VectorXd::Constant(1, 0.7);
  ClassDistribution b = a;
  b.gamma(0) = 0.5;
  b.rho(0) = 0.5;
  const auto curve = distribution_overlap_curve(a, 1, b, 10);
  CHECK(curve.max_gap == doctest::Approx(0.2));
  CHECK(std::isnan(curve.bound));
  CHECK(overlap_curve_csv(curve) == "class,estimated,truth\n0,0.3,0.5\n");
}

TEST_CASE("synthetic splits stay within the bound") {
  int within = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    SyntheticConfig c;
    c.num_instances = 2000;
    c.num_classes = 10;
    c.feature_dim = 4;
    c.seed = seed;
    const auto d = generate_synthetic(c);
    const auto data = partition(d, split(d, 0.05, 0.0, seed));
    const auto curve = distribution_overlap_curve(data);
    CHECK(data.unlabeled_truth.reads() == 1);
    // Cross-check against the dataset module on the same index sets.
    CHECK(curve.estimated == estimate_class_distribution(data.labeled_labels).gamma);
    if (curve.max_gap <= curve.bound) ++within;
  }
  CHECK(within >= 99);
}
