#include "cap/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "cap/errors.hpp"
#include "cap/io.hpp"
#include "cap/random.hpp"

namespace cap {

double hoeffding_bound(Index n, Index m) {
  if (n < 2 || m < 2)
    throw DomainError("hoeffding_bound: n and m must be >= 2 (got n = " + std::to_string(n) +
                      ", m = " + std::to_string(m) + ")");
  const auto term = [](Index count) {
    const auto x = static_cast<double>(count);
    return std::sqrt(std::log(x) / (2.0 * x));
  };
  return term(n) + term(m);
}

double theoretical_violation_rate(Index n, Index m) {
  return 2.0 / static_cast<double>(n) + 2.0 / static_cast<double>(m);
}

namespace {

void validate(const BoundTrial& trial) {
  if (trial.n < 2 || trial.m < 2) throw DomainError("verify_theorem1: n and m must be >= 2");
  if (trial.priors.size() < 1) throw DomainError("verify_theorem1: at least one class prior is required");
  for (Index k = 0; k < trial.priors.size(); ++k)
    if (!(trial.priors(k) > 0.0 && trial.priors(k) < 1.0))
      throw DomainError("verify_theorem1: prior " + format_double(trial.priors(k)) + " of class " +
                        std::to_string(k) + " must lie in the open interval (0, 1)");
  if (trial.trials < 100) throw ContractError("verify_theorem1: at least 100 trials are required");
}

VectorXd draw_proportions(std::mt19937_64& rng, const VectorXd& priors, Index count, SamplingMode mode) {
  const Index q = priors.size();
  if (mode == SamplingMode::Binomial) {
    VectorXd out(q);
    for (Index k = 0; k < q; ++k) {
      std::binomial_distribution<long long> binomial(count, priors(k));
      out(k) = static_cast<double>(binomial(rng)) / static_cast<double>(count);
    }
    return out;
  }
  LabelMatrix labels(count, q);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (Index i = 0; i < count; ++i)
    for (Index k = 0; k < q; ++k) labels(i, k) = uniform(rng) < priors(k) ? 1 : 0;
  return estimate_class_distribution(labels).gamma;
}

}  // namespace

std::pair<VectorXd, VectorXd> sample_trial_proportions(const BoundTrial& trial, Index t) {
  std::mt19937_64 rng(mix_seed(trial.seed, static_cast<std::uint64_t>(t)));
  VectorXd labeled = draw_proportions(rng, trial.priors, trial.n, trial.mode);
  VectorXd unlabeled = draw_proportions(rng, trial.priors, trial.m, trial.mode);
  return {std::move(labeled), std::move(unlabeled)};
}

CoverageReport verify_theorem1(const BoundTrial& trial) {
  validate(trial);
  CoverageReport report;
  report.n = trial.n;
  report.m = trial.m;
  report.q = trial.num_classes();
  report.trials = trial.trials;
  report.bound = hoeffding_bound(trial.n, trial.m);
  report.max_gaps.resize(trial.trials);
  for (Index t = 0; t < trial.trials; ++t) {
    const auto [labeled, unlabeled] = sample_trial_proportions(trial, t);
    report.max_gaps(t) = (labeled - unlabeled).cwiseAbs().maxCoeff();
    if (report.max_gaps(t) > report.bound) ++report.violations;
  }

  std::vector<double> sorted(report.max_gaps.data(), report.max_gaps.data() + report.max_gaps.size());
  std::sort(sorted.begin(), sorted.end());
  for (double level : {0.5, 0.9, 0.99, 1.0}) {
    const auto rank = std::max<Index>(1, static_cast<Index>(std::ceil(level * static_cast<double>(trial.trials))));
    report.max_gap_quantiles.emplace_back(level, sorted[static_cast<std::size_t>(rank - 1)]);
  }

  report.violation_rate = static_cast<double>(report.violations) / static_cast<double>(trial.trials);
  report.theoretical_rate = theoretical_violation_rate(trial.n, trial.m);
  const double r = std::clamp(report.theoretical_rate, 0.0, 1.0);
  report.slack = 3.0 * std::sqrt(r * (1.0 - r) / static_cast<double>(trial.trials));
  report.within_bound = report.violation_rate <= report.theoretical_rate + report.slack;
  return report;
}

nlohmann::json coverage_to_json(const CoverageReport& report) {
  nlohmann::json quantiles = nlohmann::json::object();
  for (const auto& [level, value] : report.max_gap_quantiles) quantiles[format_double(level)] = value;
  return nlohmann::json{{"n", report.n},
                        {"m", report.m},
                        {"q", report.q},
                        {"trials", report.trials},
                        {"bound", report.bound},
                        {"max_gap_quantiles", quantiles},
                        {"violations", report.violations},
                        {"violation_rate", report.violation_rate},
                        {"theoretical_rate", report.theoretical_rate},
                        {"slack", report.slack},
                        {"within_bound", report.within_bound},
                        {"sampling",
                         "labeled and unlabeled labels drawn i.i.d. from the priors; finite-pool "
                         "splits without replacement concentrate faster, so this is conservative"}};
}

OverlapCurve distribution_overlap_curve(const ClassDistribution& labeled, Index n,
                                        const ClassDistribution& unlabeled_truth, Index m) {
  if (labeled.num_classes() != unlabeled_truth.num_classes())
    throw ShapeError("distribution_overlap_curve: class counts differ");
  OverlapCurve curve;
  curve.estimated = labeled.gamma;
  curve.truth = unlabeled_truth.gamma;
  curve.max_gap = curve.estimated.size() ? (curve.estimated - curve.truth).cwiseAbs().maxCoeff() : 0.0;
  curve.n = n;
  curve.m = m;
  curve.bound = (n >= 2 && m >= 2) ? hoeffding_bound(n, m) : std::numeric_limits<double>::quiet_NaN();
  return curve;
}

OverlapCurve distribution_overlap_curve(const SemiSupervisedData& data) {
  const auto labeled = estimate_class_distribution(data.labeled_labels);
  const auto truth =
      estimate_class_distribution(data.unlabeled_truth.reveal(), DistributionSource::TrueFromUnlabeled);
  return distribution_overlap_curve(labeled, data.num_labeled(), truth, data.num_unlabeled());
}

std::string overlap_curve_csv(const OverlapCurve& curve) {
  std::ostringstream os;
  os << "class,estimated,truth\n";
  for (Index k = 0; k < curve.estimated.size(); ++k)
    os << k << ',' << format_double(curve.estimated(k)) << ',' << format_double(curve.truth(k)) << '\n';
  return os.str();
}

}  // namespace cap
