#include "cap/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <string_view>

#include "cap/errors.hpp"
#include "cap/io.hpp"

namespace cap {

void MultiLabelDataset::validate() const {
  if (features.rows() != labels.rows())
    throw ShapeError("feature rows (" + std::to_string(features.rows()) +
                     ") differ from label rows (" + std::to_string(labels.rows()) + ")");
  if (labels.cols() < 2) throw ContractError("a multi-label dataset needs at least 2 classes");
  if (!class_names.empty() && static_cast<Index>(class_names.size()) != labels.cols())
    throw ShapeError("class_names has " + std::to_string(class_names.size()) +
                     " entries for " + std::to_string(labels.cols()) + " classes");
  if (((labels.array() != 0) && (labels.array() != 1)).any())
    throw ContractError("labels must be 0 or 1");
}

void SyntheticConfig::validate() const {
  if (num_instances < 1) throw ConfigError("num_instances", "must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes", "must be >= 2");
  if (feature_dim < 1) throw ConfigError("feature_dim", "must be >= 1");
  if (!(imbalance_ratio >= 1.0) || !std::isfinite(imbalance_ratio))
    throw ConfigError("imbalance_ratio", "must be a finite value >= 1");
  if (!(base_positive_rate > 0.0 && base_positive_rate < 1.0))
    throw ConfigError("base_positive_rate", "must lie in (0, 1)");
  if (!(label_noise >= 0.0 && label_noise < 0.5))
    throw ConfigError("label_noise", "must lie in [0, 0.5)");
}

VectorXd long_tail_priors(const SyntheticConfig& config) {
  config.validate();
  const Index q = config.num_classes;
  VectorXd priors(q);
  for (Index k = 0; k < q; ++k) {
    const double exponent = -static_cast<double>(k) / static_cast<double>(q - 1);
    priors(k) = config.base_positive_rate * std::pow(config.imbalance_ratio, exponent);
  }
  return priors;
}

MultiLabelDataset generate_synthetic(const SyntheticConfig& config) {
  const VectorXd priors = long_tail_priors(config);
  const Index n = config.num_instances;
  const Index d = config.feature_dim;
  const Index q = config.num_classes;

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  MultiLabelDataset out;
  out.features.resize(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) out.features(i, j) = normal(rng);

  MatrixXd directions(d, q);
  for (Index k = 0; k < q; ++k) {
    for (Index j = 0; j < d; ++j) directions(j, k) = normal(rng);
    directions.col(k).normalize();
  }
  const MatrixXd scores = out.features * directions;

  out.labels = LabelMatrix::Zero(n, q);
  for (Index k = 0; k < q; ++k) out.class_names.push_back("y" + std::to_string(k));
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index k = 0; k < q; ++k) {
    const auto positives = std::clamp<Index>(
        static_cast<Index>(std::floor(priors(k) * static_cast<double>(n) + 0.5)), 0, n);
    if (positives == 0) continue;
    std::iota(order.begin(), order.end(), Index{0});
    const auto by_score_desc = [&](Index a, Index b) {
      const double sa = scores(a, k), sb = scores(b, k);
      return sa != sb ? sa > sb : a < b;
    };
    std::nth_element(order.begin(), order.begin() + (positives - 1), order.end(), by_score_desc);
    for (Index r = 0; r < positives; ++r) out.labels(order[static_cast<std::size_t>(r)], k) = 1;
  }

  if (config.label_noise > 0.0) {
    std::bernoulli_distribution flip(config.label_noise);
    for (Index i = 0; i < n; ++i)
      for (Index k = 0; k < q; ++k)
        if (flip(rng)) out.labels(i, k) = static_cast<std::int8_t>(1 - out.labels(i, k));
  }
  return out;
}

SSMLLSplit split(const MultiLabelDataset& dataset, double p, double test_fraction,
                 std::uint64_t seed) {
  if (!(p > 0.0 && p < 1.0)) throw SplitError("labeled proportion p must lie in (0, 1)");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0))
    throw SplitError("test_fraction must lie in [0, 1)");

  const Index total = dataset.size();
  const auto num_test = std::min<Index>(
      total, static_cast<Index>(std::floor(test_fraction * static_cast<double>(total) + 0.5)));
  const Index remaining = total - num_test;
  const double expected_labeled = p * static_cast<double>(remaining);
  if (expected_labeled < 1.0)
    throw SplitError("p * N = " + std::to_string(expected_labeled) + " leaves no labeled instance");
  if ((1.0 - p) * static_cast<double>(remaining) < 1.0)
    throw SplitError("(1 - p) * N leaves no unlabeled instance");
  // The tolerance keeps products such as 0.1 * 100 from rounding up to 11.
  const auto num_labeled = static_cast<Index>(std::ceil(expected_labeled - 1e-9));
  const Index num_unlabeled = remaining - num_labeled;
  if (num_unlabeled < 1) throw SplitError("split leaves no unlabeled instance");

  IndexList order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  SSMLLSplit out;
  out.labeled_proportion = p;
  out.seed = seed;
  const auto test_end = order.begin() + num_test;
  const auto labeled_end = test_end + num_labeled;
  out.test.assign(order.begin(), test_end);
  out.labeled.assign(test_end, labeled_end);
  out.unlabeled.assign(labeled_end, order.end());
  std::sort(out.test.begin(), out.test.end());
  std::sort(out.labeled.begin(), out.labeled.end());
  std::sort(out.unlabeled.begin(), out.unlabeled.end());
  return out;
}

ClassDistribution estimate_class_distribution(const LabelMatrix& labels,
                                              DistributionSource source) {
  if (labels.rows() == 0) throw ContractError("cannot estimate a class distribution from no instances");
  ClassDistribution out;
  out.source = source;
  out.gamma = labels.cast<double>().colwise().sum().transpose() / static_cast<double>(labels.rows());
  out.rho = VectorXd::Ones(labels.cols()) - out.gamma;
  return out;
}

ClassDistribution estimate_class_distribution(const MultiLabelDataset& dataset,
                                              const IndexList& indices,
                                              DistributionSource source) {
  if (indices.empty()) throw ContractError("cannot estimate a class distribution from no instances");
  for (Index i : indices)
    if (i < 0 || i >= dataset.size()) throw ContractError("index " + std::to_string(i) + " out of range");
  return estimate_class_distribution(LabelMatrix(dataset.labels(indices, Eigen::all)), source);
}

void check_split(const MultiLabelDataset& dataset, const SSMLLSplit& split) {
  std::vector<char> seen(static_cast<std::size_t>(dataset.size()), 0);
  for (const IndexList* part : {&split.labeled, &split.unlabeled, &split.test}) {
    for (Index i : *part) {
      if (i < 0 || i >= dataset.size())
        throw SplitError("split index " + std::to_string(i) + " outside dataset of size " +
                         std::to_string(dataset.size()));
      if (seen[static_cast<std::size_t>(i)]++)
        throw SplitError("split index " + std::to_string(i) + " appears twice");
    }
  }
  if (split.labeled.empty()) throw SplitError("split has no labeled instance");
  if (split.unlabeled.empty()) throw SplitError("split has no unlabeled instance");
}

SemiSupervisedData partition(const MultiLabelDataset& dataset, const SSMLLSplit& split) {
  check_split(dataset, split);
  SemiSupervisedData out;
  out.labeled_features = dataset.features(split.labeled, Eigen::all);
  out.labeled_labels = dataset.labels(split.labeled, Eigen::all);
  out.unlabeled_features = dataset.features(split.unlabeled, Eigen::all);
  out.unlabeled_truth = HiddenLabels(LabelMatrix(dataset.labels(split.unlabeled, Eigen::all)));
  out.test_features = dataset.features(split.test, Eigen::all);
  out.test_labels = dataset.labels(split.test, Eigen::all);
  return out;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

bool is_column_name(std::string_view name, char prefix, Index expected) {
  return name.size() > 1 && name.front() == prefix && name.substr(1) == std::to_string(expected);
}

}  // namespace

MultiLabelDataset parse_csv(const std::string& text) {
  std::vector<std::string_view> lines;
  {
    std::string_view rest(text);
    while (!rest.empty()) {
      const std::size_t nl = rest.find('\n');
      std::string_view line = rest.substr(0, nl);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      lines.push_back(line);
      if (nl == std::string_view::npos) break;
      rest.remove_prefix(nl + 1);
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
  }
  if (lines.empty()) throw ParseError(1, "no data rows");

  const auto header = split_fields(lines.front());
  Index d = 0;
  while (d < static_cast<Index>(header.size()) && is_column_name(header[d], 'f', d)) ++d;
  const Index q = static_cast<Index>(header.size()) - d;
  for (Index k = 0; k < q; ++k)
    if (!is_column_name(header[d + k], 'y', k))
      throw ParseError(1, "header column '" + std::string(header[d + k]) + "' is not f<i> or y<k> in order");
  if (d == 0) throw ParseError(1, "header declares no feature columns");
  if (q == 0) throw ParseError(1, "header declares no label columns");
  if (lines.size() == 1) throw ParseError(2, "no data rows");

  const auto rows = static_cast<Index>(lines.size() - 1);
  MultiLabelDataset out;
  out.features.resize(rows, d);
  out.labels.resize(rows, q);
  for (Index k = 0; k < q; ++k) out.class_names.emplace_back(header[d + k]);
  for (Index r = 0; r < rows; ++r) {
    const std::size_t line_no = static_cast<std::size_t>(r) + 2;
    const auto fields = split_fields(lines[static_cast<std::size_t>(r) + 1]);
    if (static_cast<Index>(fields.size()) != d + q)
      throw ParseError(line_no, "expected " + std::to_string(d + q) + " fields, found " +
                                    std::to_string(fields.size()));
    for (Index j = 0; j < d; ++j) out.features(r, j) = parse_double(fields[j], line_no);
    for (Index k = 0; k < q; ++k) {
      const std::string_view field = fields[d + k];
      if (field == "0") {
        out.labels(r, k) = 0;
      } else if (field == "1") {
        out.labels(r, k) = 1;
      } else {
        throw ParseError(line_no, "non-binary label '" + std::string(field) + "' in column y" +
                                      std::to_string(k));
      }
    }
  }
  try {
    out.validate();
  } catch (const Error& e) {
    throw ParseError(1, e.what());
  }
  return out;
}

std::string format_csv(const MultiLabelDataset& dataset) {
  dataset.validate();
  std::ostringstream os;
  const Index d = dataset.feature_dim();
  const Index q = dataset.num_classes();
  for (Index j = 0; j < d; ++j) os << (j ? "," : "") << 'f' << j;
  for (Index k = 0; k < q; ++k) os << ",y" << k;
  os << '\n';
  for (Index i = 0; i < dataset.size(); ++i) {
    for (Index j = 0; j < d; ++j) os << (j ? "," : "") << format_double(dataset.features(i, j));
    for (Index k = 0; k < q; ++k) os << ',' << static_cast<int>(dataset.labels(i, k));
    os << '\n';
  }
  return os.str();
}

MultiLabelDataset load_csv(const std::filesystem::path& path) {
  return parse_csv(read_text_file(path));
}

void save_csv(const MultiLabelDataset& dataset, const std::filesystem::path& path) {
  write_text_file(path, format_csv(dataset));
}

nlohmann::json split_to_json(const SSMLLSplit& split) {
  return nlohmann::json{{"labeled", split.labeled},
                        {"unlabeled", split.unlabeled},
                        {"test", split.test},
                        {"p", split.labeled_proportion},
                        {"seed", split.seed}};
}

SSMLLSplit split_from_json(const nlohmann::json& json) {
  SSMLLSplit out;
  try {
    out.labeled = json.at("labeled").get<IndexList>();
    out.unlabeled = json.at("unlabeled").get<IndexList>();
    out.test = json.value("test", IndexList{});
    out.labeled_proportion = json.at("p").get<double>();
    out.seed = json.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, std::string("split manifest: ") + e.what());
  }
  return out;
}

SSMLLSplit load_split(const std::filesystem::path& path) {
  nlohmann::json json;
  try {
    json = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(1, std::string("split manifest: ") + e.what());
  }
  return split_from_json(json);
}

void save_split(const SSMLLSplit& split, const std::filesystem::path& path) {
  write_text_file(path, split_to_json(split).dump() + "\n");
}

}  // namespace cap
