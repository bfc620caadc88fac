#include "cap/serialization.hpp"

#include <set>
#include <string>

#include "cap/errors.hpp"

namespace cap {

namespace {

using nlohmann::json;

template <typename T>
T get_field(const json& object, const char* key, const std::string& path) {
  const json& value = object.at(key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!value.is_boolean()) throw ConfigError(path, "expected a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!value.is_number_integer()) throw ConfigError(path, "expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (value.is_number_integer() && !value.is_number_unsigned() && value.get<long long>() < 0)
        throw ConfigError(path, "must be >= 0");
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!value.is_number()) throw ConfigError(path, "expected a number");
  } else {
    if (!value.is_string()) throw ConfigError(path, "expected a string");
  }
  return value.get<T>();
}

void reject_unknown(const json& object, const std::set<std::string>& known, const std::string& prefix) {
  for (const auto& [key, value] : object.items())
    if (!known.count(key)) throw ConfigError(prefix + key, "unknown field");
}

const char* kind_name(LossKind kind) { return kind == LossKind::Bce ? "bce" : "asl"; }
const char* kind_name(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }
const char* kind_name(RefreshCadence c) { return c == RefreshCadence::PerBatch ? "per_batch" : "per_epoch"; }
const char* kind_name(PredictionSource s) { return s == PredictionSource::Raw ? "raw" : "ema"; }
const char* kind_name(Architecture a) { return a == Architecture::OneHiddenLayer ? "one_hidden_layer" : "linear"; }

json tensors_to_json(const Parameters<double>& params) {
  json out = json::object();
  for (std::size_t l = 0; l < params.num_layers(); ++l) {
    const auto& w = params.weights[l];
    const auto& b = params.biases[l];
    out["layer" + std::to_string(l) + ".weight"] = {
        {"shape", {w.rows(), w.cols()}}, {"values", std::vector<double>(w.data(), w.data() + w.size())}};
    out["layer" + std::to_string(l) + ".bias"] = {{"shape", {b.size()}},
                                                  {"values", std::vector<double>(b.data(), b.data() + b.size())}};
  }
  return out;
}

// Fills tensors of `shape_source`'s shapes from JSON.
Parameters<double> tensors_from_json(const json& object, const Parameters<double>& shape_source) {
  Parameters<double> out = shape_source.zeros_like();
  out.for_each_tensor([&](const std::string& name, auto view) {
    if (!object.contains(name)) throw ParseError(1, "checkpoint: missing tensor " + name);
    const auto values = object.at(name).at("values").get<std::vector<double>>();
    if (static_cast<Index>(values.size()) != view.size())
      throw ParseError(1, "checkpoint: tensor " + name + " has " + std::to_string(values.size()) +
                              " values, expected " + std::to_string(view.size()));
    for (Index i = 0; i < view.size(); ++i) view(i) = values[static_cast<std::size_t>(i)];
  });
  return out;
}

}  // namespace

json config_to_json(const ExperimentConfig& c) {
  return json{{"strategy", strategy_name(c.strategy)},
              {"tau", c.strategy.tau},
              {"topk_l", c.strategy.topk_l},
              {"loss",
               {{"kind", kind_name(c.loss.kind)},
                {"lambda_pos", c.loss.lambda_pos},
                {"lambda_neg", c.loss.lambda_neg},
                {"probability_clamp", c.loss.probability_clamp}}},
              {"interval", {{"eta_pos", c.interval.eta_pos}, {"eta_neg", c.interval.eta_neg}}},
              {"warmup_epochs", c.warmup_epochs},
              {"total_epochs", c.total_epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"optimizer", kind_name(c.optimizer)},
              {"lr_warmup_steps", c.lr_warmup_steps},
              {"ema_decay", c.ema_decay},
              {"seed", c.seed},
              {"pseudo_label_refresh", kind_name(c.pseudo_label_refresh)},
              {"prediction_source", kind_name(c.prediction_source)},
              {"model", {{"architecture", kind_name(c.architecture)}, {"hidden_units", c.hidden_units}}}};
}

ExperimentConfig merge_config(const ExperimentConfig& base, const json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  reject_unknown(j,
                 {"strategy", "tau", "topk_l", "loss", "interval", "warmup_epochs", "total_epochs", "batch_size",
                  "learning_rate", "optimizer", "lr_warmup_steps", "ema_decay", "seed", "pseudo_label_refresh",
                  "prediction_source", "model"},
                 "");
  ExperimentConfig c = base;
  if (j.contains("strategy")) c.strategy.kind = parse_strategy_kind(get_field<std::string>(j, "strategy", "strategy"));
  if (j.contains("tau")) c.strategy.tau = get_field<double>(j, "tau", "tau");
  if (j.contains("topk_l")) c.strategy.topk_l = get_field<Index>(j, "topk_l", "topk_l");
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    if (!l.is_object()) throw ConfigError("loss", "expected an object");
    reject_unknown(l, {"kind", "lambda_pos", "lambda_neg", "probability_clamp"}, "loss.");
    if (l.contains("kind")) {
      const auto kind = get_field<std::string>(l, "kind", "loss.kind");
      if (kind == "asl") c.loss.kind = LossKind::Asl;
      else if (kind == "bce") c.loss.kind = LossKind::Bce;
      else throw ConfigError("loss.kind", "expected 'asl' or 'bce'");
    }
    if (l.contains("lambda_pos")) c.loss.lambda_pos = get_field<double>(l, "lambda_pos", "loss.lambda_pos");
    if (l.contains("lambda_neg")) c.loss.lambda_neg = get_field<double>(l, "lambda_neg", "loss.lambda_neg");
    if (l.contains("probability_clamp"))
      c.loss.probability_clamp = get_field<double>(l, "probability_clamp", "loss.probability_clamp");
  }
  if (j.contains("interval")) {
    const json& i = j.at("interval");
    if (!i.is_object()) throw ConfigError("interval", "expected an object");
    reject_unknown(i, {"eta_pos", "eta_neg"}, "interval.");
    if (i.contains("eta_pos")) c.interval.eta_pos = get_field<double>(i, "eta_pos", "interval.eta_pos");
    if (i.contains("eta_neg")) c.interval.eta_neg = get_field<double>(i, "eta_neg", "interval.eta_neg");
  }
  if (j.contains("warmup_epochs")) c.warmup_epochs = get_field<int>(j, "warmup_epochs", "warmup_epochs");
  if (j.contains("total_epochs")) c.total_epochs = get_field<int>(j, "total_epochs", "total_epochs");
  if (j.contains("batch_size")) c.batch_size = get_field<Index>(j, "batch_size", "batch_size");
  if (j.contains("learning_rate")) c.learning_rate = get_field<double>(j, "learning_rate", "learning_rate");
  if (j.contains("optimizer")) {
    const auto name = get_field<std::string>(j, "optimizer", "optimizer");
    if (name == "sgd") c.optimizer = OptimizerKind::Sgd;
    else if (name == "adam") c.optimizer = OptimizerKind::Adam;
    else throw ConfigError("optimizer", "expected 'sgd' or 'adam'");
  }
  if (j.contains("lr_warmup_steps"))
    c.lr_warmup_steps = get_field<std::uint64_t>(j, "lr_warmup_steps", "lr_warmup_steps");
  if (j.contains("ema_decay")) c.ema_decay = get_field<double>(j, "ema_decay", "ema_decay");
  if (j.contains("seed")) c.seed = get_field<std::uint64_t>(j, "seed", "seed");
  if (j.contains("pseudo_label_refresh")) {
    const auto name = get_field<std::string>(j, "pseudo_label_refresh", "pseudo_label_refresh");
    if (name == "per_epoch") c.pseudo_label_refresh = RefreshCadence::PerEpoch;
    else if (name == "per_batch") c.pseudo_label_refresh = RefreshCadence::PerBatch;
    else throw ConfigError("pseudo_label_refresh", "expected 'per_epoch' or 'per_batch'");
  }
  if (j.contains("prediction_source")) {
    const auto name = get_field<std::string>(j, "prediction_source", "prediction_source");
    if (name == "ema") c.prediction_source = PredictionSource::Ema;
    else if (name == "raw") c.prediction_source = PredictionSource::Raw;
    else throw ConfigError("prediction_source", "expected 'ema' or 'raw'");
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    if (!m.is_object()) throw ConfigError("model", "expected an object");
    reject_unknown(m, {"architecture", "hidden_units"}, "model.");
    if (m.contains("architecture")) {
      const auto name = get_field<std::string>(m, "architecture", "model.architecture");
      if (name == "linear") c.architecture = Architecture::Linear;
      else if (name == "one_hidden_layer") c.architecture = Architecture::OneHiddenLayer;
      else throw ConfigError("model.architecture", "expected 'linear' or 'one_hidden_layer'");
    }
    if (m.contains("hidden_units")) c.hidden_units = get_field<Index>(m, "hidden_units", "model.hidden_units");
  }
  c.validate();
  return c;
}

ExperimentConfig config_from_json(const json& j) { return merge_config(ExperimentConfig{}, j); }

json checkpoint_to_json(const TrainingState& state) {
  const auto& spec = state.model.spec;
  const auto& opt = state.optimizer;
  json optimizer{{"kind", kind_name(opt.settings.kind)},
                 {"learning_rate", opt.settings.learning_rate},
                 {"beta1", opt.settings.beta1},
                 {"beta2", opt.settings.beta2},
                 {"epsilon", opt.settings.epsilon},
                 {"warmup_steps", opt.settings.warmup_steps},
                 {"step", opt.step}};
  if (opt.settings.kind == OptimizerKind::Adam) {
    optimizer["first_moment"] = tensors_to_json(opt.first_moment);
    optimizer["second_moment"] = tensors_to_json(opt.second_moment);
  }
  return json{{"architecture",
               {{"kind", kind_name(spec.kind)},
                {"input_dim", spec.input_dim},
                {"num_classes", spec.num_classes},
                {"hidden_units", spec.hidden_units}}},
              {"parameters", tensors_to_json(state.model.params)},
              {"ema", {{"decay", state.ema.decay}, {"parameters", tensors_to_json(state.ema.params)}}},
              {"optimizer", optimizer},
              {"epochs_done", state.epochs_done}};
}

TrainingState checkpoint_from_json(const json& j) {
  try {
    const json& a = j.at("architecture");
    ArchitectureSpec spec;
    spec.kind = a.at("kind").get<std::string>() == "one_hidden_layer" ? Architecture::OneHiddenLayer
                                                                      : Architecture::Linear;
    spec.input_dim = a.at("input_dim").get<Index>();
    spec.num_classes = a.at("num_classes").get<Index>();
    spec.hidden_units = a.at("hidden_units").get<Index>();

    TrainingState state;
    state.model = initialize_model<double>(spec, 0);
    state.model.params = tensors_from_json(j.at("parameters"), state.model.params);
    state.ema.decay = j.at("ema").at("decay").get<double>();
    state.ema.params = tensors_from_json(j.at("ema").at("parameters"), state.model.params);

    const json& o = j.at("optimizer");
    OptimizerSettings settings;
    settings.kind = o.at("kind").get<std::string>() == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam;
    settings.learning_rate = o.at("learning_rate").get<double>();
    settings.beta1 = o.at("beta1").get<double>();
    settings.beta2 = o.at("beta2").get<double>();
    settings.epsilon = o.at("epsilon").get<double>();
    settings.warmup_steps = o.at("warmup_steps").get<std::uint64_t>();
    state.optimizer = make_optimizer(settings, state.model);
    state.optimizer.step = o.at("step").get<std::uint64_t>();
    if (settings.kind == OptimizerKind::Adam) {
      state.optimizer.first_moment = tensors_from_json(o.at("first_moment"), state.model.params);
      state.optimizer.second_moment = tensors_from_json(o.at("second_moment"), state.model.params);
    }
    state.epochs_done = j.at("epochs_done").get<int>();
    return state;
  } catch (const json::exception& e) {
    throw ParseError(1, std::string("checkpoint: ") + e.what());
  }
}

json report_to_json(const PseudoLabelReport& r) {
  const auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return json{{"precision", vec(r.precision)},
              {"recall", vec(r.recall)},
              {"cf1", r.cf1},
              {"of1", r.of1},
              {"epsilon", r.epsilon},
              {"epsilon_pos", r.epsilon_pos},
              {"epsilon_neg", r.epsilon_neg},
              {"epsilon_per_class", vec(r.epsilon_per_class)},
              {"conventions",
               "-1 entries are excluded from precision, recall, CF1 and OF1; they count as non-positive in "
               "epsilon"}};
}

json comparison_to_json(const ComparisonReport& report) {
  json rows = json::array();
  for (const auto& o : report.outcomes) {
    json row{{"strategy", strategy_name(o.strategy)},
             {"map_raw", o.map_raw},
             {"map_ema", o.map_ema},
             {"first_round", report_to_json(o.first_round)}};
    row["final"] = o.final_pseudo ? report_to_json(*o.final_pseudo) : json(nullptr);
    rows.push_back(std::move(row));
  }
  return json{{"checkpoint_hash", report.checkpoint_hash},
              {"first_round_prediction_hash", report.first_round_prediction_hash},
              {"strategies", rows}};
}

}  // namespace cap
