#include "doctest.h"

#include "cap/errors.hpp"
#include "cap/serialization.hpp"

using namespace cap;
using nlohmann::json;

namespace {

ExperimentConfig unusual_config() {
  ExperimentConfig c;
  c.strategy = Strategy::global(0.65);
  c.strategy.topk_l = 3;
  c.loss.kind = LossKind::Bce;
  c.loss.lambda_pos = 2.0;
  c.loss.lambda_neg = 3.0;
  c.loss.probability_clamp = 1e-5;
  c.interval = {0.8, 0.6};
  c.warmup_epochs = 2;
  c.total_epochs = 9;
  c.batch_size = 7;
  c.learning_rate = 0.03;
  c.optimizer = OptimizerKind::Sgd;
  c.lr_warmup_steps = 11;
  c.ema_decay = 0.95;
  c.seed = 1234567890123ULL;
  c.pseudo_label_refresh = RefreshCadence::PerBatch;
  c.prediction_source = PredictionSource::Raw;
  c.architecture = Architecture::OneHiddenLayer;
  c.hidden_units = 5;
  return c;
}

std::string field_of(const json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

SemiSupervisedData small_data() {
  SyntheticConfig c;
  c.num_instances = 300;
  c.num_classes = 4;
  c.feature_dim = 6;
  const auto d = generate_synthetic(c);
  return partition(d, split(d, 0.1, 0.2, 1));
}

}  // namespace

TEST_CASE("config round trip") {
  const json j = config_to_json(unusual_config());
  CHECK(j["strategy"] == "iat");
  CHECK(j["loss"]["kind"] == "bce");
  CHECK(j["pseudo_label_refresh"] == "per_batch");
  const ExperimentConfig back = config_from_json(j);
  CHECK(config_to_json(back) == j);
  CHECK(back.seed == 1234567890123ULL);
  CHECK(back.strategy.tau == 0.65);
  CHECK(back.hidden_units == 5);
}

TEST_CASE("empty config gives the defaults") {
  CHECK(config_to_json(config_from_json(json::object())) == config_to_json(ExperimentConfig{}));
}

TEST_CASE("merge only touches present keys") {
  const ExperimentConfig merged = merge_config(unusual_config(), json{{"seed", 3}, {"interval", {{"eta_pos", 0.5}}}});
  CHECK(merged.seed == 3);
  CHECK(merged.interval.eta_pos == 0.5);
  CHECK(merged.interval.eta_neg == 0.6);
  CHECK(merged.batch_size == 7);
}

TEST_CASE("config errors name the field") {
  CHECK(field_of(json{{"sead", 1}}) == "sead");
  CHECK(field_of(json{{"loss", {{"lambda", 1}}}}) == "loss.lambda");
  CHECK(field_of(json{{"batch_size", "big"}}) == "batch_size");
  CHECK(field_of(json{{"batch_size", 0}}) == "batch_size");
  CHECK(field_of(json{{"seed", -1}}) == "seed");
  CHECK(field_of(json{{"warmup_epochs", 50}}) == "total_epochs");
  CHECK(field_of(json{{"strategy", "oracle"}}) == "strategy");
  CHECK(field_of(json{{"interval", {{"eta_pos", 2.0}}}}) == "interval.eta_pos");
  CHECK(field_of(json{{"model", {{"architecture", "cnn"}}}}) == "model.architecture");
  CHECK(field_of(json{{"loss", {{"kind", "focal"}}}}) == "loss.kind");
  CHECK(field_of(json{{"optimizer", "adamw"}}) == "optimizer");
  CHECK(field_of(json::array()) == "<root>");
  CHECK(field_of(json{{"learning_rate", 1}}) == "");
}

TEST_CASE("checkpoint round trip resumes identically") {
  const auto data = small_data();
  ExperimentConfig config;
  config.warmup_epochs = 2;
  config.total_epochs = 4;
  config.batch_size = 16;
  for (auto kind : {OptimizerKind::Adam, OptimizerKind::Sgd}) {
    config.optimizer = kind;
    TrainingState state = initialize_training(data, config);
    TrainingHistory history;
    warmup(state, data, config, history);
    const json saved = checkpoint_to_json(state);
    TrainingState restored = checkpoint_from_json(json::parse(saved.dump()));
    CHECK(checkpoint_to_json(restored) == saved);
    CHECK(checkpoint_hash(restored) == checkpoint_hash(state));
    CHECK(restored.epochs_done == 2);
    TrainingHistory h1;
    TrainingHistory h2;
    continue_training(state, data, config, h1);
    continue_training(restored, data, config, h2);
    CHECK(state.model.params.flatten() == restored.model.params.flatten());
    CHECK(history_csv(h1) == history_csv(h2));
  }
}

TEST_CASE("corrupt checkpoint is a parse error") {
  CHECK_THROWS_AS(checkpoint_from_json(json{{"architecture", 1}}), ParseError);
  const auto data = small_data();
  json saved = checkpoint_to_json(initialize_training(data, ExperimentConfig{}));
  saved["parameters"]["layer0.weight"]["values"] = json::array({1.0});
  CHECK_THROWS(checkpoint_from_json(saved));
}

TEST_CASE("report json carries both metric conventions") {
  LabelMatrix truth(2, 2);
  truth << 1, 0, 0, 1;
  LabelMatrix pseudo(2, 2);
  pseudo << 1, -1, 0, 1;
  const json j = report_to_json(pseudo_label_report(pseudo, truth));
  CHECK(j["cf1"] == 1.0);
  CHECK(j["epsilon"] == 0.0);
  CHECK(j.contains("conventions"));
  CHECK(j["precision"].size() == 2);
}
