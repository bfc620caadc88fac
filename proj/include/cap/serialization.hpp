#pragma once

#include "json.hpp"

#include "cap/metrics.hpp"
#include "cap/trainer.hpp"

namespace cap {

// Experiment config as JSON with snake_case keys. Parsing is strict: unknown
// keys and wrongly typed values raise ConfigError naming the field.
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& json);
// Applies the keys present in `json` on top of `base`.
ExperimentConfig merge_config(const ExperimentConfig& base, const nlohmann::json& json);

// Architecture descriptor, flat parameter arrays, EMA shadow and optimizer state.
nlohmann::json checkpoint_to_json(const TrainingState& state);
TrainingState checkpoint_from_json(const nlohmann::json& json);

nlohmann::json report_to_json(const PseudoLabelReport& report);
nlohmann::json comparison_to_json(const ComparisonReport& report);

}  // namespace cap
