#pragma once

// JSON conversions for configuration types. Readers reject unknown keys and
// wrong types with ConfigError so typos in experiment files surface early.

#include <json.hpp>

#include "weaver/data.hpp"
#include "weaver/model.hpp"

namespace weaver {

nlohmann::json to_json(const ModelConfig& config);
nlohmann::json to_json(const Hyperparams& hyper);
nlohmann::json to_json(const SuiteConfig& config);

ModelConfig model_config_from_json(const nlohmann::json& j);
Hyperparams hyperparams_from_json(const nlohmann::json& j);
SuiteConfig suite_config_from_json(const nlohmann::json& j);

// Throws ConfigError naming the first key of `j` that is not in `allowed`.
void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const char* where);

}  // namespace weaver
