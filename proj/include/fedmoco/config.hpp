#pragma once

#include <string>
#include <vector>

#include "fedmoco/experiment.hpp"

#include <json.hpp>

namespace fedmoco {

// Presets: "full" (full-scale hyperparameters), "desk" (laptop-scale
// overlay), and the desk experiment suites "shift-desk", "size-skew-desk",
// "label-skew-desk" and "finetune-desk".
const std::vector<std::string>& preset_names();
RunPlan preset(const std::string& name);

nlohmann::json to_json(const ExperimentConfig& config);
nlohmann::json to_json(const RunPlan& plan);

// Overlays `patch` onto `base`. Unknown keys and wrongly typed values raise
// ConfigError naming the dotted field path.
RunPlan apply_plan_json(const RunPlan& base, const nlohmann::json& patch);
ExperimentConfig experiment_from_json(const nlohmann::json& j);

// Parses JSON text; syntax errors report line and column.
nlohmann::json parse_config_text(const std::string& text, const std::string& source);

// "experiment.rounds=12" -> {"experiment": {"rounds": 12}}; the value is
// parsed as JSON and taken as a string when that fails.
nlohmann::json override_patch(const std::string& assignment);

}  // namespace fedmoco
