#include "fedmoco/config.hpp"

#include <algorithm>

#include "fedmoco/errors.hpp"

namespace fedmoco {

using nlohmann::json;

namespace {

// Rejects keys of `patch` that do not exist in `reference`, recursing into objects.
void check_known_keys(const json& reference, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) throw ConfigError((prefix.empty() ? "config" : prefix) + ": expected an object");
  for (const auto& [key, value] : patch.items()) {
    const auto path = prefix.empty() ? key : prefix + "." + key;
    if (!reference.contains(key)) throw ConfigError(path + ": unknown key");
    if (reference.at(key).is_object()) check_known_keys(reference.at(key), value, path);
  }
}

class Reader {
 public:
  Reader(const json& root, std::string prefix) : root_(root), prefix_(std::move(prefix)) {}

  const json& at(const std::string& key) const {
    if (!root_.contains(key)) throw ConfigError(path(key) + ": missing");
    return root_.at(key);
  }
  Reader child(const std::string& key) const {
    const auto& j = at(key);
    if (!j.is_object()) throw ConfigError(path(key) + ": expected an object");
    return Reader(j, path(key));
  }
  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  double real(const std::string& key) const {
    const auto& j = at(key);
    if (!j.is_number()) throw ConfigError(path(key) + ": expected a number");
    return j.get<double>();
  }
  std::uint64_t count(const std::string& key) const { return count_of(at(key), path(key)); }
  int integer(const std::string& key) const {
    const auto& j = at(key);
    if (!j.is_number_integer()) throw ConfigError(path(key) + ": expected an integer");
    return j.get<int>();
  }
  bool flag(const std::string& key) const {
    const auto& j = at(key);
    if (!j.is_boolean()) throw ConfigError(path(key) + ": expected true or false");
    return j.get<bool>();
  }
  std::string text(const std::string& key) const {
    const auto& j = at(key);
    if (!j.is_string()) throw ConfigError(path(key) + ": expected a string");
    return j.get<std::string>();
  }
  std::vector<std::uint64_t> counts(const std::string& key) const {
    const auto& j = at(key);
    if (!j.is_array()) throw ConfigError(path(key) + ": expected an array");
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(count_of(j[i], path(key) + "[" + std::to_string(i) + "]"));
    return out;
  }
  std::vector<std::string> texts(const std::string& key) const {
    const auto& j = at(key);
    if (!j.is_array()) throw ConfigError(path(key) + ": expected an array");
    std::vector<std::string> out;
    for (const auto& item : j) {
      if (!item.is_string()) throw ConfigError(path(key) + ": expected an array of strings");
      out.push_back(item.get<std::string>());
    }
    return out;
  }

  template <typename F>
  auto wrap(const std::string& key, F&& convert) const {
    try {
      return convert();
    } catch (const ConfigError& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

 private:
  static std::uint64_t count_of(const json& j, const std::string& where) {
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
    throw ConfigError(where + ": expected a non-negative integer");
  }

  const json& root_;
  std::string prefix_;
};

}  // namespace

json to_json(const ExperimentConfig& c) {
  json milestones = json::array();
  for (const auto& [round, factor] : c.lr.milestones) milestones.push_back({round, factor});
  return json{
      {"nodes", c.num_nodes},
      {"rounds", c.rounds},
      {"warmup_rounds", c.warmup_rounds},
      {"queue_size", c.queue_size},
      {"eta", c.eta},
      {"key_momentum", c.key_momentum},
      {"temperature", c.temperature},
      {"boxcox_lambda", c.boxcox_lambda},
      {"covariance_jitter", c.covariance_jitter},
      {"lr", {{"base", c.lr.base}, {"milestones", milestones}}},
      {"batch_size", c.batch_size},
      {"sgd_momentum", c.sgd_momentum},
      {"weight_decay", c.weight_decay},
      {"local_epochs", c.local_epochs},
      {"encoder", {{"widths", c.encoder_widths}}},
      {"aggregation", to_string(c.aggregation)},
      {"metadata_enabled", c.metadata_enabled},
      {"metadata_after_update", c.metadata_after_update},
      {"seed", c.seed},
      {"node_seeds", c.node_seeds},
      {"probe_size", c.probe_size},
      {"centralized", c.centralized},
      {"parallel_nodes", c.parallel_nodes},
      {"scenario",
       {{"kind", to_string(c.scenario.kind)},
        {"base_size", c.scenario.base_size},
        {"gamma_percent", c.scenario.gamma_percent},
        {"height", c.scenario.height},
        {"width", c.scenario.width},
        {"eval_size", c.scenario.eval_size}}},
      {"augment",
       {{"flip_prob", c.augment.flip_prob},
        {"max_rotation_deg", c.augment.max_rotation_deg},
        {"min_crop_scale", c.augment.min_crop_scale},
        {"max_crop_scale", c.augment.max_crop_scale},
        {"min_gamma", c.augment.min_gamma},
        {"max_gamma", c.augment.max_gamma}}},
  };
}

json to_json(const RunPlan& plan) {
  return json{
      {"name", plan.name},
      {"arms", plan.arms},
      {"seeds", plan.seeds},
      {"node_counts", plan.node_counts},
      {"experiment", to_json(plan.experiment)},
      {"eval",
       {{"probe",
         {{"epochs", plan.eval.probe.epochs},
          {"learning_rate", plan.eval.probe.learning_rate},
          {"batch_size", plan.eval.probe.batch_size}}},
        {"fine_tune",
         {{"enabled", plan.eval.fine_tune},
          {"fraction", plan.eval.fine_tune_fraction},
          {"epochs", plan.eval.fine_tune_config.epochs},
          {"learning_rate", plan.eval.fine_tune_config.learning_rate},
          {"sgd_momentum", plan.eval.fine_tune_config.sgd_momentum},
          {"batch_size", plan.eval.fine_tune_config.batch_size}}}}},
  };
}

namespace {

ExperimentConfig read_experiment(const Reader& r) {
  ExperimentConfig c;
  c.num_nodes = r.count("nodes");
  c.rounds = r.integer("rounds");
  c.warmup_rounds = r.integer("warmup_rounds");
  c.queue_size = r.count("queue_size");
  c.eta = r.real("eta");
  c.key_momentum = r.real("key_momentum");
  c.temperature = r.real("temperature");
  c.boxcox_lambda = r.real("boxcox_lambda");
  c.covariance_jitter = r.real("covariance_jitter");
  const auto lr = r.child("lr");
  c.lr.base = lr.real("base");
  c.lr.milestones.clear();
  const auto& milestones = lr.at("milestones");
  if (!milestones.is_array()) throw ConfigError(lr.path("milestones") + ": expected an array");
  for (const auto& m : milestones) {
    if (!m.is_array() || m.size() != 2 || !m[0].is_number_integer() || !m[1].is_number())
      throw ConfigError(lr.path("milestones") + ": expected [round, factor] pairs");
    c.lr.milestones.emplace_back(m[0].get<int>(), m[1].get<double>());
  }
  c.batch_size = r.count("batch_size");
  c.sgd_momentum = r.real("sgd_momentum");
  c.weight_decay = r.real("weight_decay");
  c.local_epochs = r.count("local_epochs");
  const auto widths = r.child("encoder").counts("widths");
  c.encoder_widths.assign(widths.begin(), widths.end());
  c.aggregation = r.wrap("aggregation", [&] { return aggregation_mode_from_string(r.text("aggregation")); });
  c.metadata_enabled = r.flag("metadata_enabled");
  c.metadata_after_update = r.flag("metadata_after_update");
  c.seed = r.count("seed");
  c.node_seeds = r.counts("node_seeds");
  c.probe_size = r.count("probe_size");
  c.centralized = r.flag("centralized");
  c.parallel_nodes = r.flag("parallel_nodes");
  const auto s = r.child("scenario");
  c.scenario.kind = s.wrap("kind", [&] { return scenario_kind_from_string(s.text("kind")); });
  c.scenario.base_size = s.count("base_size");
  c.scenario.gamma_percent = s.real("gamma_percent");
  c.scenario.height = s.count("height");
  c.scenario.width = s.count("width");
  c.scenario.eval_size = s.count("eval_size");
  const auto a = r.child("augment");
  c.augment.flip_prob = a.real("flip_prob");
  c.augment.max_rotation_deg = a.real("max_rotation_deg");
  c.augment.min_crop_scale = a.real("min_crop_scale");
  c.augment.max_crop_scale = a.real("max_crop_scale");
  c.augment.min_gamma = a.real("min_gamma");
  c.augment.max_gamma = a.real("max_gamma");
  return c;
}

RunPlan read_plan(const json& j) {
  const Reader r(j, "");
  RunPlan plan;
  plan.name = r.text("name");
  plan.arms = r.texts("arms");
  plan.seeds = r.counts("seeds");
  const auto nodes = r.counts("node_counts");
  plan.node_counts.assign(nodes.begin(), nodes.end());
  plan.experiment = read_experiment(r.child("experiment"));
  const auto eval = r.child("eval");
  const auto probe = eval.child("probe");
  plan.eval.probe.epochs = probe.count("epochs");
  plan.eval.probe.learning_rate = probe.real("learning_rate");
  plan.eval.probe.batch_size = probe.count("batch_size");
  const auto ft = eval.child("fine_tune");
  plan.eval.fine_tune = ft.flag("enabled");
  plan.eval.fine_tune_fraction = ft.real("fraction");
  plan.eval.fine_tune_config.epochs = ft.count("epochs");
  plan.eval.fine_tune_config.learning_rate = ft.real("learning_rate");
  plan.eval.fine_tune_config.sgd_momentum = ft.real("sgd_momentum");
  plan.eval.fine_tune_config.batch_size = ft.count("batch_size");
  return plan;
}

}  // namespace

ExperimentConfig experiment_from_json(const json& j) {
  const auto reference = to_json(ExperimentConfig{});
  check_known_keys(reference, j, "experiment");
  auto merged = reference;
  merged.merge_patch(j);
  return read_experiment(Reader(merged, "experiment"));
}

RunPlan apply_plan_json(const RunPlan& base, const json& patch) {
  auto merged = to_json(base);
  check_known_keys(merged, patch, "");
  merged.merge_patch(patch);
  auto plan = read_plan(merged);
  plan.validate();
  return plan;
}

json parse_config_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, column = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(column) +
                      ": syntax error: " + e.what());
  }
}

json override_patch(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key=value");
  const auto key = assignment.substr(0, eq);
  const auto raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json patch = value;
  std::size_t end = key.size();
  while (true) {
    const auto dot = key.rfind('.', end - 1);
    const auto start = dot == std::string::npos ? 0 : dot + 1;
    patch = json{{key.substr(start, end - start), patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  return patch;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"full", "desk", "shift-desk", "size-skew-desk",
                                                 "label-skew-desk", "finetune-desk"};
  return names;
}

namespace {

// Laptop-scale overlay: smaller dictionary and batch, 40 rounds with the
// learning-rate drops at the same fractions of training (0.6T, 0.8T).
RunPlan desk_plan() {
  RunPlan plan;
  plan.name = "desk";
  auto& e = plan.experiment;
  e.rounds = 40;
  e.warmup_rounds = 10;
  e.queue_size = 256;
  e.batch_size = 32;
  e.lr.milestones = {{24, 0.1}, {32, 0.01}};
  e.scenario.base_size = 2000;
  e.scenario.eval_size = 2000;
  plan.seeds = {0, 1, 2};
  return plan;
}

}  // namespace

RunPlan preset(const std::string& name) {
  if (name == "full") {
    RunPlan plan;
    plan.name = "full";
    plan.seeds = {0, 1, 2};
    plan.node_counts = {3, 6};
    plan.experiment.scenario.eval_size = 3886;
    return plan;
  }
  auto plan = desk_plan();
  if (name == "desk") return plan;
  plan.name = name;
  if (name == "shift-desk") {
    plan.arms = {"FedAvg", "FedMoCo"};
    plan.node_counts = {3, 6};
  } else if (name == "size-skew-desk") {
    plan.experiment.scenario.kind = ScenarioKind::size_skew;
    plan.experiment.scenario.gamma_percent = 10.0;
    plan.arms = {"FedAvg", "FedMoCo-M", "FedMoCo-S", "FedMoCo"};
  } else if (name == "label-skew-desk") {
    plan.experiment.scenario.kind = ScenarioKind::label_skew;
    plan.arms = {"FedAvg", "FedMoCo-M", "FedMoCo-S", "FedMoCo"};
  } else if (name == "finetune-desk") {
    plan.arms = {"RandomInit", "FedAvg", "FedMoCo", "Oracle"};
    plan.seeds = {0, 1, 2, 3, 4};
    plan.eval.fine_tune = true;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return plan;
}

}  // namespace fedmoco
