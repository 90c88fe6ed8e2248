#include "fedmoco/experiment.hpp"

#include <algorithm>
#include <fstream>

#include "fedmoco/config.hpp"
#include "fedmoco/digest.hpp"
#include "fedmoco/errors.hpp"
#include "fedmoco/rng.hpp"
#include "fedmoco/serialization.hpp"

namespace fedmoco {

namespace {

constexpr std::uint64_t kEvalSplitStream = 0x73706c74;
constexpr std::uint64_t kProbeStream = 0x70726f62;
constexpr std::uint64_t kFineTuneStream = 0x66696e65;

}  // namespace

const std::vector<std::string>& known_arms() {
  static const std::vector<std::string> arms = {"FedAvg", "FedMoCo-M", "FedMoCo-S",
                                                "FedMoCo", "Oracle", "RandomInit"};
  return arms;
}

ExperimentConfig apply_arm(ExperimentConfig config, const std::string& arm) {
  if (arm == "FedAvg") {
    config.metadata_enabled = false;
    config.aggregation = AggregationMode::fedavg;
  } else if (arm == "FedMoCo-M") {
    config.metadata_enabled = true;
    config.aggregation = AggregationMode::fedavg;
  } else if (arm == "FedMoCo-S") {
    config.metadata_enabled = false;
    config.aggregation = AggregationMode::self_adaptive;
  } else if (arm == "FedMoCo") {
    config.metadata_enabled = true;
    config.aggregation = AggregationMode::self_adaptive;
  } else if (arm == "Oracle") {
    config.centralized = true;
    config.metadata_enabled = false;
    config.node_seeds.clear();
  } else if (arm == "RandomInit") {
    config.rounds = 0;
    config.warmup_rounds = 0;
  } else {
    throw ConfigError("arms: unknown arm '" + arm + "'");
  }
  return config;
}

void RunPlan::validate() const {
  if (arms.empty()) throw ConfigError("arms: at least one arm is required");
  for (const auto& arm : arms) apply_arm(experiment, arm);
  if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
  for (auto k : node_counts)
    if (k == 0) throw ConfigError("node_counts: entries must be positive");
  if (eval.probe.batch_size == 0) throw ConfigError("eval.probe.batch_size: must be positive");
  if (eval.fine_tune && !(eval.fine_tune_fraction > 0.0 && eval.fine_tune_fraction <= 1.0))
    throw ConfigError("eval.fine_tune.fraction: must lie in (0, 1]");
  experiment.validate();
}

EvalSplit evaluation_split(const ExperimentConfig& config) {
  const auto spec = make_scenario(config.scenario, config.num_nodes);
  return make_eval_split(spec, derive_seed(config.seed, {kEvalSplitStream}));
}

ArmOutcome run_arm(const ExperimentConfig& config, const std::string& arm, const EvalSettings& eval) {
  ArmOutcome outcome;
  outcome.arm = arm;
  outcome.num_nodes = config.num_nodes;
  outcome.seed = config.seed;
  outcome.config = config;
  outcome.training = run_training(config);

  const auto split = evaluation_split(config);
  auto probe_config = eval.probe;
  probe_config.seed = derive_seed(config.seed, {kProbeStream});
  outcome.probe = linear_probe(outcome.training.theta0, split.train, split.test, probe_config);
  if (eval.fine_tune) {
    auto ft_config = eval.fine_tune_config;
    ft_config.seed = derive_seed(config.seed, {kFineTuneStream});
    outcome.fine_tune = fine_tune(outcome.training.theta0, eval.fine_tune_fraction, split.train,
                                  split.test, ft_config);
  }
  return outcome;
}

std::filesystem::path seed_dir(const std::filesystem::path& out_dir, const std::string& arm,
                               std::size_t num_nodes, std::uint64_t seed) {
  return out_dir / "arms" / arm / ("K" + std::to_string(num_nodes)) / ("seed_" + std::to_string(seed));
}

namespace {

void write_outcome(const std::filesystem::path& dir, const ArmOutcome& outcome) {
  write_file_atomic(dir / "config.json", to_json(outcome.config).dump(2) + "\n");
  write_file_atomic(dir / "metrics.jsonl", encode_metrics(outcome.training.metrics));
  write_file_atomic(dir / "messages.jsonl", encode_message_log(outcome.training.message_log));
  write_file_atomic(dir / "timings.jsonl", encode_timings(outcome.training.metrics));
  write_checkpoint(dir / "theta_final.ckpt", outcome.training.theta0);
  nlohmann::json eval;
  eval["arm"] = outcome.arm;
  eval["num_nodes"] = outcome.num_nodes;
  eval["seed"] = outcome.seed;
  eval["scenario"] = to_string(outcome.config.scenario.kind);
  eval["theta_digest"] = digest_values(outcome.training.theta0.values());
  eval["linear_probe"] = to_json(outcome.probe);
  if (outcome.fine_tune) eval["fine_tune"] = to_json(*outcome.fine_tune);
  write_file_atomic(dir / "eval.json", eval.dump(2) + "\n");
}

}  // namespace

PlanResult run_plan(const RunPlan& plan, const std::filesystem::path& out_dir) {
  plan.validate();
  std::filesystem::create_directories(out_dir);
  write_file_atomic(out_dir / "plan.json", to_json(plan).dump(2) + "\n");

  auto node_counts = plan.node_counts;
  if (node_counts.empty()) node_counts.push_back(plan.experiment.num_nodes);

  PlanResult result;
  for (auto k : node_counts) {
    for (const auto& arm : plan.arms) {
      for (auto seed : plan.seeds) {
        auto config = plan.experiment;
        config.num_nodes = k;
        config.seed = seed;
        config = apply_arm(config, arm);
        const auto dir = seed_dir(out_dir, arm, k, seed);
        try {
          auto outcome = run_arm(config, arm, plan.eval);
          write_outcome(dir, outcome);
          result.outcomes.push_back(std::move(outcome));
        } catch (const std::exception& e) {
          write_file_atomic(dir / "error.txt", std::string(e.what()) + "\n");
          throw;
        }
      }
    }
  }
  result.digest = run_digest(out_dir);
  write_file_atomic(out_dir / "digest.txt", result.digest + "\n");
  return result;
}

std::string run_digest(const std::filesystem::path& out_dir) {
  static const std::vector<std::string> deterministic = {"config.json", "metrics.jsonl", "messages.jsonl",
                                                         "theta_final.ckpt", "eval.json"};
  std::vector<std::filesystem::path> files;
  if (std::filesystem::exists(out_dir / "arms")) {
    for (const auto& entry : std::filesystem::recursive_directory_iterator(out_dir / "arms")) {
      if (!entry.is_regular_file()) continue;
      const auto name = entry.path().filename().string();
      if (std::find(deterministic.begin(), deterministic.end(), name) != deterministic.end())
        files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const std::string& bytes) {
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& f : files) {
    feed(std::filesystem::relative(f, out_dir).generic_string());
    feed(read_file(f));
  }
  return to_hex(h);
}

}  // namespace fedmoco
