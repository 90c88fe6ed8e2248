#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedmoco/eval.hpp"
#include "fedmoco/federation.hpp"

namespace fedmoco {

// Arm names: FedAvg, FedMoCo-M (metadata only), FedMoCo-S (self-adaptive
// aggregation only), FedMoCo, Oracle (single node on pooled data) and
// RandomInit (no pre-training at all).
const std::vector<std::string>& known_arms();

// Applies the module toggles of an arm on top of a base config.
ExperimentConfig apply_arm(ExperimentConfig config, const std::string& arm);

struct EvalSettings {
  ProbeConfig probe;
  bool fine_tune = false;
  double fine_tune_fraction = 0.03;
  FineTuneConfig fine_tune_config;
};

struct RunPlan {
  std::string name = "run";
  ExperimentConfig experiment;
  std::vector<std::string> arms = {"FedAvg", "FedMoCo"};
  std::vector<std::uint64_t> seeds = {0};
  std::vector<std::size_t> node_counts;  // empty: experiment.num_nodes only
  EvalSettings eval;

  void validate() const;
};

struct ArmOutcome {
  std::string arm;
  std::size_t num_nodes = 0;
  std::uint64_t seed = 0;
  ExperimentConfig config;
  TrainingResult training;
  ClassificationReport probe;
  std::optional<ClassificationReport> fine_tune;
};

// The labelled downstream split every arm of a seed is evaluated on.
EvalSplit evaluation_split(const ExperimentConfig& config);

// Trains one arm (config already has the arm applied) and evaluates it.
ArmOutcome run_arm(const ExperimentConfig& config, const std::string& arm, const EvalSettings& eval);

// Output layout under `out_dir`:
//   plan.json
//   arms/<arm>/K<nodes>/seed_<seed>/{config.json, metrics.jsonl, messages.jsonl,
//                                    timings.jsonl, theta_final.ckpt, eval.json}
//   digest.txt  (FNV-1a over every deterministic file, in path order)
// Each seed directory is written as soon as its arm finishes.
struct PlanResult {
  std::vector<ArmOutcome> outcomes;
  std::string digest;
};

PlanResult run_plan(const RunPlan& plan, const std::filesystem::path& out_dir);

std::filesystem::path seed_dir(const std::filesystem::path& out_dir, const std::string& arm,
                               std::size_t num_nodes, std::uint64_t seed);

// Digest of the deterministic files of a finished run directory.
std::string run_digest(const std::filesystem::path& out_dir);

}  // namespace fedmoco
