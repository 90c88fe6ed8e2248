// Experiment runner: run, report, audit and export-data verbs.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedmoco/config.hpp"
#include "fedmoco/errors.hpp"
#include "fedmoco/experiment.hpp"
#include "fedmoco/report.hpp"
#include "fedmoco/serialization.hpp"

namespace fs = std::filesystem;
using namespace fedmoco;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

struct PlanOptions {
  std::string config_path;
  std::string preset_name = "desk";
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> arms;
  std::vector<std::string> overrides;
};

void add_plan_options(CLI::App* cmd, PlanOptions& opts) {
  cmd->add_option("--config", opts.config_path, "JSON config file overlaid on the preset");
  cmd->add_option("--preset", opts.preset_name, "Base preset")
      ->check(CLI::IsMember(preset_names()));
  cmd->add_option("--seed", opts.seeds, "Seed (repeat for several)");
  cmd->add_option("--arms", opts.arms, "Arms to run")->delimiter(',');
  cmd->add_option("--set", opts.overrides, "Override a field, e.g. experiment.rounds=12");
}

RunPlan resolve_plan(const PlanOptions& opts) {
  auto plan = preset(opts.preset_name);
  if (!opts.config_path.empty()) {
    std::string text;
    try {
      text = read_file(opts.config_path);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    plan = apply_plan_json(plan, parse_config_text(text, opts.config_path));
  }
  nlohmann::json patch = nlohmann::json::object();
  for (const auto& o : opts.overrides) patch.merge_patch(override_patch(o));
  if (!opts.seeds.empty()) patch["seeds"] = opts.seeds;
  if (!opts.arms.empty()) patch["arms"] = opts.arms;
  return apply_plan_json(plan, patch);
}

fs::path default_out(const RunPlan& plan) {
  const char* root = std::getenv("FEDMOCO_OUT_ROOT");
  return fs::path(root && *root ? root : "runs") / plan.name;
}

int cmd_run(const PlanOptions& opts, const std::string& out) {
  const auto plan = resolve_plan(opts);
  const fs::path out_dir = out.empty() ? default_out(plan) : fs::path(out);
  std::cerr << "run " << plan.name << " -> " << out_dir.string() << "\n";
  const auto result = run_plan(plan, out_dir);
  std::cout << report(out_dir);
  std::cout << "digest " << result.digest << "\n";
  return 0;
}

int audit_one(const fs::path& log_path, const std::map<MessageKind, std::size_t>* expected) {
  const auto log = read_message_log(log_path);
  const auto audit = audit_privacy(log);
  bool ok = audit.passed;
  std::cout << log_path.string() << ": " << (audit.passed ? "PASS" : "FAIL") << " (" << log.size() << " messages";
  for (const auto& [kind, n] : audit.counts) std::cout << ", " << to_string(kind) << "=" << n;
  std::cout << ")\n";
  for (const auto& v : audit.violations) std::cout << "  message " << v.index << ": " << v.reason << "\n";
  if (expected) {
    for (auto kind : {MessageKind::params_down, MessageKind::params_up, MessageKind::metadata_down,
                      MessageKind::metadata_up, MessageKind::control}) {
      const auto want = expected->count(kind) ? expected->at(kind) : 0;
      const auto got = audit.counts.count(kind) ? audit.counts.at(kind) : 0;
      if (want != got) {
        std::cout << "  " << to_string(kind) << " count " << got << ", expected " << want << "\n";
        ok = false;
      }
    }
  }
  return ok ? 0 : kExitFailure;
}

int cmd_audit(const std::string& target) {
  const fs::path path(target);
  if (fs::is_regular_file(path)) return audit_one(path, nullptr);
  if (!fs::is_directory(path)) throw std::runtime_error(target + ": no such file or directory");
  std::vector<fs::path> logs;
  for (const auto& entry : fs::recursive_directory_iterator(path))
    if (entry.is_regular_file() && entry.path().filename() == "messages.jsonl") logs.push_back(entry.path());
  if (logs.empty()) throw std::runtime_error(target + ": no messages.jsonl found");
  std::sort(logs.begin(), logs.end());
  int status = 0;
  for (const auto& log : logs) {
    const auto config_path = log.parent_path() / "config.json";
    if (fs::exists(config_path)) {
      const auto config = experiment_from_json(nlohmann::json::parse(read_file(config_path)));
      const auto expected = expected_message_counts(config);
      status |= audit_one(log, &expected);
    } else {
      status |= audit_one(log, nullptr);
    }
  }
  return status;
}

int cmd_export(const PlanOptions& opts, const std::string& out) {
  const auto plan = resolve_plan(opts);
  const fs::path out_dir = out.empty() ? default_out(plan) / "data" : fs::path(out);
  for (auto seed : plan.seeds) {
    auto config = plan.experiment;
    config.seed = seed;
    const auto dir = out_dir / ("seed_" + std::to_string(seed));
    const auto spec = make_scenario(config.scenario, config.num_nodes);
    const auto datasets = training_datasets(config);
    for (std::size_t k = 0; k < datasets.size(); ++k) {
      const auto stem = "node_" + std::to_string(k);
      export_dataset(dir / (stem + ".f64"), dir / (stem + ".labels"), datasets[k]);
    }
    const auto split = evaluation_split(config);
    export_dataset(dir / "eval_train.f64", dir / "eval_train.labels", split.train);
    export_dataset(dir / "eval_test.f64", dir / "eval_test.labels", split.test);
    std::cout << dir.string() << ": " << datasets.size() << " node datasets, " << split.train.size()
              << " + " << split.test.size() << " evaluation images\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated momentum-contrast simulator"};
  app.require_subcommand(1);

  PlanOptions run_opts;
  std::string run_out;
  auto* run = app.add_subcommand("run", "Train and evaluate the arms of an experiment plan");
  add_plan_options(run, run_opts);
  run->add_option("--out", run_out, "Run directory (default $FEDMOCO_OUT_ROOT/<name>)");

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "Summarize a run directory as mean +/- std per arm");
  rep->add_option("run_dir", report_dir)->required();

  std::string audit_target;
  auto* aud = app.add_subcommand("audit", "Privacy audit of a message log or every log in a run directory");
  aud->add_option("target", audit_target)->required();

  PlanOptions export_opts;
  std::string export_out;
  auto* exp = app.add_subcommand("export-data", "Write the generated datasets as flat binary files");
  add_plan_options(exp, export_opts);
  exp->add_option("--out", export_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_opts, run_out);
    if (*rep) {
      std::cout << report(report_dir);
      return 0;
    }
    if (*aud) return cmd_audit(audit_target);
    if (*exp) return cmd_export(export_opts, export_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}
