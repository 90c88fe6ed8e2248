#include "fedmoco/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <stdexcept>

#include "fedmoco/serialization.hpp"

#include <json.hpp>

namespace fedmoco {

using nlohmann::json;

MeanStd summarize(std::span<const double> values) {
  MeanStd out;
  out.count = values.size();
  if (values.empty()) return out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() == 1) {
    out.single_sample = true;
    return out;
  }
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return out;
}

namespace {

struct Samples {
  std::vector<double> probe, probe_best, fine_tune, fine_tune_best;
};

json to_json(const MeanStd& m) {
  return json{{"count", m.count}, {"mean", m.mean}, {"std", m.std}, {"single_sample", m.single_sample}};
}

std::string cell(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%6.2f +/- %4.2f%s", 100.0 * m.mean, 100.0 * m.std, m.single_sample ? "*" : " ");
  return buf;
}

}  // namespace

std::vector<SummaryRow> collect_summary(const std::filesystem::path& run_dir) {
  const auto arms = run_dir / "arms";
  if (!std::filesystem::is_directory(arms)) throw std::runtime_error(run_dir.string() + ": no arms/ directory");

  // Keyed by (arm, K); arm order follows first appearance in sorted paths.
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(arms))
    if (entry.is_regular_file() && entry.path().filename() == "eval.json") files.push_back(entry.path());
  if (files.empty()) throw std::runtime_error(run_dir.string() + ": no eval.json metrics found");
  std::sort(files.begin(), files.end());

  std::map<std::pair<std::string, std::size_t>, Samples> groups;
  std::vector<std::pair<std::string, std::size_t>> order;
  for (const auto& file : files) {
    json j;
    try {
      j = json::parse(read_file(file));
    } catch (const std::exception& e) {
      throw std::runtime_error(file.string() + ": " + e.what());
    }
    const auto key = std::make_pair(j.at("arm").get<std::string>(), j.at("num_nodes").get<std::size_t>());
    if (!groups.count(key)) order.push_back(key);
    auto& s = groups[key];
    s.probe.push_back(j.at("linear_probe").at("accuracy").get<double>());
    s.probe_best.push_back(j.at("linear_probe").at("best_epoch_accuracy").get<double>());
    if (j.contains("fine_tune")) {
      s.fine_tune.push_back(j.at("fine_tune").at("accuracy").get<double>());
      s.fine_tune_best.push_back(j.at("fine_tune").at("best_epoch_accuracy").get<double>());
    }
  }

  std::vector<SummaryRow> rows;
  for (const auto& key : order) {
    const auto& s = groups.at(key);
    SummaryRow row;
    row.arm = key.first;
    row.num_nodes = key.second;
    row.probe = summarize(s.probe);
    row.probe_best = summarize(s.probe_best);
    if (!s.fine_tune.empty()) {
      row.fine_tune = summarize(s.fine_tune);
      row.fine_tune_best = summarize(s.fine_tune_best);
    }
    rows.push_back(row);
  }
  // Plan order when the run recorded its plan.
  std::vector<std::string> arm_order;
  if (std::filesystem::exists(run_dir / "plan.json")) {
    const auto plan = json::parse(read_file(run_dir / "plan.json"));
    if (plan.contains("arms")) arm_order = plan.at("arms").get<std::vector<std::string>>();
  }
  auto rank = [&](const std::string& arm) {
    return std::find(arm_order.begin(), arm_order.end(), arm) - arm_order.begin();
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const SummaryRow& a, const SummaryRow& b) {
    if (a.num_nodes != b.num_nodes) return a.num_nodes < b.num_nodes;
    return rank(a.arm) < rank(b.arm);
  });
  return rows;
}

std::string format_summary(std::span<const SummaryRow> rows) {
  const bool any_ft = std::any_of(rows.begin(), rows.end(), [](const SummaryRow& r) { return r.fine_tune.has_value(); });
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %3s %5s  %-17s %-17s", "arm", "K", "seeds", "probe final (%)", "probe best (%)");
  out += buf;
  if (any_ft) {
    std::snprintf(buf, sizeof buf, "  %-17s %-17s", "finetune final (%)", "finetune best (%)");
    out += buf;
  }
  out += "\n";
  bool flagged = false;
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof buf, "%-12s %3zu %5zu  %-17s %-17s", row.arm.c_str(), row.num_nodes, row.probe.count,
                  cell(row.probe).c_str(), cell(row.probe_best).c_str());
    out += buf;
    if (row.fine_tune) {
      std::snprintf(buf, sizeof buf, "  %-17s %-17s", cell(*row.fine_tune).c_str(), cell(*row.fine_tune_best).c_str());
      out += buf;
    }
    out += "\n";
    flagged = flagged || row.probe.single_sample;
  }
  if (flagged) out += "* single seed: std reported as 0\n";
  return out;
}

std::string report(const std::filesystem::path& run_dir) {
  const auto rows = collect_summary(run_dir);
  json j = json::array();
  for (const auto& row : rows) {
    json r{{"arm", row.arm}, {"num_nodes", row.num_nodes}, {"linear_probe", to_json(row.probe)},
           {"linear_probe_best_epoch", to_json(row.probe_best)}};
    if (row.fine_tune) {
      r["fine_tune"] = to_json(*row.fine_tune);
      r["fine_tune_best_epoch"] = to_json(*row.fine_tune_best);
    }
    j.push_back(r);
  }
  const auto table = format_summary(rows);
  write_file_atomic(run_dir / "summary.json", j.dump(2) + "\n");
  write_file_atomic(run_dir / "summary.txt", table);
  return table;
}

}  // namespace fedmoco
