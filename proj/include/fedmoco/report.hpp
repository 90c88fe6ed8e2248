#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedmoco {

struct MeanStd {
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // unbiased; 0 for a single value
  bool single_sample = false;
};

MeanStd summarize(std::span<const double> values);

struct SummaryRow {
  std::string arm;
  std::size_t num_nodes = 0;
  MeanStd probe;
  MeanStd probe_best;
  std::optional<MeanStd> fine_tune;
  std::optional<MeanStd> fine_tune_best;
};

// Collects every arms/*/K*/seed_*/eval.json under `run_dir`. Throws
// std::runtime_error when there is nothing to summarize.
std::vector<SummaryRow> collect_summary(const std::filesystem::path& run_dir);

std::string format_summary(std::span<const SummaryRow> rows);

// Writes summary.json and summary.txt into `run_dir` and returns the table.
std::string report(const std::filesystem::path& run_dir);

}  // namespace fedmoco
