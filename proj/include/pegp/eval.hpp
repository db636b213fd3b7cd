#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pegp/experiment.hpp"

namespace pegp {

/// One continual run as it appears in a report.
struct RunRecord {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string paradigm;
  std::string scenario;
  bool projection = true;
  std::string sweep_key;    // empty outside a sweep
  std::string sweep_value;
  AccuracyMatrix accuracy;
  double avg_accuracy = 0.0;
  double forgetting = 0.0;
  bool forgetting_defined = false;
  double new_task_accuracy = 0.0;
  std::map<std::string, std::size_t> basis_columns;  // after the last task
  std::size_t warnings = 0;

  std::size_t total_basis_columns() const;

  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

/// Seed aggregate for one sweep value (or for all runs of a plain report).
struct SummaryRow {
  std::string label;
  std::size_t runs = 0;
  double mean_avg_accuracy = 0.0, std_avg_accuracy = 0.0;
  double mean_forgetting = 0.0, std_forgetting = 0.0;
  double mean_new_task_accuracy = 0.0, std_new_task_accuracy = 0.0;
  double mean_basis_columns = 0.0;

  friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

struct Report {
  std::vector<RunRecord> runs;
  std::vector<SummaryRow> summary;

  friend bool operator==(const Report&, const Report&) = default;
};

RunRecord make_record(const RunConfig& config, const RunSummary& summary, const std::string& sweep_key = {},
                      const std::string& sweep_value = {});

/// Groups runs by sweep value in order of first appearance; arithmetic mean
/// and population standard deviation over seeds. Runs whose forgetting is
/// undefined count as 0.
Report build_report(std::vector<RunRecord> runs);

/// One continual run per (value, seed) with `key` set to each value through
/// set_config_value. Requires at least two values and one seed.
Report ablation_sweep(const RunConfig& base, const std::string& key, const std::vector<std::string>& values,
                      const std::vector<std::uint64_t>& seeds);

/// Line-delimited JSON: one {"type":"run",...} record per run followed by one
/// {"type":"summary",...} record per group. Field list in README.
std::string serialize_report(const Report& report);
Report parse_report(const std::string& text);

/// Fixed-width table of the summary rows.
std::string render_summary(const Report& report);

/// Writes `dir/report.jsonl` and `dir/summary.txt`.
void emit_report(const Report& report, const std::filesystem::path& dir);

}  // namespace pegp
