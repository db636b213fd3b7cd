#include "pegp/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

namespace pegp {

using nlohmann::json;

std::size_t RunRecord::total_basis_columns() const {
  std::size_t n = 0;
  for (const auto& [site, cols] : basis_columns) n += cols;
  return n;
}

RunRecord make_record(const RunConfig& config, const RunSummary& s, const std::string& sweep_key,
                      const std::string& sweep_value) {
  RunRecord r;
  r.config_hash = s.config_hash;
  r.seed = s.seed;
  r.paradigm = std::string(to_string(config.paradigm));
  r.scenario = std::string(to_string(config.scenario.scenario));
  r.projection = config.train.projection;
  r.sweep_key = sweep_key;
  r.sweep_value = sweep_value;
  r.accuracy = s.accuracy;
  r.avg_accuracy = s.avg_accuracy;
  r.forgetting = s.forgetting;
  r.forgetting_defined = s.forgetting_defined;
  r.new_task_accuracy = s.new_task_accuracy;
  if (!s.basis_columns.empty()) r.basis_columns = s.basis_columns.back();
  r.warnings = s.warnings.size();
  return r;
}

namespace {

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  sd = std::sqrt(var / static_cast<double>(xs.size()));
}

}  // namespace

Report build_report(std::vector<RunRecord> runs) {
  Report report;
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunRecord*>> groups;
  report.runs = std::move(runs);
  for (const auto& r : report.runs) {
    const std::string label = r.sweep_key.empty() ? "all" : r.sweep_key + "=" + r.sweep_value;
    if (!groups.count(label)) order.push_back(label);
    groups[label].push_back(&r);
  }
  for (const auto& label : order) {
    const auto& g = groups[label];
    std::vector<double> avg, fgt, nta, cols;
    for (const auto* r : g) {
      avg.push_back(r->avg_accuracy);
      fgt.push_back(r->forgetting);
      nta.push_back(r->new_task_accuracy);
      cols.push_back(static_cast<double>(r->total_basis_columns()));
    }
    SummaryRow row;
    row.label = label;
    row.runs = g.size();
    mean_std(avg, row.mean_avg_accuracy, row.std_avg_accuracy);
    mean_std(fgt, row.mean_forgetting, row.std_forgetting);
    mean_std(nta, row.mean_new_task_accuracy, row.std_new_task_accuracy);
    double unused;
    mean_std(cols, row.mean_basis_columns, unused);
    report.summary.push_back(row);
  }
  return report;
}

Report ablation_sweep(const RunConfig& base, const std::string& key, const std::vector<std::string>& values,
                      const std::vector<std::uint64_t>& seeds) {
  if (values.size() < 2) throw std::invalid_argument("ablation_sweep needs at least two values");
  if (seeds.empty()) throw std::invalid_argument("ablation_sweep needs at least one seed");
  // Validate every value before spending time on runs.
  std::vector<RunConfig> configs;
  for (const auto& v : values) {
    RunConfig c = base;
    set_config_value(c, key, v);
    configs.push_back(c);
  }
  std::vector<RunRecord> runs;
  for (std::size_t i = 0; i < values.size(); ++i)
    for (auto seed : seeds) {
      RunConfig c = configs[i];
      c.seed = seed;
      c.normalize();
      runs.push_back(make_record(c, run_experiment(c), key, values[i]));
    }
  return build_report(std::move(runs));
}

std::string serialize_report(const Report& report) {
  std::string out;
  for (const auto& r : report.runs) {
    json j = {{"type", "run"},
              {"config_hash", r.config_hash},
              {"seed", r.seed},
              {"paradigm", r.paradigm},
              {"scenario", r.scenario},
              {"projection", r.projection},
              {"sweep_key", r.sweep_key},
              {"sweep_value", r.sweep_value},
              {"accuracy", r.accuracy.rows()},
              {"avg_accuracy", r.avg_accuracy},
              {"forgetting", r.forgetting},
              {"forgetting_defined", r.forgetting_defined},
              {"new_task_accuracy", r.new_task_accuracy},
              {"basis_columns", r.basis_columns},
              {"warnings", r.warnings}};
    out += j.dump() + "\n";
  }
  for (const auto& s : report.summary) {
    json j = {{"type", "summary"},
              {"label", s.label},
              {"runs", s.runs},
              {"mean_avg_accuracy", s.mean_avg_accuracy},
              {"std_avg_accuracy", s.std_avg_accuracy},
              {"mean_forgetting", s.mean_forgetting},
              {"std_forgetting", s.std_forgetting},
              {"mean_new_task_accuracy", s.mean_new_task_accuracy},
              {"std_new_task_accuracy", s.std_new_task_accuracy},
              {"mean_basis_columns", s.mean_basis_columns}};
    out += j.dump() + "\n";
  }
  return out;
}

Report parse_report(const std::string& text) {
  Report report;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "run") {
        RunRecord r;
        r.config_hash = j.at("config_hash").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.paradigm = j.at("paradigm").get<std::string>();
        r.scenario = j.at("scenario").get<std::string>();
        r.projection = j.at("projection").get<bool>();
        r.sweep_key = j.at("sweep_key").get<std::string>();
        r.sweep_value = j.at("sweep_value").get<std::string>();
        r.accuracy = AccuracyMatrix::from_rows(j.at("accuracy").get<std::vector<std::vector<double>>>());
        r.avg_accuracy = j.at("avg_accuracy").get<double>();
        r.forgetting = j.at("forgetting").get<double>();
        r.forgetting_defined = j.at("forgetting_defined").get<bool>();
        r.new_task_accuracy = j.at("new_task_accuracy").get<double>();
        r.basis_columns = j.at("basis_columns").get<std::map<std::string, std::size_t>>();
        r.warnings = j.at("warnings").get<std::size_t>();
        report.runs.push_back(std::move(r));
      } else if (type == "summary") {
        SummaryRow s;
        s.label = j.at("label").get<std::string>();
        s.runs = j.at("runs").get<std::size_t>();
        s.mean_avg_accuracy = j.at("mean_avg_accuracy").get<double>();
        s.std_avg_accuracy = j.at("std_avg_accuracy").get<double>();
        s.mean_forgetting = j.at("mean_forgetting").get<double>();
        s.std_forgetting = j.at("std_forgetting").get<double>();
        s.mean_new_task_accuracy = j.at("mean_new_task_accuracy").get<double>();
        s.std_new_task_accuracy = j.at("std_new_task_accuracy").get<double>();
        s.mean_basis_columns = j.at("mean_basis_columns").get<double>();
        report.summary.push_back(std::move(s));
      } else {
        throw std::invalid_argument("unknown record type '" + type + "'");
      }
    } catch (const std::exception& e) {
      throw std::invalid_argument("report line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return report;
}

std::string render_summary(const Report& report) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-28s %5s %15s %15s %15s %9s\n", "group", "runs", "avg_acc", "forgetting",
                "new_task_acc", "basis");
  out += buf;
  for (const auto& s : report.summary) {
    std::snprintf(buf, sizeof buf, "%-28s %5zu %7.4f±%-7.4f %7.4f±%-7.4f %7.4f±%-7.4f %9.1f\n", s.label.c_str(), s.runs,
                  s.mean_avg_accuracy, s.std_avg_accuracy, s.mean_forgetting, s.std_forgetting,
                  s.mean_new_task_accuracy, s.std_new_task_accuracy, s.mean_basis_columns);
    out += buf;
  }
  if (report.runs.empty()) out += "(no runs)\n";
  return out;
}

void emit_report(const Report& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.jsonl", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / "report.jsonl").string());
    out << serialize_report(report);
  }
  std::ofstream out(dir / "summary.txt", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "summary.txt").string());
  out << render_summary(report);
}

}  // namespace pegp
