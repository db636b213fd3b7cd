#pragma once

#include <string>
#include <vector>

#include "pegp/config.hpp"
#include "pegp/trainer.hpp"

namespace pegp {

/// Seeded pieces of a run, built from a RunConfig. Sub-seeds: "backbone",
/// "data", "tokenizer", "pet", "head"; the trainer derives its own.
struct Experiment {
  RunConfig config;
  ContinualSetup setup;
  std::vector<TaskDataset> stream;
};

Experiment prepare_experiment(const RunConfig& config);

/// Fresh state for the experiment (initialized PET, head and buffers).
RunState fresh_state(const Experiment& experiment);

/// Metrics of a finished (or partial) run.
struct RunSummary {
  std::string config_hash;
  std::uint64_t seed = 0;
  AccuracyMatrix accuracy;
  double avg_accuracy = 0.0;
  double forgetting = 0.0;
  bool forgetting_defined = false;  // false for a single task
  double new_task_accuracy = 0.0;
  std::vector<std::map<std::string, std::size_t>> basis_columns;
  std::vector<std::string> warnings;
};

RunSummary summarize(const RunConfig& config, const RunState& state);

/// prepare + fresh state + continual_run + summarize.
RunSummary run_experiment(const RunConfig& config, const TaskCallback& after_task = {});

}  // namespace pegp
