#include "pegp/experiment.hpp"

#include "pegp/rng.hpp"

namespace pegp {

Experiment prepare_experiment(const RunConfig& config) {
  config.validate();
  Experiment e;
  e.config = config;
  e.setup.weights = init_backbone(config.model, sub_seed(config.seed, "backbone"));
  e.setup.train = config.train;
  e.setup.classes_per_task = config.scenario.classes_per_task;
  e.setup.total_classes = config.scenario.total_classes();

  std::vector<RawTask> raw;
  if (config.manifest.empty()) {
    raw = generate_stream(config.scenario, sub_seed(config.seed, "data"));
  } else {
    raw = load_manifest(config.manifest);
    if (raw.size() != config.scenario.tasks)
      throw ConfigError("manifest lists " + std::to_string(raw.size()) + " tasks but scenario.tasks is " +
                        std::to_string(config.scenario.tasks));
    for (const auto& task : raw)
      for (const auto* split : {&task.train, &task.test})
        for (const auto& s : *split) {
          if (s.features.size() != config.scenario.raw_dim())
            throw ConfigError("manifest rows must have seq_len * token_width features");
          if (static_cast<std::size_t>(s.label) >= config.scenario.total_classes())
            throw ConfigError("manifest label " + std::to_string(s.label) + " is outside the class count");
        }
  }
  const auto tok = Tokenizer::make(config.scenario.seq_len, config.scenario.token_width, config.model.dim,
                                   sub_seed(config.seed, "tokenizer"));
  for (const auto& task : raw) e.stream.push_back(tokenize_task(task, tok));
  return e;
}

RunState fresh_state(const Experiment& e) {
  PetState pet = init_pet(e.config.paradigm, e.config.model, e.config.pet, sub_seed(e.config.seed, "pet"));
  Classifier head = init_classifier(e.config.model, sub_seed(e.config.seed, "head"));
  return initial_state(e.setup, std::move(pet), std::move(head));
}

RunSummary summarize(const RunConfig& config, const RunState& state) {
  RunSummary s;
  s.config_hash = config_hash(config);
  s.seed = config.seed;
  s.accuracy = state.accuracy;
  if (state.accuracy.tasks() > 0) {
    s.avg_accuracy = avg_accuracy(state.accuracy);
    s.new_task_accuracy = new_task_accuracy(state.accuracy);
  }
  s.forgetting_defined = state.accuracy.tasks() >= 2;
  s.forgetting = s.forgetting_defined ? forgetting(state.accuracy) : 0.0;
  s.basis_columns = state.basis_columns;
  s.warnings = state.warnings;
  return s;
}

RunSummary run_experiment(const RunConfig& config, const TaskCallback& after_task) {
  const Experiment e = prepare_experiment(config);
  return summarize(config, continual_run(e.setup, e.stream, fresh_state(e), after_task));
}

}  // namespace pegp
