#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "pegp/data.hpp"
#include "pegp/pet.hpp"
#include "pegp/trainer.hpp"
#include "pegp/transformer_config.hpp"

namespace pegp {

/// Invalid configuration; the message names the offending field.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a run needs. model.num_classes, train.scenario and train.seed
/// are derived from the scenario and seed fields by normalize().
struct RunConfig {
  std::uint64_t seed = 0;
  PetParadigm paradigm = PetParadigm::Adapter;
  TransformerConfig model{2, 32, 4, 4, 2, 10};
  PetConfig pet;
  ScenarioSpec scenario;
  std::string manifest;  // optional file-backed stream instead of the generator
  TrainConfig train;
  std::string out_dir = "out";
  bool checkpoints = true;

  /// Fills the derived fields.
  void normalize();
  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

/// Parses the JSON config format. Every key is optional; unknown keys and
/// wrongly typed values are errors. The result is normalized and validated.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical JSON (sorted keys, round-trip doubles), outputs included.
std::string dump_run_config(const RunConfig& config);

/// FNV-1a of the canonical JSON without the output section, as 16 hex digits.
std::string config_hash(const RunConfig& config);

/// Applies "key=value" with dotted keys, e.g. "projection.epsilon=1e-3".
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);

}  // namespace pegp
