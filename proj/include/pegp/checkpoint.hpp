#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "pegp/trainer.hpp"

namespace pegp {

/// Raised for unreadable, malformed or mismatched checkpoints.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

/// JSON bundle of everything continual_run carries between tasks, tagged
/// with the config hash. Doubles are written in shortest round-trip form, so
/// a loaded state resumes bit-identically. The optimizer is reset per task,
/// so between tasks there is no optimizer state to store.
std::string serialize_checkpoint(const RunState& state, const std::string& config_hash);

/// Throws CheckpointError on a version or hash mismatch or malformed input.
RunState deserialize_checkpoint(const std::string& text, const std::string& expected_hash);

/// Writes through a temporary file and renames, so a crash never leaves a
/// half-written checkpoint behind.
void save_checkpoint(const std::filesystem::path& path, const RunState& state, const std::string& config_hash);
RunState load_checkpoint(const std::filesystem::path& path, const std::string& expected_hash);

}  // namespace pegp
