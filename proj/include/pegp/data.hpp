#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pegp/linalg.hpp"

namespace pegp {

enum class Scenario { CIL, TIL, DIL, OIL };

std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view name);

/// Raised by the file loaders. The message names the file, row and column.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScenarioSpec {
  Scenario scenario = Scenario::CIL;
  std::size_t tasks = 5;
  std::size_t classes_per_task = 2;
  std::size_t samples_per_class = 200;
  std::size_t seq_len = 4;       // tokens per sample
  std::size_t token_width = 4;   // raw values per token
  double noise = 0.1;            // per-coordinate sigma
  double separation = 2.0;       // norm of every class mean
  double shift = 0.0;            // DIL rotation angle per task, radians

  std::size_t raw_dim() const { return seq_len * token_width; }
  /// Width of the label space over the whole stream.
  std::size_t total_classes() const;
  void validate() const;
};

struct RawSample {
  std::vector<double> features;
  int label = 0;
};

struct RawTask {
  int task_id = 0;
  std::vector<int> classes;
  std::vector<RawSample> train;
  std::vector<RawSample> test;
};

/// Disjoint label blocks per task. Each class is a Gaussian cluster around
/// separation * (unit vector); 80/20 train/test split per class.
std::vector<RawTask> gen_split_classes(const ScenarioSpec& spec, std::uint64_t seed);

/// The same classes every task; task t sees the feature space rotated by
/// t * shift radians in a fixed set of random planes.
std::vector<RawTask> gen_domain_shift(const ScenarioSpec& spec, std::uint64_t seed);

/// Dispatches on spec.scenario: DIL uses gen_domain_shift, the rest split classes.
std::vector<RawTask> generate_stream(const ScenarioSpec& spec, std::uint64_t seed);

/// Fixed linear map from raw vectors to token grids: the raw vector is cut
/// into seq_len chunks of token_width values and every chunk goes through the
/// same token_width x dim matrix. No bias.
struct Tokenizer {
  std::size_t seq_len = 0;
  std::size_t token_width = 0;
  Matrix map;  // token_width x dim

  static Tokenizer make(std::size_t seq_len, std::size_t token_width, std::size_t dim, std::uint64_t seed);
  Matrix tokenize(const std::vector<double>& raw) const;
};

struct Sample {
  Matrix tokens;  // seq_len x dim
  int label = 0;
};

struct TaskDataset {
  int task_id = 0;
  std::vector<int> classes;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

TaskDataset tokenize_task(const RawTask& task, const Tokenizer& tokenizer);

/// Reads `label,f0,f1,...`. An empty file gives no samples. Labels must be
/// non-negative integers; every row must have the header's width.
std::vector<RawSample> load_csv(const std::filesystem::path& path);

/// A JSON manifest: {"tasks": [{"train": "t0_train.csv", "test": "t0_test.csv"}, ...]}.
/// Relative paths resolve against the manifest's directory. Each task's class
/// list is the sorted set of labels in its two files.
std::vector<RawTask> load_manifest(const std::filesystem::path& path);

}  // namespace pegp
