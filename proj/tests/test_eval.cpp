#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <unistd.h>

#include "pegp/eval.hpp"

using namespace pegp;
using nlohmann::json;

namespace {

RunConfig tiny() {
  RunConfig c;
  c.paradigm = PetParadigm::Adapter;
  c.model.dim = 16;
  c.scenario.tasks = 3;
  c.scenario.samples_per_class = 30;
  c.train.epochs = 2;
  c.normalize();
  return c;
}

RunRecord record(const std::string& value, double avg, double fgt, double nta) {
  RunRecord r;
  r.config_hash = "0123456789abcdef";
  r.paradigm = "lora";
  r.scenario = "cil";
  r.sweep_key = "projection.epsilon";
  r.sweep_value = value;
  r.accuracy = AccuracyMatrix::from_rows({{1.0}, {0.5, 0.75}});
  r.avg_accuracy = avg;
  r.forgetting = fgt;
  r.forgetting_defined = true;
  r.new_task_accuracy = nta;
  r.basis_columns = {{"a", 2}, {"b", 3}};
  return r;
}

// Independent schema check of one report line.
bool valid_line(const json& j) {
  if (!j.is_object() || !j.contains("type")) return false;
  auto number = [&](const char* k) { return j.contains(k) && j[k].is_number(); };
  auto string = [&](const char* k) { return j.contains(k) && j[k].is_string(); };
  if (j["type"] == "run") {
    if (!(string("config_hash") && j["config_hash"].get<std::string>().size() == 16 && number("seed") &&
          string("paradigm") && string("scenario") && j["projection"].is_boolean() && string("sweep_key") &&
          string("sweep_value") && number("avg_accuracy") && number("forgetting") &&
          j["forgetting_defined"].is_boolean() && number("new_task_accuracy") && j["basis_columns"].is_object() &&
          number("warnings") && j["accuracy"].is_array()))
      return false;
    const auto& a = j["accuracy"];
    for (std::size_t r = 0; r < a.size(); ++r) {
      if (!a[r].is_array() || a[r].size() != r + 1) return false;
      for (const auto& v : a[r])
        if (!v.is_number() || v.get<double>() < 0.0 || v.get<double>() > 1.0) return false;
    }
    return j.size() == 15;
  }
  if (j["type"] == "summary")
    return string("label") && number("runs") && number("mean_avg_accuracy") && number("std_avg_accuracy") &&
           number("mean_forgetting") && number("std_forgetting") && number("mean_new_task_accuracy") &&
           number("std_new_task_accuracy") && number("mean_basis_columns") && j.size() == 10;
  return false;
}

}  // namespace

TEST_CASE("summary means and deviations") {
  const Report r = build_report({record("0.1", 0.5, 0.2, 0.9), record("0.1", 0.7, 0.4, 0.7), record("0.2", 1.0, 0.0, 1.0)});
  REQUIRE(r.summary.size() == 2);
  CHECK(r.summary[0].label == "projection.epsilon=0.1");
  CHECK(r.summary[0].runs == 2);
  CHECK(r.summary[0].mean_avg_accuracy == doctest::Approx(0.6));
  CHECK(r.summary[0].std_avg_accuracy == doctest::Approx(0.1));
  CHECK(r.summary[0].mean_forgetting == doctest::Approx(0.3));
  CHECK(r.summary[0].mean_basis_columns == 5.0);
  CHECK(r.summary[1].std_new_task_accuracy == 0.0);
}

TEST_CASE("report round-trips and validates") {
  const Report r = build_report({record("0.1", 0.5, 0.2, 0.9), record("0.3", 0.123456789012345678, 0.0, 1.0 / 3.0)});
  const std::string text = serialize_report(r);
  CHECK(parse_report(text) == r);
  std::istringstream lines(text);
  std::size_t n = 0;
  for (std::string line; std::getline(lines, line); ++n) CHECK(valid_line(json::parse(line)));
  CHECK(n == 4);
  CHECK_THROWS_AS(parse_report("{\"type\": \"other\"}\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_report("{\"type\": \"run\"}\n"), std::invalid_argument);
}

TEST_CASE("empty result set") {
  const Report empty = build_report({});
  CHECK(serialize_report(empty).empty());
  CHECK(parse_report("") == empty);
  CHECK(render_summary(empty).find("(no runs)") != std::string::npos);
  const auto dir = std::filesystem::temp_directory_path() / ("pegp_eval_" + std::to_string(::getpid()));
  emit_report(empty, dir);
  CHECK(std::filesystem::file_size(dir / "report.jsonl") == 0);
  CHECK(std::filesystem::exists(dir / "summary.txt"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("sweep with two identical values gives identical rows") {
  const Report r = ablation_sweep(tiny(), "projection.epsilon", {"0.05", "0.05"}, {0, 1});
  REQUIRE(r.runs.size() == 4);
  CHECK(r.runs[0].accuracy == r.runs[2].accuracy);
  CHECK(r.runs[1].accuracy == r.runs[3].accuracy);
  CHECK(r.runs[0].config_hash == r.runs[2].config_hash);
  CHECK(r.runs[0].config_hash != r.runs[1].config_hash);  // seeds differ
  REQUIRE(r.summary.size() == 1);
  CHECK(r.summary[0].runs == 4);
}

TEST_CASE("basis size grows with epsilon") {
  const Report r = ablation_sweep(tiny(), "projection.epsilon", {"1e-12", "1e-2", "1e-1"}, {0, 1});
  REQUIRE(r.summary.size() == 3);
  CHECK(r.summary[0].mean_basis_columns <= r.summary[1].mean_basis_columns);
  CHECK(r.summary[1].mean_basis_columns <= r.summary[2].mean_basis_columns);
  std::istringstream lines(serialize_report(r));
  for (std::string line; std::getline(lines, line);) CHECK(valid_line(json::parse(line)));
}

TEST_CASE("sweep preconditions") {
  CHECK_THROWS_AS(ablation_sweep(tiny(), "projection.epsilon", {"0.1"}, {0}), std::invalid_argument);
  CHECK_THROWS_AS(ablation_sweep(tiny(), "projection.epsilon", {"0.1", "0.2"}, {}), std::invalid_argument);
  CHECK_THROWS_AS(ablation_sweep(tiny(), "projection.nothing", {"0.1", "0.2"}, {0}), ConfigError);
}
