// pegp: continual-learning runs with null-space gradient projection.
//
//   pegp train   --config run.json [--seed N] [--projection on|off] [--paradigm P] [--scenario S] [--out DIR]
//   pegp ablate  --config run.json --sweep projection.epsilon=0.01,0.05,0.2 [--seeds 5] [--out DIR]
//   pegp verify  [--inject PROPERTY]
//   pegp report  DIR_OR_FILE
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid config or usage.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "pegp/checkpoint.hpp"
#include "pegp/eval.hpp"
#include "pegp/verify.hpp"

namespace fs = std::filesystem;
using namespace pegp;

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string projection, paradigm, scenario, out;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "JSON run config (defaults when omitted)");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--projection", o.projection, "on|off")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--paradigm", o.paradigm, "prompt|prefix|adapter|lora");
  cmd->add_option("--scenario", o.scenario, "cil|til|dil|oil");
  cmd->add_option("--out", o.out, "output directory");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (o.config_path.empty()) {
    c.normalize();
    c.validate();
  }
  if (o.seed) set_config_value(c, "seed", std::to_string(*o.seed));
  if (!o.projection.empty()) set_config_value(c, "train.projection", o.projection == "on" ? "true" : "false");
  if (!o.paradigm.empty()) set_config_value(c, "paradigm", "\"" + o.paradigm + "\"");
  if (!o.scenario.empty()) set_config_value(c, "scenario.kind", "\"" + o.scenario + "\"");
  if (!o.out.empty()) set_config_value(c, "output.dir", "\"" + o.out + "\"");
  return c;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int cmd_train(const Overrides& o, bool resume) {
  const RunConfig c = resolve(o);
  const fs::path out = c.out_dir;
  fs::create_directories(out);
  write_file(out / "config.json", dump_run_config(c) + "\n");
  const std::string hash = config_hash(c);
  const fs::path ckpt = out / "checkpoint.json";

  const Experiment e = prepare_experiment(c);
  RunState start = fresh_state(e);
  if (resume && fs::exists(ckpt)) {
    start = load_checkpoint(ckpt, hash);
    std::printf("resuming after task %zu\n", start.completed_tasks);
  }
  TaskCallback after = [&](const RunState& st) {
    const auto& row = st.accuracy.row(st.completed_tasks - 1);
    std::printf("task %zu/%zu  loss %.4f  acc [", st.completed_tasks, e.stream.size(),
                st.loss_curves.back().empty() ? 0.0 : st.loss_curves.back().back());
    for (std::size_t i = 0; i < row.size(); ++i) std::printf("%s%.3f", i ? " " : "", row[i]);
    std::printf("]\n");
    std::fflush(stdout);
    if (c.checkpoints) save_checkpoint(ckpt, st, hash);
  };
  const RunState final_state = continual_run(e.setup, e.stream, std::move(start), after);
  const RunSummary s = summarize(c, final_state);
  const Report report = build_report({make_record(c, s)});
  emit_report(report, out);
  std::string warnings;
  for (const auto& w : s.warnings) warnings += w + "\n";
  write_file(out / "warnings.txt", warnings);
  std::printf("config %s\n%s", hash.c_str(), render_summary(report).c_str());
  if (!s.warnings.empty()) std::printf("%zu warnings, see %s\n", s.warnings.size(), (out / "warnings.txt").c_str());
  return 0;
}

const std::map<std::string, std::string> kSweepAliases = {
    {"epsilon", "projection.epsilon"}, {"eps", "projection.epsilon"}, {"ε", "projection.epsilon"},
    {"beta", "projection.beta"},       {"β", "projection.beta"}};

int cmd_ablate(const Overrides& o, const std::string& sweep, std::size_t seeds) {
  const RunConfig c = resolve(o);
  const auto eq = sweep.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--sweep must look like key=v1,v2,...");
  std::string key = sweep.substr(0, eq);
  if (auto it = kSweepAliases.find(key); it != kSweepAliases.end()) key = it->second;
  std::vector<std::string> values;
  std::stringstream list(sweep.substr(eq + 1));
  for (std::string v; std::getline(list, v, ',');)
    if (!v.empty()) values.push_back(v);
  if (values.size() < 2) throw ConfigError("--sweep needs at least two values");
  if (seeds < 1) throw ConfigError("--seeds must be >= 1");
  std::vector<std::uint64_t> seed_list;
  for (std::size_t k = 0; k < seeds; ++k) seed_list.push_back(c.seed + k);

  const fs::path out = c.out_dir;
  fs::create_directories(out);
  write_file(out / "config.json", dump_run_config(c) + "\n");
  const Report report = ablation_sweep(c, key, values, seed_list);
  emit_report(report, out);
  std::printf("%s", render_summary(report).c_str());
  return 0;
}

int cmd_verify(const std::string& inject) {
  bool ok = true;
  for (const auto& r : run_verify_suite(inject)) {
    std::printf("%s %-14s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    ok = ok && r.pass;
  }
  return ok ? 0 : 1;
}

int cmd_report(const std::string& target) {
  fs::path path = target;
  if (fs::is_directory(path)) path /= "report.jsonl";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const Report report = parse_report(ss.str());
  for (const auto& r : report.runs) {
    std::printf("%s seed %llu %s/%s projection %s%s\n", r.config_hash.c_str(), static_cast<unsigned long long>(r.seed),
                r.paradigm.c_str(), r.scenario.c_str(), r.projection ? "on" : "off",
                r.sweep_key.empty() ? "" : ("  " + r.sweep_key + "=" + r.sweep_value).c_str());
    for (const auto& row : r.accuracy.rows()) {
      std::printf("  ");
      for (double v : row) std::printf(" %.3f", v);
      std::printf("\n");
    }
  }
  std::printf("%s", render_summary(report).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual learning with null-space gradient projection for parameter-efficient tuning"};
  app.require_subcommand(1);

  Overrides train_o, ablate_o;
  bool resume = false;
  auto* train = app.add_subcommand("train", "run one continual stream");
  add_common(train, train_o);
  train->add_flag("--resume", resume, "continue from <out>/checkpoint.json when present");

  std::string sweep;
  std::size_t seeds = 5;
  auto* ablate = app.add_subcommand("ablate", "sweep one config key over several values and seeds");
  add_common(ablate, ablate_o);
  ablate->add_option("--sweep", sweep, "key=comma list, e.g. projection.epsilon=0.01,0.05,0.2")->required();
  ablate->add_option("--seeds", seeds, "seeds per value, counting up from the config seed");

  std::string inject;
  auto* verify = app.add_subcommand("verify", "check numerical invariants");
  verify->add_option("--inject", inject, "deliberately break one property (for testing the checker)");

  std::string target;
  auto* report = app.add_subcommand("report", "print a report written by train or ablate");
  report->add_option("path", target, "report.jsonl or the directory holding it")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(train_o, resume);
    if (*ablate) return cmd_ablate(ablate_o, sweep, seeds);
    if (*verify) return cmd_verify(inject);
    if (*report) return cmd_report(target);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "invalid config: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
