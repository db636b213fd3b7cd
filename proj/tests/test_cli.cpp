#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
};

// Runs the CLI inside `cwd`, capturing stdout and stderr.
Result run(const fs::path& cwd, const std::string& args) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" PEGP_CLI "' " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = ::pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Sandbox {
  fs::path dir;
  Sandbox() {
    static int counter = 0;
    dir = fs::temp_directory_path() / ("pegp_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(dir);
    std::ofstream(dir / "run.json") << R"({"seed": 2, "paradigm": "lora", "model": {"dim": 16},
      "scenario": {"tasks": 2, "samples_per_class": 30}, "train": {"epochs": 2}, "output": {"dir": "out"}})";
  }
  ~Sandbox() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("train writes a report and stays inside the output directory") {
  Sandbox s;
  const auto r = run(s.dir, "train --config run.json");
  CHECK(r.code == 0);
  CHECK(r.out.find("task 2/2") != std::string::npos);
  for (const char* f : {"report.jsonl", "summary.txt", "config.json", "checkpoint.json", "warnings.txt"})
    CHECK(fs::exists(s.dir / "out" / f));
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(s.dir)) ++entries;
  CHECK(entries == 2);  // run.json and out/
  const auto report = slurp(s.dir / "out" / "report.jsonl");
  CHECK(report.find("\"type\":\"run\"") != std::string::npos);
  CHECK(run(s.dir, "report out").code == 0);
}

TEST_CASE("repeated runs are byte-identical and --seed reproduces a config seed") {
  Sandbox s;
  REQUIRE(run(s.dir, "train --config run.json --out a").code == 0);
  REQUIRE(run(s.dir, "train --config run.json --out b").code == 0);
  CHECK(slurp(s.dir / "a" / "report.jsonl") == slurp(s.dir / "b" / "report.jsonl"));
  std::ofstream(s.dir / "seed0.json") << R"({"seed": 0, "paradigm": "lora", "model": {"dim": 16},
      "scenario": {"tasks": 2, "samples_per_class": 30}, "train": {"epochs": 2}})";
  REQUIRE(run(s.dir, "train --config seed0.json --seed 2 --out c").code == 0);
  CHECK(slurp(s.dir / "a" / "report.jsonl") == slurp(s.dir / "c" / "report.jsonl"));
}

TEST_CASE("--projection off changes only the projection field") {
  Sandbox s;
  REQUIRE(run(s.dir, "train --config run.json --out on").code == 0);
  REQUIRE(run(s.dir, "train --config run.json --projection off --out off").code == 0);
  auto a = nlohmann::json::parse(slurp(s.dir / "on" / "config.json"));
  auto b = nlohmann::json::parse(slurp(s.dir / "off" / "config.json"));
  const auto diff = nlohmann::json::diff(a, b);
  std::set<std::string> paths;
  for (const auto& op : diff) paths.insert(op["path"].get<std::string>());
  CHECK(paths == std::set<std::string>{"/train/projection", "/output/dir"});
}

TEST_CASE("exit codes") {
  Sandbox s;
  std::ofstream(s.dir / "bad.json") << R"({"train": {"epoch": 2}})";
  auto r = run(s.dir, "train --config bad.json");
  CHECK(r.code == 2);
  CHECK(r.out.find("train.epoch") != std::string::npos);
  CHECK(run(s.dir, "train --config missing.json").code == 2);
  CHECK(run(s.dir, "train --paradigm ia3").code == 2);
  CHECK(run(s.dir, "frobnicate").code == 2);
  std::ofstream(s.dir / "manifest.json") << R"({"seed": 1, "scenario": {"tasks": 1, "manifest": "nowhere.json"}})";
  r = run(s.dir, "train --config manifest.json --out m");
  CHECK(r.code == 1);
  CHECK(r.out.find("nowhere.json") != std::string::npos);
}

TEST_CASE("resume continues from the checkpoint") {
  Sandbox s;
  REQUIRE(run(s.dir, "train --config run.json").code == 0);
  const auto first = slurp(s.dir / "out" / "report.jsonl");
  const auto r = run(s.dir, "train --config run.json --resume");
  CHECK(r.code == 0);
  CHECK(r.out.find("resuming after task 2") != std::string::npos);
  CHECK(slurp(s.dir / "out" / "report.jsonl") == first);
  // A checkpoint from another config is refused.
  CHECK(run(s.dir, "train --config run.json --seed 5 --resume").code == 1);
}

TEST_CASE("ablate writes one group per value") {
  Sandbox s;
  const auto r = run(s.dir, "ablate --config run.json --sweep epsilon=0.01,0.1 --seeds 2 --out sweep");
  CHECK(r.code == 0);
  CHECK(r.out.find("projection.epsilon=0.01") != std::string::npos);
  CHECK(r.out.find("projection.epsilon=0.1") != std::string::npos);
  const auto report = slurp(s.dir / "sweep" / "report.jsonl");
  CHECK(std::count(report.begin(), report.end(), '\n') == 6);
  CHECK(run(s.dir, "ablate --config run.json --sweep epsilon=0.01").code == 2);
  CHECK(run(s.dir, "ablate --config run.json --sweep nothing=1,2").code == 2);
}

TEST_CASE("verify passes and catches an injected fault") {
  Sandbox s;
  const auto ok = run(s.dir, "verify");
  CHECK(ok.code == 0);
  CHECK(ok.out.find("FAIL") == std::string::npos);
  for (const char* p : {"svd", "gradients", "orthogonality", "idempotence", "eta_scaling"}) {
    CAPTURE(p);
    const auto bad = run(s.dir, std::string("verify --inject ") + p);
    CHECK(bad.code == 1);
    CHECK(bad.out.find(std::string("FAIL ") + p) != std::string::npos);
    // Only the injected property fails.
    CHECK(std::count(bad.out.begin(), bad.out.end(), '\n') == 5);
    CHECK(bad.out.find("FAIL") == bad.out.rfind("FAIL"));
  }
  CHECK(run(s.dir, "verify --inject nothing").code == 2);
}
