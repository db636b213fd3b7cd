#include "pegp/config.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "pegp/rng.hpp"

namespace pegp {

using nlohmann::json;

void RunConfig::normalize() {
  model.seq_len = scenario.seq_len;
  model.num_classes = scenario.total_classes();
  train.scenario = scenario.scenario;
  train.seed = seed;
}

void RunConfig::validate() const {
  auto wrap = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string(section) + ": " + e.what());
    }
  };
  wrap("model", [&] { model.validate(); });
  wrap("scenario", [&] { scenario.validate(); });
  wrap("train", [&] { train.validate(); });
  if (model.seq_len != scenario.seq_len) throw ConfigError("model.seq_len must equal scenario.seq_len");
  if (model.num_classes != scenario.total_classes())
    throw ConfigError("model.num_classes must equal the scenario's class count");
  if (train.scenario != scenario.scenario) throw ConfigError("train.scenario must equal scenario.kind");
  if (pet.rank < 1) throw ConfigError("pet.rank must be >= 1");
  if (paradigm == PetParadigm::Prompt && pet.prompt_length < 1) throw ConfigError("pet.prompt_length must be >= 1");
  if (paradigm == PetParadigm::Prefix && pet.prefix_length < 1) throw ConfigError("pet.prefix_length must be >= 1");
  if (!std::isfinite(pet.lora_scale)) throw ConfigError("pet.lora_scale must be finite");
  if (out_dir.empty()) throw ConfigError("output.dir must not be empty");
}

namespace {

json to_json(const RunConfig& c, bool with_output) {
  json j;
  j["seed"] = c.seed;
  j["paradigm"] = std::string(to_string(c.paradigm));
  j["model"] = {{"depth", c.model.depth}, {"dim", c.model.dim}, {"heads", c.model.heads},
                {"mlp_ratio", c.model.mlp_ratio}};
  j["pet"] = {{"prompt_length", c.pet.prompt_length},
              {"prefix_length", c.pet.prefix_length},
              {"rank", c.pet.rank},
              {"lora_scale", c.pet.lora_scale}};
  j["scenario"] = {{"kind", std::string(to_string(c.scenario.scenario))},
                   {"tasks", c.scenario.tasks},
                   {"classes_per_task", c.scenario.classes_per_task},
                   {"samples_per_class", c.scenario.samples_per_class},
                   {"seq_len", c.scenario.seq_len},
                   {"token_width", c.scenario.token_width},
                   {"noise", c.scenario.noise},
                   {"separation", c.scenario.separation},
                   {"shift", c.scenario.shift},
                   {"manifest", c.manifest}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"first_task_lr", c.train.first_task_lr},
                {"optimizer", std::string(to_string(c.train.optimizer))},
                {"adam_beta1", c.train.adam_beta1},
                {"adam_beta2", c.train.adam_beta2},
                {"adam_eps", c.train.adam_eps},
                {"projection", c.train.projection},
                {"project_head", c.train.project_head}};
  const auto& p = c.train.projection_config;
  j["projection"] = {{"epsilon", p.epsilon},
                     {"beta", p.beta},
                     {"sample_count", p.sample_count},
                     {"buffer_cap", p.buffer_cap}};
  if (with_output) j["output"] = {{"dir", c.out_dir}, {"checkpoints", c.checkpoints}};
  return j;
}

// Reads the keys of one JSON object, rejecting anything not consumed.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  /// Throws on any key that no accessor asked for.
  void done() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown key '" + join(key) + "'");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& child(const std::string& key) { return j_.at(key); }
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void count(const std::string& key, std::size_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(join(key) + " must be a non-negative integer");
    out = v.get<std::size_t>();
  }
  void u64(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(join(key) + " must be a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  void number(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(join(key) + " must be a number");
    out = v.get<double>();
  }
  void boolean(const std::string& key, bool& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(join(key) + " must be true or false");
    out = v.get<bool>();
  }
  void string(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(join(key) + " must be a string");
    out = v.get<std::string>();
  }
  template <typename Enum, typename Parse>
  void choice(const std::string& key, Enum& out, Parse parse) {
    std::string s;
    string(key, s);
    if (s.empty()) return;
    try {
      out = parse(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(join(key) + ": " + e.what());
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

RunConfig from_json(const json& j) {
  RunConfig c;
  Reader top(j, "");
  top.u64("seed", c.seed);
  top.choice("paradigm", c.paradigm, parse_paradigm);
  if (top.has("model")) {
    Reader r(top.child("model"), "model");
    r.count("depth", c.model.depth);
    r.count("dim", c.model.dim);
    r.count("heads", c.model.heads);
    r.count("mlp_ratio", c.model.mlp_ratio);
    r.done();
  }
  if (top.has("pet")) {
    Reader r(top.child("pet"), "pet");
    r.count("prompt_length", c.pet.prompt_length);
    r.count("prefix_length", c.pet.prefix_length);
    r.count("rank", c.pet.rank);
    r.number("lora_scale", c.pet.lora_scale);
    r.done();
  }
  if (top.has("scenario")) {
    Reader r(top.child("scenario"), "scenario");
    r.choice("kind", c.scenario.scenario, parse_scenario);
    r.count("tasks", c.scenario.tasks);
    r.count("classes_per_task", c.scenario.classes_per_task);
    r.count("samples_per_class", c.scenario.samples_per_class);
    r.count("seq_len", c.scenario.seq_len);
    r.count("token_width", c.scenario.token_width);
    r.number("noise", c.scenario.noise);
    r.number("separation", c.scenario.separation);
    r.number("shift", c.scenario.shift);
    r.string("manifest", c.manifest);
    r.done();
  }
  if (top.has("train")) {
    Reader r(top.child("train"), "train");
    r.count("epochs", c.train.epochs);
    r.count("batch_size", c.train.batch_size);
    r.number("lr", c.train.lr);
    r.number("first_task_lr", c.train.first_task_lr);
    r.choice("optimizer", c.train.optimizer, parse_optimizer);
    r.number("adam_beta1", c.train.adam_beta1);
    r.number("adam_beta2", c.train.adam_beta2);
    r.number("adam_eps", c.train.adam_eps);
    r.boolean("projection", c.train.projection);
    r.boolean("project_head", c.train.project_head);
    r.done();
  }
  if (top.has("projection")) {
    Reader r(top.child("projection"), "projection");
    auto& p = c.train.projection_config;
    r.number("epsilon", p.epsilon);
    r.number("beta", p.beta);
    r.count("sample_count", p.sample_count);
    r.count("buffer_cap", p.buffer_cap);
    r.done();
  }
  if (top.has("output")) {
    Reader r(top.child("output"), "output");
    r.string("dir", c.out_dir);
    r.boolean("checkpoints", c.checkpoints);
    r.done();
  }
  top.done();
  return c;
}

}  // namespace

RunConfig parse_run_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c = from_json(j);
  c.normalize();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& config) { return to_json(config, true).dump(2); }

std::string config_hash(const RunConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(to_json(config, false).dump())));
  return buf;
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  json j = to_json(config, true);
  json* node = &j;
  std::string k(key);
  std::size_t start = 0;
  while (true) {
    const auto dot = k.find('.', start);
    const std::string part = k.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown key '" + k + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("'" + k + "' is a section, not a value");
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = std::string(value);
  }
  *node = parsed;
  RunConfig c = from_json(j);
  c.normalize();
  c.validate();
  config = c;
}

}  // namespace pegp
