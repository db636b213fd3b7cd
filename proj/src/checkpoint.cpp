#include "pegp/checkpoint.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace pegp {

using nlohmann::json;

namespace {

json matrix_json(const Matrix& m) { return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}}; }

Matrix matrix_from(const json& j) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != rows * cols) throw CheckpointError("matrix data does not match its shape");
  return Matrix(rows, cols, std::move(data));
}

json matrices_json(const std::vector<Matrix>& ms) {
  json a = json::array();
  for (const auto& m : ms) a.push_back(matrix_json(m));
  return a;
}

std::vector<Matrix> matrices_from(const json& j) {
  std::vector<Matrix> out;
  for (const auto& m : j) out.push_back(matrix_from(m));
  return out;
}

json pet_json(const PetState& pet) {
  const auto& t = pet.tensors;
  return {{"paradigm", std::string(to_string(pet.paradigm))},
          {"lora_scale", pet.lora_scale},
          {"prompt", matrix_json(t.prompt)},
          {"prefix_key", matrices_json(t.prefix_key)},
          {"prefix_value", matrices_json(t.prefix_value)},
          {"adapter_down", matrices_json(t.adapter_down)},
          {"adapter_up", matrices_json(t.adapter_up)},
          {"lora_q_down", matrices_json(t.lora_q_down)},
          {"lora_q_up", matrices_json(t.lora_q_up)},
          {"lora_v_down", matrices_json(t.lora_v_down)},
          {"lora_v_up", matrices_json(t.lora_v_up)}};
}

PetState pet_from(const json& j) {
  PetState pet;
  pet.paradigm = parse_paradigm(j.at("paradigm").get<std::string>());
  pet.lora_scale = j.at("lora_scale").get<double>();
  auto& t = pet.tensors;
  t.prompt = matrix_from(j.at("prompt"));
  t.prefix_key = matrices_from(j.at("prefix_key"));
  t.prefix_value = matrices_from(j.at("prefix_value"));
  t.adapter_down = matrices_from(j.at("adapter_down"));
  t.adapter_up = matrices_from(j.at("adapter_up"));
  t.lora_q_down = matrices_from(j.at("lora_q_down"));
  t.lora_q_up = matrices_from(j.at("lora_q_up"));
  t.lora_v_down = matrices_from(j.at("lora_v_down"));
  t.lora_v_up = matrices_from(j.at("lora_v_up"));
  return pet;
}

}  // namespace

std::string serialize_checkpoint(const RunState& st, const std::string& config_hash) {
  json j;
  j["version"] = kCheckpointVersion;
  j["config_hash"] = config_hash;
  j["completed_tasks"] = st.completed_tasks;
  j["pet"] = pet_json(st.pet);
  j["head"] = matrix_json(st.head.weight);
  json buffers = json::array();
  for (const auto& b : st.buffers)
    buffers.push_back({{"site", b.site().name()},
                       {"width", b.width()},
                       {"cap", b.cap()},
                       {"seen", b.seen()},
                       {"rows", matrix_json(b.rows())},
                       {"tags", b.tags()}});
  j["buffers"] = buffers;
  json bases = json::object();
  for (const auto& [key, b] : st.bases)
    bases[key] = {{"side", b.side == BasisSide::Right ? "right" : "left"}, {"basis", matrix_json(b.basis)}};
  j["bases"] = bases;
  j["accuracy"] = st.accuracy.rows();
  j["basis_columns"] = st.basis_columns;
  j["loss_curves"] = st.loss_curves;
  j["warnings"] = st.warnings;
  return j.dump();
}

RunState deserialize_checkpoint(const std::string& text, const std::string& expected_hash) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported");
    const auto hash = j.at("config_hash").get<std::string>();
    if (hash != expected_hash)
      throw CheckpointError("checkpoint was written for config " + hash + ", not " + expected_hash);
    RunState st;
    st.completed_tasks = j.at("completed_tasks").get<std::size_t>();
    st.pet = pet_from(j.at("pet"));
    st.head.weight = matrix_from(j.at("head"));
    for (const auto& b : j.at("buffers"))
      st.buffers.push_back(FeatureBuffer::restore(SiteId::parse(b.at("site").get<std::string>()),
                                                  b.at("width").get<std::size_t>(), b.at("cap").get<std::size_t>(),
                                                  b.at("seen").get<std::uint64_t>(), matrix_from(b.at("rows")),
                                                  b.at("tags").get<std::vector<int>>()));
    for (const auto& [key, b] : j.at("bases").items()) {
      const auto side = b.at("side").get<std::string>();
      if (side != "right" && side != "left") throw CheckpointError("basis side must be right or left");
      st.bases[key] = {matrix_from(b.at("basis")), side == "right" ? BasisSide::Right : BasisSide::Left};
    }
    st.accuracy = AccuracyMatrix::from_rows(j.at("accuracy").get<std::vector<std::vector<double>>>());
    st.basis_columns = j.at("basis_columns").get<std::vector<std::map<std::string, std::size_t>>>();
    st.loss_curves = j.at("loss_curves").get<std::vector<std::vector<double>>>();
    st.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (st.accuracy.tasks() != st.completed_tasks) throw CheckpointError("accuracy rows do not match completed tasks");
    return st;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const RunState& state, const std::string& config_hash) {
  const auto tmp = std::filesystem::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out << serialize_checkpoint(state, config_hash);
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

RunState load_checkpoint(const std::filesystem::path& path, const std::string& expected_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), expected_hash);
}

}  // namespace pegp
