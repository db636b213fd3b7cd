#include "pegp/pet.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "pegp/rng.hpp"

namespace pegp {

std::string_view to_string(PetParadigm p) {
  switch (p) {
    case PetParadigm::Prompt: return "prompt";
    case PetParadigm::Prefix: return "prefix";
    case PetParadigm::Adapter: return "adapter";
    case PetParadigm::LoRA: return "lora";
  }
  return "unknown";
}

PetParadigm parse_paradigm(std::string_view name) {
  if (name == "prompt") return PetParadigm::Prompt;
  if (name == "prefix") return PetParadigm::Prefix;
  if (name == "adapter") return PetParadigm::Adapter;
  if (name == "lora") return PetParadigm::LoRA;
  throw std::invalid_argument("unknown paradigm '" + std::string(name) + "'");
}

namespace {

template <typename Fn, typename Tensors>
void visit(Tensors& t, Fn&& fn) {
  if (!t.prompt.empty()) fn(std::string("prompt"), t.prompt);
  for (std::size_t l = 0; l < t.prefix_key.size(); ++l) {
    fn("prefix." + std::to_string(l) + ".key", t.prefix_key[l]);
    fn("prefix." + std::to_string(l) + ".value", t.prefix_value[l]);
  }
  for (std::size_t l = 0; l < t.adapter_down.size(); ++l) {
    fn("adapter." + std::to_string(l) + ".down", t.adapter_down[l]);
    fn("adapter." + std::to_string(l) + ".up", t.adapter_up[l]);
  }
  for (std::size_t l = 0; l < t.lora_q_down.size(); ++l) {
    fn("lora." + std::to_string(l) + ".q.down", t.lora_q_down[l]);
    fn("lora." + std::to_string(l) + ".q.up", t.lora_q_up[l]);
    fn("lora." + std::to_string(l) + ".v.down", t.lora_v_down[l]);
    fn("lora." + std::to_string(l) + ".v.up", t.lora_v_up[l]);
  }
}

Matrix zeros_of(const Matrix& m) { return Matrix(m.rows(), m.cols()); }

std::vector<Matrix> zeros_of(const std::vector<Matrix>& v) {
  std::vector<Matrix> out;
  out.reserve(v.size());
  for (const auto& m : v) out.push_back(zeros_of(m));
  return out;
}

void expect_shape(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw std::invalid_argument(what + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                                std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

}  // namespace

void PetTensors::for_each(const std::function<void(const std::string&, Matrix&)>& fn) { visit(*this, fn); }

void PetTensors::for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const {
  visit(*this, fn);
}

PetTensors PetTensors::zeros_like() const {
  PetTensors z;
  if (!prompt.empty()) z.prompt = zeros_of(prompt);
  z.prefix_key = zeros_of(prefix_key);
  z.prefix_value = zeros_of(prefix_value);
  z.adapter_down = zeros_of(adapter_down);
  z.adapter_up = zeros_of(adapter_up);
  z.lora_q_down = zeros_of(lora_q_down);
  z.lora_q_up = zeros_of(lora_q_up);
  z.lora_v_down = zeros_of(lora_v_down);
  z.lora_v_up = zeros_of(lora_v_up);
  return z;
}

PetGradients zero_gradients(const PetState& pet) { return {pet.paradigm, pet.tensors.zeros_like()}; }

PetState init_pet(PetParadigm paradigm, const TransformerConfig& config, const PetConfig& pc, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.dim;
  const double down_std = 1.0 / std::sqrt(static_cast<double>(d));
  PetState pet;
  pet.paradigm = paradigm;
  pet.lora_scale = pc.lora_scale;
  auto& t = pet.tensors;
  switch (paradigm) {
    case PetParadigm::Prompt:
      if (pc.prompt_length < 1) throw std::invalid_argument("pet.prompt_length must be >= 1");
      t.prompt = rng.normal_matrix(pc.prompt_length, d, 0.02);
      break;
    case PetParadigm::Prefix:
      if (pc.prefix_length < 1) throw std::invalid_argument("pet.prefix_length must be >= 1");
      for (std::size_t l = 0; l < config.depth; ++l) {
        t.prefix_key.push_back(rng.normal_matrix(pc.prefix_length, d, 0.02));
        t.prefix_value.push_back(rng.normal_matrix(pc.prefix_length, d, 0.02));
      }
      break;
    case PetParadigm::Adapter:
      if (pc.rank < 1) throw std::invalid_argument("pet.rank must be >= 1");
      for (std::size_t l = 0; l < config.depth; ++l) {
        t.adapter_down.push_back(rng.normal_matrix(d, pc.rank, down_std));
        t.adapter_up.emplace_back(pc.rank, d);
      }
      break;
    case PetParadigm::LoRA:
      if (pc.rank < 1) throw std::invalid_argument("pet.rank must be >= 1");
      for (std::size_t l = 0; l < config.depth; ++l) {
        t.lora_q_down.push_back(rng.normal_matrix(d, pc.rank, down_std));
        t.lora_q_up.emplace_back(pc.rank, d);
        t.lora_v_down.push_back(rng.normal_matrix(d, pc.rank, down_std));
        t.lora_v_up.emplace_back(pc.rank, d);
      }
      break;
  }
  return pet;
}

void validate_pet(const PetState& pet, const TransformerConfig& config) {
  const std::size_t d = config.dim;
  const auto& t = pet.tensors;
  switch (pet.paradigm) {
    case PetParadigm::Prompt:
      if (t.prompt.rows() < 1) throw std::invalid_argument("prompt must have at least one row");
      expect_shape(t.prompt, t.prompt.rows(), d, "prompt");
      break;
    case PetParadigm::Prefix: {
      if (t.prefix_key.size() != config.depth || t.prefix_value.size() != config.depth)
        throw std::invalid_argument("prefix: one key/value pair per layer required");
      const std::size_t len = t.prefix_key.front().rows();
      if (len < 1) throw std::invalid_argument("prefix must have at least one row");
      for (std::size_t l = 0; l < config.depth; ++l) {
        expect_shape(t.prefix_key[l], len, d, "prefix key");
        expect_shape(t.prefix_value[l], len, d, "prefix value");
      }
      break;
    }
    case PetParadigm::Adapter: {
      if (t.adapter_down.size() != config.depth || t.adapter_up.size() != config.depth)
        throw std::invalid_argument("adapter: one factor pair per layer required");
      const std::size_t r = t.adapter_down.front().cols();
      if (r < 1) throw std::invalid_argument("adapter rank must be >= 1");
      for (std::size_t l = 0; l < config.depth; ++l) {
        expect_shape(t.adapter_down[l], d, r, "adapter down");
        expect_shape(t.adapter_up[l], r, d, "adapter up");
      }
      break;
    }
    case PetParadigm::LoRA: {
      if (t.lora_q_down.size() != config.depth || t.lora_v_down.size() != config.depth ||
          t.lora_q_up.size() != config.depth || t.lora_v_up.size() != config.depth)
        throw std::invalid_argument("lora: one factor pair per layer and projection required");
      const std::size_t r = t.lora_q_down.front().cols();
      if (r < 1) throw std::invalid_argument("lora rank must be >= 1");
      for (std::size_t l = 0; l < config.depth; ++l) {
        expect_shape(t.lora_q_down[l], d, r, "lora q down");
        expect_shape(t.lora_q_up[l], r, d, "lora q up");
        expect_shape(t.lora_v_down[l], d, r, "lora v down");
        expect_shape(t.lora_v_up[l], r, d, "lora v up");
      }
      break;
    }
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Matrix apply_prompt(const Matrix& prompt, const Matrix& x) {
  if (prompt.rows() == 0) throw std::invalid_argument("apply_prompt: prompt has no rows");
  if (prompt.cols() != x.cols()) throw std::invalid_argument("apply_prompt: width mismatch");
  return vstack(prompt, x);
}

std::pair<Matrix, Matrix> apply_prefix(const Matrix& prefix_key, const Matrix& prefix_value, const Matrix& keys,
                                       const Matrix& values) {
  if (prefix_key.rows() == 0 || prefix_value.rows() == 0)
    throw std::invalid_argument("apply_prefix: prefix has no rows");
  if (prefix_key.rows() != prefix_value.rows())
    throw std::invalid_argument("apply_prefix: key/value prefix lengths differ");
  if (prefix_key.cols() != keys.cols() || prefix_value.cols() != values.cols())
    throw std::invalid_argument("apply_prefix: width mismatch");
  return {vstack(prefix_key, keys), vstack(prefix_value, values)};
}

namespace {

BypassResult bypass(const Matrix& down, const Matrix& up, const Matrix& x, const Matrix& backbone_out) {
  if (x.cols() != down.rows() || down.cols() != up.rows() || up.cols() != backbone_out.cols() ||
      x.rows() != backbone_out.rows())
    throw std::invalid_argument("bypass: shape mismatch");
  BypassResult r;
  r.down_projected = matmul(x, down);
  r.pre_activation = matmul(r.down_projected, up);
  r.out = backbone_out;
  return r;
}

}  // namespace

BypassResult apply_adapter(const Matrix& down, const Matrix& up, const Matrix& x, const Matrix& backbone_out) {
  BypassResult r = bypass(down, up, x, backbone_out);
  for (std::size_t i = 0; i < r.out.size(); ++i) r.out.data()[i] += gelu(r.pre_activation.data()[i]);
  return r;
}

BypassResult apply_lora(const Matrix& down, const Matrix& up, double s, const Matrix& x, const Matrix& backbone_out) {
  BypassResult r = bypass(down, up, x, backbone_out);
  for (std::size_t i = 0; i < r.out.size(); ++i) r.out.data()[i] += s * r.pre_activation.data()[i];
  return r;
}

}  // namespace pegp
