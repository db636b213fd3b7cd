#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pegp/linalg.hpp"
#include "pegp/transformer_config.hpp"

namespace pegp {

enum class PetParadigm { Prompt, Prefix, Adapter, LoRA };

std::string_view to_string(PetParadigm p);
PetParadigm parse_paradigm(std::string_view name);

/// Sizes for the inserted parameters. Only the fields of the active paradigm
/// are read.
struct PetConfig {
  std::size_t prompt_length = 4;  // l_p
  std::size_t prefix_length = 4;  // L_p
  std::size_t rank = 4;           // r
  double lora_scale = 1.0;        // s
};

/// The trainable tensors of one paradigm. Tensors of inactive paradigms stay
/// empty. Row-vector convention throughout: tokens are rows, so a factor pair
/// acts as x * down * up with down (d x r) and up (r x d).
struct PetTensors {
  Matrix prompt;                     // l_p x d, inserted before layer 0
  std::vector<Matrix> prefix_key;    // per layer, L_p x d
  std::vector<Matrix> prefix_value;  // per layer, L_p x d
  std::vector<Matrix> adapter_down;  // per layer, d x r
  std::vector<Matrix> adapter_up;    // per layer, r x d
  std::vector<Matrix> lora_q_down;   // per layer, on W_q
  std::vector<Matrix> lora_q_up;
  std::vector<Matrix> lora_v_down;   // per layer, on W_v
  std::vector<Matrix> lora_v_up;

  /// Visits every non-empty tensor with a stable name such as
  /// "adapter.1.down" or "lora.0.q.up", in a fixed order.
  void for_each(const std::function<void(const std::string&, Matrix&)>& fn);
  void for_each(const std::function<void(const std::string&, const Matrix&)>& fn) const;

  /// Same layout with every entry zero.
  PetTensors zeros_like() const;

  friend bool operator==(const PetTensors&, const PetTensors&) = default;
};

struct PetState {
  PetParadigm paradigm = PetParadigm::Adapter;
  PetTensors tensors;
  double lora_scale = 1.0;

  friend bool operator==(const PetState&, const PetState&) = default;
};

/// Gradients mirror the trainable tensors of a PetState exactly.
struct PetGradients {
  PetParadigm paradigm = PetParadigm::Adapter;
  PetTensors tensors;
};

PetGradients zero_gradients(const PetState& pet);

/// Prompt/Prefix rows ~ N(0, 0.02^2). Adapter/LoRA: down ~ N(0, 1/d), up = 0,
/// so the bypass starts as an exact no-op.
PetState init_pet(PetParadigm paradigm, const TransformerConfig& config, const PetConfig& pet_config,
                  std::uint64_t seed);

/// Throws std::invalid_argument if tensor shapes do not fit `config`.
void validate_pet(const PetState& pet, const TransformerConfig& config);

double gelu(double x);
double gelu_derivative(double x);

/// [p; x]. The prompt must have at least one row and the same width as x.
Matrix apply_prompt(const Matrix& prompt, const Matrix& x);

/// ([p_k; K], [p_v; V]). Queries are not touched.
std::pair<Matrix, Matrix> apply_prefix(const Matrix& prefix_key, const Matrix& prefix_value, const Matrix& keys,
                                       const Matrix& values);

struct BypassResult {
  Matrix out;            // backbone_out + bypass
  Matrix down_projected; // y = x * down, the up-factor's input
  Matrix pre_activation; // y * up (before f_act for adapters, before s for LoRA)
};

/// h = backbone_out + gelu(x * down * up).
BypassResult apply_adapter(const Matrix& down, const Matrix& up, const Matrix& x, const Matrix& backbone_out);

/// h = backbone_out + s * (x * down * up).
BypassResult apply_lora(const Matrix& down, const Matrix& up, double s, const Matrix& x, const Matrix& backbone_out);

}  // namespace pegp
