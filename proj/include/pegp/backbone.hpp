#pragma once

#include <cstdint>
#include <vector>

#include "pegp/linalg.hpp"
#include "pegp/pet.hpp"
#include "pegp/transformer_config.hpp"

namespace pegp {

struct LayerWeights {
  Matrix wq, wk, wv, wo;  // d x d
  Matrix mlp_in;          // d x (mlp_ratio * d)
  Matrix mlp_out;         // (mlp_ratio * d) x d
  std::vector<double> ln1_gain, ln1_bias, ln2_gain, ln2_bias;

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

/// Seeded stand-in for a pretrained encoder. Never updated after init.
struct FrozenWeights {
  TransformerConfig config;
  Matrix embed;     // d x d, applied to incoming tokens
  Matrix position;  // seq_len x d
  std::vector<LayerWeights> layers;
  std::vector<double> final_gain, final_bias;

  friend bool operator==(const FrozenWeights&, const FrozenWeights&) = default;
};

/// Shared linear classifier over mean-pooled tokens. Trainable, not a PET
/// tensor.
struct Classifier {
  Matrix weight;  // d x num_classes

  friend bool operator==(const Classifier&, const Classifier&) = default;
};

FrozenWeights init_backbone(const TransformerConfig& config, std::uint64_t seed);
Classifier init_classifier(const TransformerConfig& config, std::uint64_t seed);

struct LayerNormCache {
  Matrix normalized;         // x_hat
  std::vector<double> rstd;  // 1 / sqrt(var + eps) per row
};

/// Everything the backward pass and the feature sampler need from one
/// forward evaluation.
struct LayerTrace {
  Matrix input;  // residual stream entering the layer, n x d
  LayerNormCache ln1;
  Matrix attn_in;  // LN1 output: input of W_q/W_k/W_v and of the LoRA bypasses
  Matrix queries, keys, values;  // keys/values include prefix rows
  std::vector<Matrix> attention;  // per head, n x (L_p + n), rows sum to 1
  Matrix attn_concat;             // heads concatenated, before W_o
  Matrix mid;                     // residual after attention
  LayerNormCache ln2;
  Matrix mlp_in;  // LN2 output: input of the MLP and of the adapter
  Matrix mlp_pre;
  Matrix adapter_down;  // y = x * W_d
  Matrix adapter_pre;   // y * W_u, before gelu
  Matrix lora_q_down;   // x * W_d for the query bypass
  Matrix lora_v_down;
};

struct ActivationTrace {
  Matrix embedded;  // seq_len x d token embeddings (the prompt site input)
  std::size_t prompt_rows = 0;
  std::vector<LayerTrace> layers;
  LayerNormCache final_ln;
  std::vector<double> pooled;
  std::uint64_t fingerprint = 0;  // of the PET state and classifier used
};

struct ForwardResult {
  std::vector<double> logits;
  ActivationTrace trace;
};

struct Gradients {
  PetGradients pet;
  Matrix classifier;
};

/// Forward pass for one sample of seq_len x d tokens.
ForwardResult forward(const FrozenWeights& w, const PetState& pet, const Classifier& head, const Matrix& tokens);

/// Logits only, without keeping a trace.
std::vector<double> predict(const FrozenWeights& w, const PetState& pet, const Classifier& head, const Matrix& tokens);

/// Reverse pass from dLoss/dlogits. Frozen weights get no gradient. Throws
/// InvalidState if `pet` or `head` changed since the trace was recorded.
Gradients backward(const ActivationTrace& trace, const FrozenWeights& w, const PetState& pet, const Classifier& head,
                   const std::vector<double>& loss_grad);

std::uint64_t fingerprint(const PetState& pet, const Classifier& head);

}  // namespace pegp
