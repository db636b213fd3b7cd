#include "pegp/backbone.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>
#include <string>

#include "pegp/rng.hpp"

namespace pegp {

namespace {

constexpr double kLayerNormEps = 1e-6;

Matrix layer_norm(const Matrix& x, const std::vector<double>& gain, const std::vector<double>& bias,
                  LayerNormCache& cache) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  cache.normalized = Matrix(n, d);
  cache.rstd.assign(n, 0.0);
  Matrix out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd[i] = rstd;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (x(i, j) - mean) * rstd;
      cache.normalized(i, j) = xh;
      out(i, j) = gain[j] * xh + bias[j];
    }
  }
  return out;
}

Matrix layer_norm_backward(const Matrix& dout, const std::vector<double>& gain, const LayerNormCache& cache) {
  const std::size_t n = dout.rows();
  const std::size_t d = dout.cols();
  Matrix dx(n, d);
  std::vector<double> dxh(d);
  for (std::size_t i = 0; i < n; ++i) {
    double mean_dxh = 0.0;
    double mean_dxh_xh = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dxh[j] = dout(i, j) * gain[j];
      mean_dxh += dxh[j];
      mean_dxh_xh += dxh[j] * cache.normalized(i, j);
    }
    mean_dxh /= static_cast<double>(d);
    mean_dxh_xh /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j)
      dx(i, j) = cache.rstd[i] * (dxh[j] - mean_dxh - cache.normalized(i, j) * mean_dxh_xh);
  }
  return dx;
}

void check_tokens(const FrozenWeights& w, const Matrix& tokens) {
  if (tokens.rows() != w.config.seq_len || tokens.cols() != w.config.dim) {
    throw std::invalid_argument("forward: tokens are " + std::to_string(tokens.rows()) + "x" +
                                std::to_string(tokens.cols()) + ", expected " + std::to_string(w.config.seq_len) +
                                "x" + std::to_string(w.config.dim));
  }
}

// Multi-head softmax attention. queries n x d, keys/values m x d.
Matrix attend(const Matrix& queries, const Matrix& keys, const Matrix& values, std::size_t heads,
              std::vector<Matrix>& weights_out) {
  const std::size_t n = queries.rows();
  const std::size_t m = keys.rows();
  const std::size_t d = queries.cols();
  const std::size_t dh = d / heads;
  // softmax(Q K^T / sqrt(d / h))
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix out(n, d);
  weights_out.assign(heads, Matrix());
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    Matrix a(n, m);
    for (std::size_t i = 0; i < n; ++i) {
      double row_max = -INFINITY;
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += queries(i, off + c) * keys(j, off + c);
        a(i, j) = s * scale;
        row_max = std::max(row_max, a(i, j));
      }
      double total = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        a(i, j) = std::exp(a(i, j) - row_max);
        total += a(i, j);
      }
      for (std::size_t j = 0; j < m; ++j) a(i, j) /= total;
      for (std::size_t j = 0; j < m; ++j) {
        const double aij = a(i, j);
        for (std::size_t c = 0; c < dh; ++c) out(i, off + c) += aij * values(j, off + c);
      }
    }
    weights_out[h] = std::move(a);
  }
  return out;
}

void hash_matrix(std::uint64_t& h, const Matrix& m) {
  for (double v : m.data()) h = mix64(h ^ std::bit_cast<std::uint64_t>(v));
}

}  // namespace

void TransformerConfig::validate() const {
  auto positive = [](std::size_t v, const char* field) {
    if (v < 1) throw std::invalid_argument(std::string("model.") + field + " must be >= 1");
  };
  positive(depth, "depth");
  positive(dim, "dim");
  positive(heads, "heads");
  positive(seq_len, "seq_len");
  positive(mlp_ratio, "mlp_ratio");
  positive(num_classes, "num_classes");
  if (dim % heads != 0) throw std::invalid_argument("model.dim must be divisible by model.heads");
}

FrozenWeights init_backbone(const TransformerConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.dim;
  const std::size_t hidden = config.mlp_ratio * d;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  FrozenWeights w;
  w.config = config;
  w.embed = rng.normal_matrix(d, d, sd);
  w.position = rng.normal_matrix(config.seq_len, d, 0.1);
  for (std::size_t l = 0; l < config.depth; ++l) {
    LayerWeights lw;
    lw.wq = rng.normal_matrix(d, d, sd);
    lw.wk = rng.normal_matrix(d, d, sd);
    lw.wv = rng.normal_matrix(d, d, sd);
    lw.wo = rng.normal_matrix(d, d, sd);
    lw.mlp_in = rng.normal_matrix(d, hidden, sd);
    lw.mlp_out = rng.normal_matrix(hidden, d, 1.0 / std::sqrt(static_cast<double>(hidden)));
    lw.ln1_gain.assign(d, 1.0);
    lw.ln1_bias.assign(d, 0.0);
    lw.ln2_gain.assign(d, 1.0);
    lw.ln2_bias.assign(d, 0.0);
    w.layers.push_back(std::move(lw));
  }
  w.final_gain.assign(d, 1.0);
  w.final_bias.assign(d, 0.0);
  return w;
}

Classifier init_classifier(const TransformerConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  return {rng.normal_matrix(config.dim, config.num_classes, 0.02)};
}

std::uint64_t fingerprint(const PetState& pet, const Classifier& head) {
  std::uint64_t h = mix64(static_cast<std::uint64_t>(pet.paradigm) + 1);
  h = mix64(h ^ std::bit_cast<std::uint64_t>(pet.lora_scale));
  pet.tensors.for_each([&](const std::string&, const Matrix& m) { hash_matrix(h, m); });
  hash_matrix(h, head.weight);
  return h;
}

ForwardResult forward(const FrozenWeights& w, const PetState& pet, const Classifier& head, const Matrix& tokens) {
  check_tokens(w, tokens);
  validate_pet(pet, w.config);
  if (head.weight.rows() != w.config.dim || head.weight.cols() != w.config.num_classes)
    throw std::invalid_argument("forward: classifier shape does not match config");

  const auto& cfg = w.config;
  const auto& t = pet.tensors;
  ForwardResult result;
  ActivationTrace& trace = result.trace;
  trace.fingerprint = fingerprint(pet, head);

  trace.embedded = add(matmul(tokens, w.embed), w.position);
  Matrix h = trace.embedded;
  if (pet.paradigm == PetParadigm::Prompt) {
    h = apply_prompt(t.prompt, trace.embedded);
    trace.prompt_rows = t.prompt.rows();
  }

  trace.layers.resize(cfg.depth);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const LayerWeights& lw = w.layers[l];
    LayerTrace& lt = trace.layers[l];
    lt.input = h;
    lt.attn_in = layer_norm(h, lw.ln1_gain, lw.ln1_bias, lt.ln1);

    lt.queries = matmul(lt.attn_in, lw.wq);
    Matrix keys = matmul(lt.attn_in, lw.wk);
    Matrix values = matmul(lt.attn_in, lw.wv);
    if (pet.paradigm == PetParadigm::LoRA) {
      BypassResult q = apply_lora(t.lora_q_down[l], t.lora_q_up[l], pet.lora_scale, lt.attn_in, lt.queries);
      BypassResult v = apply_lora(t.lora_v_down[l], t.lora_v_up[l], pet.lora_scale, lt.attn_in, values);
      lt.queries = std::move(q.out);
      lt.lora_q_down = std::move(q.down_projected);
      values = std::move(v.out);
      lt.lora_v_down = std::move(v.down_projected);
    }
    if (pet.paradigm == PetParadigm::Prefix) {
      auto [k, v] = apply_prefix(t.prefix_key[l], t.prefix_value[l], keys, values);
      lt.keys = std::move(k);
      lt.values = std::move(v);
    } else {
      lt.keys = std::move(keys);
      lt.values = std::move(values);
    }

    lt.attn_concat = attend(lt.queries, lt.keys, lt.values, cfg.heads, lt.attention);
    lt.mid = add(h, matmul(lt.attn_concat, lw.wo));

    lt.mlp_in = layer_norm(lt.mid, lw.ln2_gain, lw.ln2_bias, lt.ln2);
    lt.mlp_pre = matmul(lt.mlp_in, lw.mlp_in);
    Matrix act = lt.mlp_pre;
    for (double& v : act.data()) v = gelu(v);
    Matrix block_out = matmul(act, lw.mlp_out);
    if (pet.paradigm == PetParadigm::Adapter) {
      BypassResult a = apply_adapter(t.adapter_down[l], t.adapter_up[l], lt.mlp_in, block_out);
      block_out = std::move(a.out);
      lt.adapter_down = std::move(a.down_projected);
      lt.adapter_pre = std::move(a.pre_activation);
    }
    h = add(lt.mid, block_out);
  }

  Matrix final_out = layer_norm(h, w.final_gain, w.final_bias, trace.final_ln);
  const std::size_t d = cfg.dim;
  trace.pooled.assign(d, 0.0);
  for (std::size_t i = trace.prompt_rows; i < final_out.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j) trace.pooled[j] += final_out(i, j);
  for (double& v : trace.pooled) v /= static_cast<double>(cfg.seq_len);

  result.logits.assign(cfg.num_classes, 0.0);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t c = 0; c < cfg.num_classes; ++c) result.logits[c] += trace.pooled[j] * head.weight(j, c);
  return result;
}

std::vector<double> predict(const FrozenWeights& w, const PetState& pet, const Classifier& head,
                            const Matrix& tokens) {
  return forward(w, pet, head, tokens).logits;
}

Gradients backward(const ActivationTrace& trace, const FrozenWeights& w, const PetState& pet, const Classifier& head,
                   const std::vector<double>& loss_grad) {
  if (trace.fingerprint != fingerprint(pet, head))
    throw InvalidState("backward: trace was recorded with different trainable parameters");
  const auto& cfg = w.config;
  if (loss_grad.size() != cfg.num_classes) throw std::invalid_argument("backward: loss_grad length mismatch");
  if (trace.layers.size() != cfg.depth) throw InvalidState("backward: trace does not match the backbone depth");

  const std::size_t d = cfg.dim;
  const std::size_t dh = cfg.head_dim();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& t = pet.tensors;

  Gradients grads{zero_gradients(pet), Matrix(d, cfg.num_classes)};
  auto& g = grads.pet.tensors;

  // Classifier and pooling.
  std::vector<double> dpooled(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
      grads.classifier(j, c) = trace.pooled[j] * loss_grad[c];
      dpooled[j] += head.weight(j, c) * loss_grad[c];
    }
  }
  const std::size_t n = trace.prompt_rows + cfg.seq_len;
  Matrix dfinal(n, d);
  for (std::size_t i = trace.prompt_rows; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) dfinal(i, j) = dpooled[j] / static_cast<double>(cfg.seq_len);
  Matrix dh_res = layer_norm_backward(dfinal, w.final_gain, trace.final_ln);

  for (std::size_t li = cfg.depth; li-- > 0;) {
    const LayerWeights& lw = w.layers[li];
    const LayerTrace& lt = trace.layers[li];

    // h_out = mid + mlp(LN2(mid)) [+ adapter(LN2(mid))]
    Matrix dmid = dh_res;
    Matrix dmlp_act = matmul_a_bt(dh_res, lw.mlp_out);
    for (std::size_t i = 0; i < dmlp_act.size(); ++i) dmlp_act.data()[i] *= gelu_derivative(lt.mlp_pre.data()[i]);
    Matrix dmlp_in = matmul_a_bt(dmlp_act, lw.mlp_in);

    if (pet.paradigm == PetParadigm::Adapter) {
      Matrix dpre = dh_res;
      for (std::size_t i = 0; i < dpre.size(); ++i) dpre.data()[i] *= gelu_derivative(lt.adapter_pre.data()[i]);
      g.adapter_up[li] = matmul_at_b(lt.adapter_down, dpre);
      Matrix dy = matmul_a_bt(dpre, t.adapter_up[li]);
      g.adapter_down[li] = matmul_at_b(lt.mlp_in, dy);
      axpy(1.0, matmul_a_bt(dy, t.adapter_down[li]), dmlp_in);
    }
    axpy(1.0, layer_norm_backward(dmlp_in, lw.ln2_gain, lt.ln2), dmid);

    // mid = input + attention(LN1(input)) W_o
    Matrix dinput = dmid;
    Matrix dconcat = matmul_a_bt(dmid, lw.wo);
    const std::size_t rows_q = lt.queries.rows();
    const std::size_t rows_kv = lt.keys.rows();
    Matrix dq(rows_q, d);
    Matrix dk(rows_kv, d);
    Matrix dv(rows_kv, d);
    std::vector<double> da(rows_kv);
    for (std::size_t hh = 0; hh < cfg.heads; ++hh) {
      const std::size_t off = hh * dh;
      const Matrix& a = lt.attention[hh];
      for (std::size_t i = 0; i < rows_q; ++i) {
        double weighted = 0.0;
        for (std::size_t j = 0; j < rows_kv; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) {
            s += dconcat(i, off + c) * lt.values(j, off + c);
            dv(j, off + c) += a(i, j) * dconcat(i, off + c);
          }
          da[j] = s;
          weighted += a(i, j) * s;
        }
        for (std::size_t j = 0; j < rows_kv; ++j) {
          const double ds = a(i, j) * (da[j] - weighted) * attn_scale;
          if (ds == 0.0) continue;
          for (std::size_t c = 0; c < dh; ++c) {
            dq(i, off + c) += ds * lt.keys(j, off + c);
            dk(j, off + c) += ds * lt.queries(i, off + c);
          }
        }
      }
    }

    if (pet.paradigm == PetParadigm::Prefix) {
      const std::size_t lp = t.prefix_key[li].rows();
      g.prefix_key[li] = row_slice(dk, 0, lp);
      g.prefix_value[li] = row_slice(dv, 0, lp);
      dk = row_slice(dk, lp, rows_kv);
      dv = row_slice(dv, lp, rows_kv);
    }

    Matrix dattn_in = matmul_a_bt(dq, lw.wq);
    axpy(1.0, matmul_a_bt(dk, lw.wk), dattn_in);
    axpy(1.0, matmul_a_bt(dv, lw.wv), dattn_in);

    if (pet.paradigm == PetParadigm::LoRA) {
      const double s = pet.lora_scale;
      // out += s * (x D) U
      auto lora_grads = [&](const Matrix& dout, const Matrix& down_proj, const Matrix& down, const Matrix& up,
                            Matrix& gdown, Matrix& gup) {
        gup = scale(matmul_at_b(down_proj, dout), s);
        Matrix dy = scale(matmul_a_bt(dout, up), s);
        gdown = matmul_at_b(lt.attn_in, dy);
        axpy(1.0, matmul_a_bt(dy, down), dattn_in);
      };
      lora_grads(dq, lt.lora_q_down, t.lora_q_down[li], t.lora_q_up[li], g.lora_q_down[li], g.lora_q_up[li]);
      lora_grads(dv, lt.lora_v_down, t.lora_v_down[li], t.lora_v_up[li], g.lora_v_down[li], g.lora_v_up[li]);
    }
    axpy(1.0, layer_norm_backward(dattn_in, lw.ln1_gain, lt.ln1), dinput);
    dh_res = std::move(dinput);
  }

  if (pet.paradigm == PetParadigm::Prompt) g.prompt = row_slice(dh_res, 0, trace.prompt_rows);
  return grads;
}

}  // namespace pegp
