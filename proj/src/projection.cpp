#include "pegp/projection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "pegp/rng.hpp"

namespace pegp {

namespace {

std::string layer_name(const char* prefix, std::size_t layer, const char* suffix) {
  return std::string(prefix) + "." + std::to_string(layer) + "." + suffix;
}

}  // namespace

std::string SiteId::name() const {
  switch (kind) {
    case SiteKind::PromptInput: return "prompt.x";
    case SiteKind::PrefixInput: return layer_name("prefix", layer, "x");
    case SiteKind::AdapterInput: return layer_name("adapter", layer, "x");
    case SiteKind::AdapterDown: return layer_name("adapter", layer, "y");
    case SiteKind::LoraInput: return layer_name("lora", layer, "x");
    case SiteKind::LoraQDown: return layer_name("lora", layer, "q.y");
    case SiteKind::LoraVDown: return layer_name("lora", layer, "v.y");
    case SiteKind::HeadInput: return "head.x";
  }
  return "unknown";
}

SiteId SiteId::parse(const std::string& name) {
  if (name == "prompt.x") return {SiteKind::PromptInput, 0};
  if (name == "head.x") return {SiteKind::HeadInput, 0};
  const auto first = name.find('.');
  const auto second = first == std::string::npos ? std::string::npos : name.find('.', first + 1);
  if (second == std::string::npos) throw std::invalid_argument("unknown site '" + name + "'");
  const std::string family = name.substr(0, first);
  const std::string rest = name.substr(second + 1);
  std::size_t layer = 0;
  try {
    layer = std::stoul(name.substr(first + 1, second - first - 1));
  } catch (const std::exception&) {
    throw std::invalid_argument("unknown site '" + name + "'");
  }
  if (family == "prefix" && rest == "x") return {SiteKind::PrefixInput, layer};
  if (family == "adapter" && rest == "x") return {SiteKind::AdapterInput, layer};
  if (family == "adapter" && rest == "y") return {SiteKind::AdapterDown, layer};
  if (family == "lora" && rest == "x") return {SiteKind::LoraInput, layer};
  if (family == "lora" && rest == "q.y") return {SiteKind::LoraQDown, layer};
  if (family == "lora" && rest == "v.y") return {SiteKind::LoraVDown, layer};
  throw std::invalid_argument("unknown site '" + name + "'");
}

std::vector<SiteId> sites_for(PetParadigm paradigm, std::size_t depth) {
  std::vector<SiteId> out;
  switch (paradigm) {
    case PetParadigm::Prompt:
      out.push_back({SiteKind::PromptInput, 0});
      break;
    case PetParadigm::Prefix:
      for (std::size_t l = 0; l < depth; ++l) out.push_back({SiteKind::PrefixInput, l});
      break;
    case PetParadigm::Adapter:
      for (std::size_t l = 0; l < depth; ++l) {
        out.push_back({SiteKind::AdapterInput, l});
        out.push_back({SiteKind::AdapterDown, l});
      }
      break;
    case PetParadigm::LoRA:
      for (std::size_t l = 0; l < depth; ++l) {
        out.push_back({SiteKind::LoraInput, l});
        out.push_back({SiteKind::LoraQDown, l});
        out.push_back({SiteKind::LoraVDown, l});
      }
      break;
  }
  return out;
}

Matrix site_features(const ActivationTrace& trace, const SiteId& site) {
  if (site.kind == SiteKind::PromptInput) return trace.embedded;
  if (site.kind == SiteKind::HeadInput) return Matrix(1, trace.pooled.size(), trace.pooled);
  if (site.layer >= trace.layers.size())
    throw std::invalid_argument("site " + site.name() + " is beyond the model depth");
  const LayerTrace& lt = trace.layers[site.layer];
  const Matrix* rows = nullptr;
  switch (site.kind) {
    case SiteKind::PrefixInput:
    case SiteKind::LoraInput: rows = &lt.attn_in; break;
    case SiteKind::AdapterInput: rows = &lt.mlp_in; break;
    case SiteKind::AdapterDown: rows = &lt.adapter_down; break;
    case SiteKind::LoraQDown: rows = &lt.lora_q_down; break;
    case SiteKind::LoraVDown: rows = &lt.lora_v_down; break;
    case SiteKind::PromptInput:
    case SiteKind::HeadInput: break;
  }
  if (rows == nullptr || rows->rows() == 0)
    throw std::invalid_argument("site " + site.name() + " was not recorded by this forward pass");
  return *rows;
}

// ---------------------------------------------------------------------------

FeatureBuffer::FeatureBuffer(SiteId site, std::size_t width, std::size_t cap) : site_(site), width_(width), cap_(cap) {
  if (width == 0) throw std::invalid_argument("FeatureBuffer: zero width");
  if (cap == 0) throw std::invalid_argument("FeatureBuffer: zero cap");
}

void FeatureBuffer::append(const Matrix& rows, int task, std::uint64_t seed) {
  if (rows.rows() == 0) return;
  if (rows.cols() != width_) throw std::invalid_argument("FeatureBuffer::append: width mismatch at " + site_.name());
  if (!rows.all_finite()) throw std::invalid_argument("FeatureBuffer::append: non-finite features");
  Rng rng(sub_seed(seed, site_.name(), seen_));
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    const auto row = rows.row(i);
    if (tags_.size() < cap_) {
      data_.insert(data_.end(), row.begin(), row.end());
      tags_.push_back(task);
    } else {
      const std::uint64_t j = rng.below(seen_ + 1);
      if (j < cap_) {
        std::copy(row.begin(), row.end(), data_.begin() + static_cast<std::ptrdiff_t>(j * width_));
        tags_[j] = task;
      }
    }
    ++seen_;
  }
}

Matrix FeatureBuffer::rows() const { return Matrix(tags_.size(), width_, data_); }

FeatureBuffer FeatureBuffer::restore(SiteId site, std::size_t width, std::size_t cap, std::uint64_t seen,
                                     const Matrix& rows, std::vector<int> tags) {
  FeatureBuffer b(site, width, cap);
  if (rows.rows() != tags.size() || (rows.rows() > 0 && rows.cols() != width) || tags.size() > cap ||
      seen < tags.size())
    throw std::invalid_argument("FeatureBuffer::restore: inconsistent buffer " + site.name());
  b.seen_ = seen;
  b.data_ = rows.data();
  b.tags_ = std::move(tags);
  return b;
}

Matrix sample_features(const FrozenWeights& w, const PetState& pet, const Classifier& head,
                       const std::vector<Matrix>& samples, const SiteId& site) {
  const auto valid = sites_for(pet.paradigm, w.config.depth);
  if (site.kind != SiteKind::HeadInput && std::find(valid.begin(), valid.end(), site) == valid.end())
    throw std::invalid_argument("site " + site.name() + " does not exist for paradigm " +
                                std::string(to_string(pet.paradigm)));
  Matrix out;
  for (const Matrix& x : samples) out = vstack(out, site_features(forward(w, pet, head, x).trace, site));
  return out;
}

// ---------------------------------------------------------------------------

void ProjectionConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw std::invalid_argument("projection.epsilon must be >= 0");
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("projection.beta must be in [0, 1]");
  if (sample_count < 1) throw std::invalid_argument("projection.sample_count must be >= 1");
  if (buffer_cap < sample_count) throw std::invalid_argument("projection.buffer_cap must be >= sample_count");
}

namespace {

// Indices of singular values selected as null directions.
std::vector<std::size_t> null_indices(const std::vector<double>& s, std::size_t rows, std::size_t cols,
                                      double epsilon) {
  std::vector<std::size_t> out;
  const double top = s.empty() ? 0.0 : s.front();
  const double numeric_zero = static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon() * top;
  const double threshold = std::max(epsilon * top, numeric_zero);
  for (std::size_t i = 0; i < s.size(); ++i)
    if (top == 0.0 || s[i] <= threshold) out.push_back(i);
  return out;
}

}  // namespace

ProjectionBasis build_basis(const Matrix& features, double epsilon, BasisSide side) {
  if (features.rows() == 0 || features.cols() == 0) throw InvalidState("build_basis: empty feature buffer");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("build_basis: epsilon must be >= 0");
  const std::size_t n = features.rows();
  const std::size_t width = features.cols();

  ProjectionBasis out;
  out.side = side;
  if (side == BasisSide::Right) {
    // Pad with zero rows so V is square and the null space is fully spanned.
    const Matrix a = n >= width ? features : vstack(features, Matrix(width - n, width));
    const SvdResult r = svd(a);
    const auto keep = null_indices(r.s, n, width, epsilon);
    out.basis = Matrix(width, keep.size());
    for (std::size_t k = 0; k < keep.size(); ++k)
      for (std::size_t i = 0; i < width; ++i) out.basis(i, k) = r.vt(keep[k], i);
  } else {
    Matrix a = transpose(features);  // width x n, features as columns
    if (n < width) {
      Matrix padded(width, width);
      for (std::size_t i = 0; i < width; ++i)
        for (std::size_t j = 0; j < n; ++j) padded(i, j) = a(i, j);
      a = std::move(padded);
    }
    const SvdResult r = svd(a);
    const auto keep = null_indices(r.s, n, width, epsilon);
    out.basis = Matrix(width, keep.size());
    for (std::size_t k = 0; k < keep.size(); ++k)
      for (std::size_t i = 0; i < width; ++i) out.basis(i, k) = r.u(i, keep[k]);
  }
  return out;
}

ProjectionBasis build_basis(const FeatureBuffer& buffer, double epsilon, BasisSide side) {
  if (buffer.empty()) throw InvalidState("build_basis: empty feature buffer at " + buffer.site().name());
  return build_basis(buffer.rows(), epsilon, side);
}

ProjectionBasis merge_bases(const ProjectionBasis& input, const ProjectionBasis& prompt, double beta) {
  if (input.dimension() != prompt.dimension()) throw std::invalid_argument("merge_bases: row dimension mismatch");
  const std::size_t d = input.dimension();
  const std::size_t pairs = std::min(input.columns(), prompt.columns());
  std::vector<std::vector<double>> collected;
  for (std::size_t j = 0; j < pairs; ++j) {
    const auto a = input.basis.column(j);
    const auto b = prompt.basis.column(j);
    const double c = cosine_similarity(a, b);
    if (std::abs(c) <= beta) continue;
    const double sign = c < 0.0 ? -1.0 : 1.0;
    std::vector<double> sum(d);
    for (std::size_t i = 0; i < d; ++i) sum[i] = a[i] + sign * b[i];
    const double len = norm(sum);
    for (double& v : sum) v /= len;
    collected.push_back(std::move(sum));
  }
  ProjectionBasis out;
  out.side = input.side;
  if (collected.empty()) {
    out.basis = Matrix(d, 0);
    return out;
  }
  Matrix cols(d, collected.size());
  for (std::size_t j = 0; j < collected.size(); ++j) cols.set_column(j, collected[j]);
  out.basis = orthonormalize(cols);
  return out;
}

ProjectionBasis prompt_projection_basis(const Matrix& input_rows, const Matrix& prompt_rows, double epsilon,
                                        double beta) {
  const ProjectionBasis input = build_basis(input_rows, epsilon, BasisSide::Right);
  const ProjectionBasis prompt = build_basis(prompt_rows, epsilon, BasisSide::Right);
  ProjectionBasis merged = merge_bases(input, prompt, beta);
  if (merged.columns() == 0) return merged;
  // B <- orth(V V^T B) with V the null basis of [x; p].
  const ProjectionBasis joint = build_basis(vstack(input_rows, prompt_rows), epsilon, BasisSide::Right);
  if (joint.columns() == 0) {
    merged.basis = Matrix(joint.dimension(), 0);
    return merged;
  }
  // Orthonormalize in the coordinates of V so the result stays inside span(V).
  const Matrix coords = matmul_at_b(joint.basis, merged.basis);
  const Matrix q = orthonormalize(coords);
  merged.basis = q.cols() == 0 ? Matrix(joint.dimension(), 0) : matmul(joint.basis, q);
  return merged;
}

namespace {

void require_rows(const Matrix& grad_cols_side, const ProjectionBasis& basis, const char* what) {
  if (grad_cols_side.cols() != basis.dimension())
    throw std::invalid_argument(std::string(what) + ": basis dimension does not match gradient");
}

// g * B * B^T
Matrix right_project(const Matrix& g, const ProjectionBasis& b) {
  if (b.columns() == 0) return Matrix(g.rows(), g.cols());
  return matmul_a_bt(matmul(g, b.basis), b.basis);
}

// B * B^T * g
Matrix left_project(const Matrix& g, const ProjectionBasis& b) {
  if (b.columns() == 0) return Matrix(g.rows(), g.cols());
  return matmul(b.basis, matmul_at_b(b.basis, g));
}

}  // namespace

Matrix project_prompt_grad(const Matrix& grad, const ProjectionBasis& basis) {
  require_rows(grad, basis, "project_prompt_grad");
  return right_project(grad, basis);
}

std::pair<Matrix, Matrix> project_prefix_grads(const Matrix& key_grad, const Matrix& value_grad,
                                               const ProjectionBasis& basis) {
  require_rows(key_grad, basis, "project_prefix_grads");
  require_rows(value_grad, basis, "project_prefix_grads");
  return {right_project(key_grad, basis), right_project(value_grad, basis)};
}

std::pair<Matrix, Matrix> project_factor_grads(const Matrix& down_grad, const Matrix& up_grad,
                                               const ProjectionBasis& basis_x, const ProjectionBasis& basis_y) {
  if (down_grad.rows() != basis_x.dimension())
    throw std::invalid_argument("project_factor_grads: input basis does not match down factor");
  if (up_grad.rows() != basis_y.dimension())
    throw std::invalid_argument("project_factor_grads: down-space basis does not match up factor");
  if (down_grad.cols() != up_grad.rows())
    throw std::invalid_argument("project_factor_grads: factor ranks disagree");
  return {left_project(down_grad, basis_x), left_project(up_grad, basis_y)};
}

void project_gradients(PetTensors& g, PetParadigm paradigm, const SiteBases& bases) {
  auto basis = [&](const std::string& key) -> const ProjectionBasis& {
    const auto it = bases.find(key);
    if (it == bases.end()) throw InvalidState("project_gradients: no basis for site " + key);
    return it->second;
  };
  switch (paradigm) {
    case PetParadigm::Prompt:
      g.prompt = project_prompt_grad(g.prompt, basis("prompt"));
      break;
    case PetParadigm::Prefix:
      for (std::size_t l = 0; l < g.prefix_key.size(); ++l) {
        auto [k, v] = project_prefix_grads(g.prefix_key[l], g.prefix_value[l], basis(SiteId{SiteKind::PrefixInput, l}.name()));
        g.prefix_key[l] = std::move(k);
        g.prefix_value[l] = std::move(v);
      }
      break;
    case PetParadigm::Adapter:
      for (std::size_t l = 0; l < g.adapter_down.size(); ++l) {
        auto [dn, up] = project_factor_grads(g.adapter_down[l], g.adapter_up[l],
                                             basis(SiteId{SiteKind::AdapterInput, l}.name()),
                                             basis(SiteId{SiteKind::AdapterDown, l}.name()));
        g.adapter_down[l] = std::move(dn);
        g.adapter_up[l] = std::move(up);
      }
      break;
    case PetParadigm::LoRA:
      for (std::size_t l = 0; l < g.lora_q_down.size(); ++l) {
        const auto& bx = basis(SiteId{SiteKind::LoraInput, l}.name());
        auto [qd, qu] = project_factor_grads(g.lora_q_down[l], g.lora_q_up[l], bx,
                                             basis(SiteId{SiteKind::LoraQDown, l}.name()));
        auto [vd, vu] = project_factor_grads(g.lora_v_down[l], g.lora_v_up[l], bx,
                                             basis(SiteId{SiteKind::LoraVDown, l}.name()));
        g.lora_q_down[l] = std::move(qd);
        g.lora_q_up[l] = std::move(qu);
        g.lora_v_down[l] = std::move(vd);
        g.lora_v_up[l] = std::move(vu);
      }
      break;
  }
}

}  // namespace pegp
