#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pegp/backbone.hpp"
#include "pegp/linalg.hpp"
#include "pegp/pet.hpp"

namespace pegp {

/// Where a paradigm touches the backbone. Input sites carry d-wide token
/// rows; down-projected sites carry the r-wide rows y = x * W_d that feed an
/// up factor.
enum class SiteKind {
  PromptInput,   // embedded tokens concatenated with the prompt
  PrefixInput,   // per layer, LN1 output
  AdapterInput,  // per layer, LN2 output
  AdapterDown,   // per layer, y of the adapter
  LoraInput,     // per layer, LN1 output (shared by the q and v bypasses)
  LoraQDown,     // per layer, y of the query bypass
  LoraVDown,     // per layer, y of the value bypass
  HeadInput,     // pooled features entering the classifier (optional site)
};

struct SiteId {
  SiteKind kind = SiteKind::PromptInput;
  std::size_t layer = 0;

  /// Stable name such as "adapter.1.y"; used as map key and in artifacts.
  std::string name() const;
  static SiteId parse(const std::string& name);

  auto operator<=>(const SiteId&) const = default;
};

/// Every feature site a paradigm needs, in a fixed order. HeadInput is never
/// included; the trainer adds it when the classifier is projected.
std::vector<SiteId> sites_for(PetParadigm paradigm, std::size_t depth);

/// Rows recorded at `site` during one forward pass (one row per token).
Matrix site_features(const ActivationTrace& trace, const SiteId& site);

/// Old-task features for one site, capped by reservoir sampling.
class FeatureBuffer {
 public:
  FeatureBuffer(SiteId site, std::size_t width, std::size_t cap);

  /// Appends rows tagged with `task`. Once full, each new row replaces a
  /// uniformly chosen slot (Algorithm R) driven by `seed`.
  void append(const Matrix& rows, int task, std::uint64_t seed);

  const SiteId& site() const { return site_; }
  std::size_t width() const { return width_; }
  std::size_t cap() const { return cap_; }
  std::size_t size() const { return tags_.size(); }
  bool empty() const { return tags_.empty(); }
  std::uint64_t seen() const { return seen_; }
  const std::vector<int>& tags() const { return tags_; }
  Matrix rows() const;

  /// Rebuilds a buffer from serialized parts.
  static FeatureBuffer restore(SiteId site, std::size_t width, std::size_t cap, std::uint64_t seen, const Matrix& rows,
                               std::vector<int> tags);

 private:
  SiteId site_;
  std::size_t width_;
  std::size_t cap_;
  std::uint64_t seen_ = 0;
  std::vector<double> data_;
  std::vector<int> tags_;
};

/// Runs the model on every sample and returns the stacked rows at `site`.
Matrix sample_features(const FrozenWeights& w, const PetState& pet, const Classifier& head,
                       const std::vector<Matrix>& samples, const SiteId& site);

/// Which singular vectors form the basis. Right: V of the row-feature matrix
/// (features are rows). Left: U of its transpose (features are columns).
/// Both describe the same subspace; they differ only in how it is computed.
enum class BasisSide { Right, Left };

struct ProjectionBasis {
  Matrix basis;  // width x k, orthonormal columns; k may be 0
  BasisSide side = BasisSide::Right;

  std::size_t dimension() const { return basis.rows(); }
  std::size_t columns() const { return basis.cols(); }

  friend bool operator==(const ProjectionBasis&, const ProjectionBasis&) = default;
};

struct ProjectionConfig {
  double epsilon = 0.05;           // keep sigma_i <= epsilon * sigma_1
  double beta = 0.9;               // cosine-merge threshold
  std::size_t sample_count = 32;   // sampling-set items per task
  std::size_t buffer_cap = 4096;   // rows per site

  void validate() const;
};

/// Null-space basis of the stacked features: singular directions with
/// sigma_i <= epsilon * sigma_1 (all of them when sigma_1 = 0). Directions
/// that are zero to working precision are always included, so epsilon = 0
/// still yields the exact null space. Throws InvalidState on empty input.
ProjectionBasis build_basis(const Matrix& features, double epsilon, BasisSide side);
ProjectionBasis build_basis(const FeatureBuffer& buffer, double epsilon, BasisSide side);

/// Cosine merge of two bases of equal row dimension. Column pairs at the same
/// position (up to the shorter count) whose |cos| exceeds beta are summed
/// after sign alignment and normalized; other pairs are skipped. The
/// collected columns are orthonormalized.
ProjectionBasis merge_bases(const ProjectionBasis& input, const ProjectionBasis& prompt, double beta);

/// Prompt basis used by the trainer: the cosine merge of the input and
/// prompt-row null spaces, re-projected onto the joint null space of
/// [x; p] so that x * dp^T = 0 and p * dp^T = 0 both hold exactly.
ProjectionBasis prompt_projection_basis(const Matrix& input_rows, const Matrix& prompt_rows, double epsilon,
                                        double beta);

/// dp * B * B^T
Matrix project_prompt_grad(const Matrix& grad, const ProjectionBasis& basis);

/// Both prefix gradients right-projected by the layer's input basis.
std::pair<Matrix, Matrix> project_prefix_grads(const Matrix& key_grad, const Matrix& value_grad,
                                               const ProjectionBasis& basis);

/// Projects a factor pair on its input dimension: with row-vector storage
/// (down is d x r, up is r x d) that is B_x B_x^T dW_d and B_y B_y^T dW_u,
/// which gives x * dW_d' = 0 and y * dW_u' = 0 for every buffered x, y.
std::pair<Matrix, Matrix> project_factor_grads(const Matrix& down_grad, const Matrix& up_grad,
                                               const ProjectionBasis& basis_x, const ProjectionBasis& basis_y);

/// Bases keyed by site name; the prompt paradigm uses the key "prompt".
using SiteBases = std::map<std::string, ProjectionBasis>;

/// Applies the paradigm's projection rule to every tensor in `grads`.
/// Throws InvalidState when a needed basis is missing.
void project_gradients(PetTensors& grads, PetParadigm paradigm, const SiteBases& bases);

}  // namespace pegp
