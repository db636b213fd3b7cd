#pragma once

#include <cstddef>

namespace pegp {

struct TransformerConfig {
  std::size_t depth = 2;
  std::size_t dim = 16;
  std::size_t heads = 4;
  std::size_t seq_len = 4;
  std::size_t mlp_ratio = 2;
  std::size_t num_classes = 2;

  std::size_t head_dim() const { return dim / heads; }

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};

}  // namespace pegp
