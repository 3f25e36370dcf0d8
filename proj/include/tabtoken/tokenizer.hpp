#pragma once

#include <cstdint>
#include <vector>

#include "tabtoken/data.hpp"
#include "tabtoken/tensor.hpp"

namespace tabtoken {

// Feature tokenizer: one learnable k-vector per numerical feature, a
// (cardinality x k) lookup table per categorical feature. Maps an instance to
// a d x k token matrix. No bias term and no class token.
struct TokenizerParams {
  std::vector<FeatureSpec> schema;
  std::size_t dim = 0;
  // Per feature: shape (k) for numerical, (K_j, k) for categorical. Freeze
  // flags live on the tensors themselves (per token row).
  std::vector<Tensor> tokens;

  std::uint64_t fingerprint() const { return schema_fingerprint(schema); }
  // Trainable token tensors only (at least one unfrozen row).
  std::vector<Tensor> parameters() const;
  std::size_t total_token_rows() const;
  // All token rows stacked into one (rows, k) matrix, features in schema
  // order, categorical rows in category order.
  std::vector<double> pooled_rows() const;
  TokenizerParams clone() const;
};

TokenizerParams init_tokenizer(const std::vector<FeatureSpec>& schema, std::size_t dim,
                               std::uint64_t seed);

// Tokenizes the given rows of a preprocessed table into a (B, d, k) tensor.
// Missing numerical cells are illegal here: preprocessing must run first.
Tensor tokenize_batch(const TokenizerParams& params, const DatasetTable& table,
                      const std::vector<std::size_t>& rows);
Tensor tokenize_batch(const TokenizerParams& params, const DatasetTable& table);

// Same contract but with externally supplied per-feature token tensors
// (numerical features accept shape (k) or (1,k)); used when token matrices are
// computed nodes, e.g. re-weighted token libraries.
Tensor tokenize_batch_with(const std::vector<FeatureSpec>& schema,
                           const std::vector<Tensor>& feature_tokens, const DatasetTable& table,
                           const std::vector<std::size_t>& rows);

}  // namespace tabtoken
