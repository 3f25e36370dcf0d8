#include "tabtoken/tokenizer.hpp"

#include <cmath>
#include <stdexcept>

namespace tabtoken {

std::vector<Tensor> TokenizerParams::parameters() const {
  std::vector<Tensor> out;
  for (const auto& t : tokens)
    if (!t.all_rows_frozen()) out.push_back(t);
  return out;
}

std::size_t TokenizerParams::total_token_rows() const {
  std::size_t rows = 0;
  for (std::size_t j = 0; j < schema.size(); ++j)
    rows += schema[j].kind == FeatureKind::numerical ? 1 : schema[j].cardinality();
  return rows;
}

std::vector<double> TokenizerParams::pooled_rows() const {
  std::vector<double> out;
  out.reserve(total_token_rows() * dim);
  for (const auto& t : tokens) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

TokenizerParams TokenizerParams::clone() const {
  TokenizerParams copy;
  copy.schema = schema;
  copy.dim = dim;
  for (const auto& t : tokens) {
    Tensor fresh = Tensor::param(t.shape(), {t.data().begin(), t.data().end()});
    for (std::size_t r = 0; r < t.row_count(); ++r)
      if (t.row_frozen(r)) fresh.set_row_frozen(r, true);
    copy.tokens.push_back(std::move(fresh));
  }
  return copy;
}

TokenizerParams init_tokenizer(const std::vector<FeatureSpec>& schema, std::size_t dim,
                               std::uint64_t seed) {
  if (dim == 0) throw std::invalid_argument("token dimension must be >= 1");
  TokenizerParams params;
  params.schema = schema;
  params.dim = dim;
  RngStream rng(derive_seed(seed, "tokenizer-init"));
  const double bound = std::sqrt(6.0 / static_cast<double>(dim));
  for (const auto& f : schema) {
    const std::size_t rows = f.kind == FeatureKind::numerical ? 1 : f.cardinality();
    if (f.kind == FeatureKind::categorical && rows < 2)
      throw std::invalid_argument("categorical feature '" + f.name + "' needs >= 2 categories");
    std::vector<double> data(rows * dim);
    for (double& v : data) v = rng.uniform(-bound, bound);
    Shape shape = f.kind == FeatureKind::numerical ? Shape{dim} : Shape{rows, dim};
    params.tokens.push_back(Tensor::param(std::move(shape), std::move(data)));
  }
  return params;
}

namespace {

std::vector<std::size_t> all_rows(const DatasetTable& table) {
  std::vector<std::size_t> rows(table.n_rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return rows;
}

Tensor feature_tokens_for_rows(const FeatureSpec& spec, const Tensor& tokens,
                               const DatasetTable& table, std::size_t feature_index,
                               const std::vector<std::size_t>& rows, std::size_t dim) {
  if (spec.kind == FeatureKind::numerical) {
    Tensor vec = tokens;
    if (tokens.shape().size() == 2) {
      if (tokens.dim(0) != 1) throw std::invalid_argument("numerical feature token must be a single row");
      vec = reshape(tokens, {dim});
    }
    if (vec.numel() != dim) throw std::invalid_argument("token dimension mismatch");
    std::vector<double> values;
    values.reserve(rows.size());
    const auto& col = table.num_cols[feature_index];
    for (std::size_t r : rows) {
      const double v = col.at(r);
      if (std::isnan(v))
        throw std::invalid_argument("missing value in feature '" + spec.name +
                                    "'; preprocess the table first");
      values.push_back(v);
    }
    return outer(values, vec);
  }
  if (tokens.shape().size() != 2 || tokens.dim(0) != spec.cardinality() || tokens.dim(1) != dim)
    throw std::invalid_argument("categorical token table shape mismatch for '" + spec.name + "'");
  std::vector<std::size_t> idx;
  idx.reserve(rows.size());
  const auto& col = table.cat_cols[feature_index];
  for (std::size_t r : rows) {
    const int c = col.at(r);
    if (c < 0 || static_cast<std::size_t>(c) >= spec.cardinality())
      throw std::out_of_range("category index out of range in feature '" + spec.name + "'");
    idx.push_back(static_cast<std::size_t>(c));
  }
  return embed_rows(tokens, idx);
}

}  // namespace

Tensor tokenize_batch_with(const std::vector<FeatureSpec>& schema,
                           const std::vector<Tensor>& feature_tokens, const DatasetTable& table,
                           const std::vector<std::size_t>& rows) {
  if (schema.size() != table.schema.size()) throw std::invalid_argument("schema mismatch");
  for (std::size_t j = 0; j < schema.size(); ++j)
    if (schema[j] != table.schema[j])
      throw std::invalid_argument("schema mismatch on feature '" + schema[j].name + "'");
  if (feature_tokens.size() != schema.size())
    throw std::invalid_argument("feature token count mismatch");
  if (schema.empty()) throw std::invalid_argument("empty schema");
  if (rows.empty()) throw std::invalid_argument("empty batch");

  std::size_t dim = feature_tokens[0].shape().back();
  std::vector<Tensor> parts;
  parts.reserve(schema.size());
  for (std::size_t j = 0; j < schema.size(); ++j)
    parts.push_back(feature_tokens_for_rows(schema[j], feature_tokens[j], table, j, rows, dim));
  return stack_axis1(parts);
}

Tensor tokenize_batch(const TokenizerParams& params, const DatasetTable& table,
                      const std::vector<std::size_t>& rows) {
  return tokenize_batch_with(params.schema, params.tokens, table, rows);
}

Tensor tokenize_batch(const TokenizerParams& params, const DatasetTable& table) {
  return tokenize_batch(params, table, all_rows(table));
}

}  // namespace tabtoken
