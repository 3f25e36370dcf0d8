#pragma once

#include <vector>

#include "tabtoken/checkpoint.hpp"
#include "tabtoken/config.hpp"
#include "tabtoken/data.hpp"

namespace tabtoken {

// Pre-trains tokenizer + top-layer model on a preprocessed table, minimizing
// task loss + beta * CTR with AdamW. Evaluates on `val` after every epoch and
// returns the parameters of the best-validation epoch.
Checkpoint pretrain(const DatasetTable& train, const DatasetTable& val, const TrainConfig& config);

// Builds the downstream tokenizer: overlapping features receive the
// pre-trained token rows verbatim (frozen); every token row of an unseen
// feature starts at the mean over all pooled pre-trained token rows.
// Categorical overlaps align rows by category label; downstream categories
// unseen upstream fall back to the pooled mean and stay trainable.
TokenizerParams build_finetune_tokenizer(const Checkpoint& chk,
                                         const std::vector<FeatureSpec>& downstream_schema,
                                         const OverlapMap& overlap);

// Fine-tunes on a few-shot table (preprocessed with its own statistics).
// The top-layer model warm-starts from the checkpoint when configured and
// compatible, otherwise re-initializes. No validation is consulted.
Checkpoint finetune(const Checkpoint& chk, const DatasetTable& fewshot, const OverlapMap& overlap,
                    const TrainConfig& config);

// Trains the identical architecture from scratch on a few-shot table with the
// fine-tuning budget; the paired baseline for transfer comparisons.
Checkpoint train_few_shot_scratch(const DatasetTable& fewshot, const TrainConfig& config);

// Token library for disjoint feature sets: downstream token rows are
// W * (pooled pre-trained rows ++ new rows) with W and the new rows trainable
// and the pre-trained block frozen.
struct ReweightParams {
  std::vector<FeatureSpec> schema;  // downstream
  std::size_t dim = 0;
  Tensor pretrained_rows;  // (R, k) constant
  Tensor new_tokens;       // (n, k) trainable
  Tensor weights;          // (rows_out, R + n) trainable

  std::size_t library_rows() const;
  // Current downstream token matrices, one tensor per feature; graph nodes so
  // gradients reach W and the new tokens.
  std::vector<Tensor> assemble_feature_tokens() const;
  std::vector<Tensor> parameters() const { return {weights, new_tokens}; }
};

ReweightParams init_reweight(const Checkpoint& chk,
                             const std::vector<FeatureSpec>& downstream_schema, std::size_t n_new,
                             std::uint64_t seed);

Checkpoint reweight_finetune(const Checkpoint& chk, const DatasetTable& fewshot, std::size_t n_new,
                             const TrainConfig& config);

// Model outputs for every row of a (preprocessed) table, eval mode, batched.
// Returns a row-major (n_rows x output_dim) buffer.
std::vector<double> predict_outputs(const Checkpoint& chk, const DatasetTable& table,
                                    std::size_t batch_size = 2048);

// Remaps classification labels of `table` onto the checkpoint's class order
// (matching by class name). Throws if the label spaces differ.
DatasetTable align_class_labels(const Checkpoint& chk, const DatasetTable& table);

}  // namespace tabtoken
