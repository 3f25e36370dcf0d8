#pragma once

#include <string>
#include <vector>

#include "tabtoken/data.hpp"
#include "tabtoken/tensor.hpp"

namespace tabtoken {

enum class CombineMode { average, concat };
enum class CtrVariant { vanilla, hardest, all_hard, vanilla_plus_hard };

std::string combine_to_string(CombineMode mode);
CombineMode combine_from_string(const std::string& name);
std::string variant_to_string(CtrVariant variant);
CtrVariant variant_from_string(const std::string& name);

// Token combination: (B, d, k) token batches to per-instance vectors.
Tensor combine_average(const Tensor& tokens);  // (B, k)
Tensor combine_concat(const Tensor& tokens);   // (B, d*k)
Tensor combine(const Tensor& tokens, CombineMode mode);

struct ClassCenters {
  Tensor centers;               // (P, k); rows follow class_ids
  std::vector<int> class_ids;   // present classes, ascending
  std::vector<int> counts;      // members per present class
};

// Batch-wise class centers; gradients flow through the centers.
ClassCenters class_centers(const Tensor& instance_tokens, const std::vector<int>& labels);

// Contrastive token regularization over instance tokens.
//   vanilla:           mean_i ||T_i - S_{y_i}||^2
//   hardest:           mean_i min_{j != y_i} ||T_i - S_j||^2
//   all_hard:          mean over (i, j != y_i) of ||T_i - S_j||^2
//   vanilla_plus_hard: vanilla - all_hard
Tensor ctr_loss(const Tensor& instance_tokens, const std::vector<int>& labels, CtrVariant variant);

// Binary pseudo-classes for regression targets: strictly above the median is
// class 1, everything else class 2. Used only inside the CTR term.
std::vector<int> pseudo_labels_regression(const std::vector<double>& targets);

// Task loss: softmax cross-entropy (classification) or MSE (regression).
Tensor task_loss(const Tensor& outputs, TaskKind task, const std::vector<int>& class_labels,
                 const std::vector<double>& targets);

// Full objective: task loss + beta * CTR on the averaged instance tokens.
// `ctr_labels` are class labels or regression pseudo-labels.
Tensor training_objective(const Tensor& outputs, TaskKind task,
                          const std::vector<int>& class_labels, const std::vector<double>& targets,
                          const Tensor& instance_tokens, const std::vector<int>& ctr_labels,
                          double beta, CtrVariant variant);

}  // namespace tabtoken
