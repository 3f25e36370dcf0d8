#include "tabtoken/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace tabtoken {

std::string combine_to_string(CombineMode mode) {
  return mode == CombineMode::average ? "average" : "concat";
}

CombineMode combine_from_string(const std::string& name) {
  if (name == "average") return CombineMode::average;
  if (name == "concat") return CombineMode::concat;
  throw std::invalid_argument("unknown combine mode: " + name);
}

std::string variant_to_string(CtrVariant variant) {
  switch (variant) {
    case CtrVariant::vanilla: return "vanilla";
    case CtrVariant::hardest: return "hardest";
    case CtrVariant::all_hard: return "all_hard";
    case CtrVariant::vanilla_plus_hard: return "vanilla_plus_hard";
  }
  return "vanilla";
}

CtrVariant variant_from_string(const std::string& name) {
  if (name == "vanilla") return CtrVariant::vanilla;
  if (name == "hardest") return CtrVariant::hardest;
  if (name == "all_hard") return CtrVariant::all_hard;
  if (name == "vanilla_plus_hard") return CtrVariant::vanilla_plus_hard;
  throw std::invalid_argument("unknown CTR variant: " + name);
}

Tensor combine_average(const Tensor& tokens) {
  if (tokens.shape().size() != 3) throw std::invalid_argument("combine_average: expects (B,d,k)");
  if (tokens.dim(1) == 0) throw std::invalid_argument("combine_average: empty token set");
  return mean_axis1(tokens);
}

Tensor combine_concat(const Tensor& tokens) {
  if (tokens.shape().size() != 3) throw std::invalid_argument("combine_concat: expects (B,d,k)");
  if (tokens.dim(1) == 0) throw std::invalid_argument("combine_concat: empty token set");
  return reshape(tokens, {tokens.dim(0), tokens.dim(1) * tokens.dim(2)});
}

Tensor combine(const Tensor& tokens, CombineMode mode) {
  return mode == CombineMode::average ? combine_average(tokens) : combine_concat(tokens);
}

ClassCenters class_centers(const Tensor& instance_tokens, const std::vector<int>& labels) {
  if (instance_tokens.shape().size() != 2) throw std::invalid_argument("class_centers: expects (B,k)");
  const std::size_t B = instance_tokens.dim(0);
  if (B == 0 || labels.size() != B) throw std::invalid_argument("class_centers: label count mismatch");

  std::map<int, int> counts;
  for (int y : labels) ++counts[y];

  ClassCenters out;
  std::map<int, std::size_t> position;
  for (const auto& [cls, count] : counts) {
    position[cls] = out.class_ids.size();
    out.class_ids.push_back(cls);
    out.counts.push_back(count);
  }
  const std::size_t P = out.class_ids.size();

  // centers = M * T with M holding 1/N_c at the members of each class; the
  // matmul keeps the centers differentiable with respect to the tokens.
  std::vector<double> weights(P * B, 0.0);
  for (std::size_t i = 0; i < B; ++i) {
    const std::size_t p = position[labels[i]];
    weights[p * B + i] = 1.0 / static_cast<double>(counts[labels[i]]);
  }
  out.centers = matmul(Tensor::constant({P, B}, std::move(weights)), instance_tokens);
  return out;
}

namespace {

// Per-(i, center) squared distances computed from current values; used only
// to pick the hardest center, which is treated as a fixed selection.
std::vector<double> squared_distances(const Tensor& tokens, const Tensor& centers) {
  const std::size_t B = tokens.dim(0), k = tokens.dim(1), P = centers.dim(0);
  std::vector<double> d(B * P, 0.0);
  auto tv = tokens.data();
  auto cv = centers.data();
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t p = 0; p < P; ++p) {
      double acc = 0.0;
      for (std::size_t l = 0; l < k; ++l) {
        const double diff = tv[i * k + l] - cv[p * k + l];
        acc += diff * diff;
      }
      d[i * P + p] = acc;
    }
  return d;
}

Tensor gathered_center_loss(const Tensor& tokens, const ClassCenters& centers,
                            const std::vector<std::size_t>& selection) {
  const std::size_t B = tokens.dim(0), P = centers.centers.dim(0);
  std::vector<double> pick(B * P, 0.0);
  for (std::size_t i = 0; i < B; ++i) pick[i * P + selection[i]] = 1.0;
  Tensor selected = matmul(Tensor::constant({B, P}, std::move(pick)), centers.centers);
  Tensor diff = sub(tokens, selected);
  return scale(sum_all(mul(diff, diff)), 1.0 / static_cast<double>(B));
}

Tensor all_hard_loss(const Tensor& tokens, const std::vector<int>& labels,
                     const ClassCenters& centers) {
  const std::size_t B = tokens.dim(0), k = tokens.dim(1), P = centers.centers.dim(0);
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t p = 0; p < P; ++p) {
    std::vector<double> mask(B * k, 0.0);
    for (std::size_t i = 0; i < B; ++i)
      if (labels[i] != centers.class_ids[p])
        std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(i * k), k, 1.0);
    Tensor center_row = reshape(slice_rows(centers.centers, p, p + 1), {k});
    Tensor diff = sub_rowvec(tokens, center_row);
    Tensor masked = mul(diff, Tensor::constant({B, k}, std::move(mask)));
    total = add(total, sum_all(mul(masked, masked)));
  }
  return scale(total, 1.0 / (static_cast<double>(B) * static_cast<double>(P - 1)));
}

}  // namespace

Tensor ctr_loss(const Tensor& instance_tokens, const std::vector<int>& labels, CtrVariant variant) {
  ClassCenters centers = class_centers(instance_tokens, labels);
  const std::size_t B = instance_tokens.dim(0), P = centers.class_ids.size();
  if (variant != CtrVariant::vanilla && P < 2)
    throw std::invalid_argument("ctr_loss: variant needs at least two classes present in the batch");

  std::map<int, std::size_t> position;
  for (std::size_t p = 0; p < P; ++p) position[centers.class_ids[p]] = p;

  switch (variant) {
    case CtrVariant::vanilla: {
      std::vector<std::size_t> own(B);
      for (std::size_t i = 0; i < B; ++i) own[i] = position[labels[i]];
      return gathered_center_loss(instance_tokens, centers, own);
    }
    case CtrVariant::hardest: {
      const auto dist = squared_distances(instance_tokens, centers.centers);
      std::vector<std::size_t> nearest(B);
      for (std::size_t i = 0; i < B; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t p = 0; p < P; ++p) {
          if (centers.class_ids[p] == labels[i]) continue;
          if (dist[i * P + p] < best) {
            best = dist[i * P + p];
            arg = p;
          }
        }
        nearest[i] = arg;
      }
      return gathered_center_loss(instance_tokens, centers, nearest);
    }
    case CtrVariant::all_hard:
      return all_hard_loss(instance_tokens, labels, centers);
    case CtrVariant::vanilla_plus_hard: {
      std::vector<std::size_t> own(B);
      for (std::size_t i = 0; i < B; ++i) own[i] = position[labels[i]];
      Tensor pull = gathered_center_loss(instance_tokens, centers, own);
      Tensor push = all_hard_loss(instance_tokens, labels, centers);
      return sub(pull, push);
    }
  }
  throw std::logic_error("unreachable");
}

std::vector<int> pseudo_labels_regression(const std::vector<double>& targets) {
  if (targets.size() < 2) throw std::invalid_argument("pseudo labels need at least two targets");
  std::vector<double> sorted = targets;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = targets[i] > median ? 1 : 2;
  return labels;
}

Tensor task_loss(const Tensor& outputs, TaskKind task, const std::vector<int>& class_labels,
                 const std::vector<double>& targets) {
  if (task == TaskKind::regression) {
    Tensor flat = outputs.shape().size() == 2 ? reshape(outputs, {outputs.numel()}) : outputs;
    return mse(flat, targets);
  }
  return cross_entropy(outputs, class_labels);
}

Tensor training_objective(const Tensor& outputs, TaskKind task,
                          const std::vector<int>& class_labels, const std::vector<double>& targets,
                          const Tensor& instance_tokens, const std::vector<int>& ctr_labels,
                          double beta, CtrVariant variant) {
  if (beta < 0.0) throw std::invalid_argument("beta must be >= 0");
  Tensor loss = task_loss(outputs, task, class_labels, targets);
  if (beta == 0.0) return loss;
  return add(loss, scale(ctr_loss(instance_tokens, ctr_labels, variant), beta));
}

}  // namespace tabtoken
