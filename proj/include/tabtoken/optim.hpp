#pragma once

#include <cstdint>
#include <vector>

#include "tabtoken/tensor.hpp"

namespace tabtoken {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 2e-4;
};

// Decoupled weight decay Adam with bias correction:
//   theta <- theta - lr*wd*theta - lr*mhat/(sqrt(vhat)+eps)
// Frozen parameter rows are skipped entirely (no update, no moment change).
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  void step();
  void zero_grad();

  std::uint64_t step_count() const { return step_count_; }
  const AdamWConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  const std::vector<double>& first_moment(std::size_t param_index) const;
  const std::vector<double>& second_moment(std::size_t param_index) const;

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> moment1_;
  std::vector<std::vector<double>> moment2_;
  AdamWConfig config_;
  std::uint64_t step_count_ = 0;
};

}  // namespace tabtoken
