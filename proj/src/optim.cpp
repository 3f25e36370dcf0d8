#include "tabtoken/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace tabtoken {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  moment1_.reserve(params_.size());
  moment2_.reserve(params_.size());
  for (const auto& p : params_) {
    moment1_.emplace_back(p.numel(), 0.0);
    moment2_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::step() {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    if (!p.has_grad()) throw std::logic_error("AdamW::step: parameter has no gradient");
    auto theta = p.data();
    auto g = p.grad();
    auto& m = moment1_[pi];
    auto& v = moment2_[pi];
    const std::size_t width = p.row_width();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (p.row_frozen(i / width)) continue;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= config_.learning_rate * config_.weight_decay * theta[i];
      theta[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

const std::vector<double>& AdamW::first_moment(std::size_t param_index) const {
  return moment1_.at(param_index);
}

const std::vector<double>& AdamW::second_moment(std::size_t param_index) const {
  return moment2_.at(param_index);
}

}  // namespace tabtoken
