#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tabtoken/rng.hpp"

namespace tabtoken {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  // Per-row freeze mask for parameter tensors (rows = shape[0] for 2-D,
  // a single row for 1-D). Frozen rows never receive gradient.
  std::vector<std::uint8_t> frozen_rows;

  std::size_t numel() const { return value.size(); }
  std::vector<double>& grad_ref();
  void zero_frozen_grad_rows();
};

}  // namespace detail

// Dense fp64 tensor with reverse-mode gradients. Cheap to copy: a Tensor is a
// shared handle to its node, so copies alias the same storage and graph edge.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor constant(Shape shape, std::vector<double> data);
  static Tensor param(Shape shape, std::vector<double> data);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;
  bool requires_grad() const;

  std::span<double> data();
  std::span<const double> data() const;
  std::span<const double> grad() const;
  bool has_grad() const;
  double item() const;  // scalar tensors only

  // Detached value copy (constant, no graph edge).
  Tensor detach_copy() const;

  // Reverse-mode pass from a scalar root. Gradients accumulate additively
  // across repeated calls until zero_grad().
  void backward();
  void zero_grad();

  // Row freezing (training-time contract: frozen rows receive zero gradient
  // and are skipped by optimizers).
  void set_row_frozen(std::size_t row, bool frozen);
  bool row_frozen(std::size_t row) const;
  std::size_t row_count() const;
  std::size_t row_width() const;
  bool any_row_frozen() const;
  bool all_rows_frozen() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  friend Tensor make_from_node(std::shared_ptr<detail::Node> node);
  std::shared_ptr<detail::Node> node_;
};

// ---- primitive operations (forward eager, backward recorded) --------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// Broadcast a length-n vector across the rows/columns of a 2-D tensor.
Tensor add_rowvec(const Tensor& a, const Tensor& v);
Tensor sub_rowvec(const Tensor& a, const Tensor& v);
Tensor mul_rowvec(const Tensor& a, const Tensor& v);
Tensor sub_colvec(const Tensor& a, const Tensor& v);
Tensor mul_colvec(const Tensor& a, const Tensor& v);

Tensor matmul(const Tensor& a, const Tensor& b);
// Batched matmul over 3-D tensors; trans_b multiplies by the transpose of
// each right-hand slice.
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false);

Tensor relu(const Tensor& a);
// Gated activation over the last dimension: splits (x, g) and returns
// x * relu(g). The last dimension must be even.
Tensor reglu(const Tensor& a);
Tensor softmax_lastdim(const Tensor& a);
Tensor rsqrt_shift(const Tensor& a, double eps);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mean_axis0(const Tensor& a);     // (m,n) -> (n)
Tensor mean_lastdim(const Tensor& a);   // (m,n) -> (m)
// (B,d,k) -> (B,k). The reduction over d sums values in ascending value
// order, so the result is bitwise invariant to permutations of axis 1.
Tensor mean_axis1(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(const Tensor& a, const Tensor& b);
// Stack B x k parts into (B, parts, k).
Tensor stack_axis1(const std::vector<Tensor>& parts);
// (B,d,k) <-> (B*h, d, k/h) head layout used by multi-head attention.
Tensor split_heads(const Tensor& a, std::size_t heads);
Tensor merge_heads(const Tensor& a, std::size_t heads);

// Lookup-table selection: out[i,:] = table[idx[i],:].
Tensor embed_rows(const Tensor& table, const std::vector<std::size_t>& idx);
// out[i,:] = x[i] * v for constant per-row scalars x.
Tensor outer(const std::vector<double>& x, const Tensor& v);

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor mse(const Tensor& pred, const std::vector<double>& targets);

// Inverted dropout mask: entries are 0 or 1/(1-rate). rate must be < 1.
Tensor dropout_mask(const Shape& shape, double rate, std::uint64_t seed);
Tensor dropout_mask(const Shape& shape, double rate, RngStream& rng);

}  // namespace tabtoken
