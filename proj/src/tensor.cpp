#include "tabtoken/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace tabtoken {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

namespace detail {

std::vector<double>& Node::grad_ref() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

void Node::zero_frozen_grad_rows() {
  if (frozen_rows.empty() || grad.empty()) return;
  const std::size_t rows = frozen_rows.size();
  const std::size_t width = value.size() / rows;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!frozen_rows[r]) continue;
    std::fill_n(grad.begin() + static_cast<std::ptrdiff_t>(r * width), width, 0.0);
  }
}

}  // namespace detail

namespace {

using detail::Node;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

Tensor wrap(std::shared_ptr<Node> node);

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                                " vs " + shape_to_string(b.shape()));
}

// Flattens leading dimensions: treats any tensor as (rows, last_dim).
std::pair<std::size_t, std::size_t> as_2d(const Tensor& a) {
  const Shape& s = a.shape();
  require(!s.empty(), "expected at least 1-D tensor");
  const std::size_t n = s.back();
  return {a.numel() / n, n};
}

}  // namespace

Tensor make_from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

namespace {
Tensor wrap(std::shared_ptr<Node> node) { return make_from_node(std::move(node)); }
}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = new_node(shape, std::vector<double>(shape_numel(shape), 0.0));
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  auto n = new_node(shape, std::vector<double>(shape_numel(shape), fill));
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::constant(Shape shape, std::vector<double> data) {
  if (data.size() != shape_numel(shape)) throw std::invalid_argument("constant: data/shape mismatch");
  return wrap(new_node(std::move(shape), std::move(data)));
}

Tensor Tensor::param(Shape shape, std::vector<double> data) {
  Tensor t = constant(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  auto n = new_node({1}, {v});
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }
std::size_t Tensor::dim(std::size_t axis) const { return node_->shape.at(axis); }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<double> Tensor::data() { return node_->value; }
std::span<const double> Tensor::data() const { return node_->value; }
std::span<const double> Tensor::grad() const { return node_->grad; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

double Tensor::item() const {
  if (numel() != 1) throw std::logic_error("item(): tensor is not scalar");
  return node_->value[0];
}

Tensor Tensor::detach_copy() const { return Tensor::constant(node_->shape, node_->value); }

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

std::size_t Tensor::row_count() const {
  return node_->shape.size() >= 2 ? node_->shape[0] : 1;
}

std::size_t Tensor::row_width() const { return numel() / row_count(); }

void Tensor::set_row_frozen(std::size_t row, bool frozen) {
  if (node_->frozen_rows.empty()) node_->frozen_rows.assign(row_count(), 0);
  node_->frozen_rows.at(row) = frozen ? 1 : 0;
}

bool Tensor::row_frozen(std::size_t row) const {
  if (node_->frozen_rows.empty()) return false;
  return node_->frozen_rows.at(row) != 0;
}

bool Tensor::any_row_frozen() const {
  for (auto f : node_->frozen_rows)
    if (f) return true;
  return false;
}

bool Tensor::all_rows_frozen() const {
  if (node_->frozen_rows.size() != row_count()) return false;
  for (auto f : node_->frozen_rows)
    if (!f) return false;
  return true;
}

void Tensor::backward() {
  if (!node_) throw std::logic_error("backward(): undefined tensor");
  if (numel() != 1) throw std::logic_error("backward(): root must be scalar");

  // Iterative post-order DFS; child visit order follows the inputs vector, so
  // the traversal (and therefore accumulation order) is fully deterministic.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next].get();
      ++next;
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Each pass must flow through clean buffers; grads accumulated by earlier
  // passes are stashed and merged back afterwards, so repeated backward()
  // calls add up without double-counting intermediate gradients.
  std::vector<std::vector<double>> stash(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (!order[i]->grad.empty()) {
      stash[i] = std::move(order[i]->grad);
      order[i]->grad.clear();
    }
  }

  node_->grad_ref()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->requires_grad && !n->grad.empty()) n->backward_fn(*n);
  }

  for (std::size_t i = 0; i < order.size(); ++i) {
    if (stash[i].empty()) continue;
    auto& g = order[i]->grad_ref();
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += stash[i][j];
  }
  for (Node* n : order) n->zero_frozen_grad_rows();
}

// ---- op helpers ------------------------------------------------------------

namespace {

Tensor unary_op(const Tensor& a, Shape out_shape, std::vector<double> out_value,
                std::function<void(Node&)> backward) {
  auto n = new_node(std::move(out_shape), std::move(out_value));
  n->inputs = {a.node()};
  n->requires_grad = a.requires_grad();
  if (n->requires_grad) n->backward_fn = std::move(backward);
  return wrap(std::move(n));
}

Tensor binary_op(const Tensor& a, const Tensor& b, Shape out_shape, std::vector<double> out_value,
                 std::function<void(Node&)> backward) {
  auto n = new_node(std::move(out_shape), std::move(out_value));
  n->inputs = {a.node(), b.node()};
  n->requires_grad = a.requires_grad() || b.requires_grad();
  if (n->requires_grad) n->backward_fn = std::move(backward);
  return wrap(std::move(n));
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return binary_op(a, b, a.shape(), std::move(out), [](Node& self) {
    for (int which = 0; which < 2; ++which) {
      auto& in = self.inputs[which];
      if (!in->requires_grad) continue;
      auto& g = in->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return binary_op(a, b, a.shape(), std::move(out), [](Node& self) {
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return binary_op(a, b, a.shape(), std::move(out), [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  return unary_op(a, a.shape(), std::move(out), [c](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
  });
}

// ---- broadcast helpers -----------------------------------------------------

namespace {

enum class RowvecOp { add, sub, mul };

Tensor rowvec_op(const char* name, RowvecOp op, const Tensor& a, const Tensor& v) {
  auto [m, n] = as_2d(a);
  require(v.shape().size() == 1 && v.numel() == n, "rowvec op: vector length must match last dim");
  std::vector<double> out(a.numel());
  auto av = a.data(), vv = v.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double x = av[i * n + j], y = vv[j];
      out[i * n + j] = op == RowvecOp::add ? x + y : (op == RowvecOp::sub ? x - y : x * y);
    }
  }
  (void)name;
  return binary_op(a, v, a.shape(), std::move(out), [op, m, n](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& vv = self.inputs[1]->value;
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_ref();
      if (op == RowvecOp::mul) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] * vv[j];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_ref();
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double gz = self.grad[i * n + j];
          acc += op == RowvecOp::mul ? gz * av[i * n + j] : (op == RowvecOp::sub ? -gz : gz);
        }
        g[j] += acc;
      }
    }
  });
}

enum class ColvecOp { sub, mul };

Tensor colvec_op(ColvecOp op, const Tensor& a, const Tensor& v) {
  auto [m, n] = as_2d(a);
  require(v.shape().size() == 1 && v.numel() == m, "colvec op: vector length must match row count");
  std::vector<double> out(a.numel());
  auto av = a.data(), vv = v.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = op == ColvecOp::sub ? av[i * n + j] - vv[i] : av[i * n + j] * vv[i];
  return binary_op(a, v, a.shape(), std::move(out), [op, m, n](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& vv = self.inputs[1]->value;
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_ref();
      if (op == ColvecOp::mul) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] * vv[i];
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_ref();
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double gz = self.grad[i * n + j];
          acc += op == ColvecOp::mul ? gz * av[i * n + j] : -gz;
        }
        g[i] += acc;
      }
    }
  });
}

}  // namespace

Tensor add_rowvec(const Tensor& a, const Tensor& v) { return rowvec_op("add_rowvec", RowvecOp::add, a, v); }
Tensor sub_rowvec(const Tensor& a, const Tensor& v) { return rowvec_op("sub_rowvec", RowvecOp::sub, a, v); }
Tensor mul_rowvec(const Tensor& a, const Tensor& v) { return rowvec_op("mul_rowvec", RowvecOp::mul, a, v); }
Tensor sub_colvec(const Tensor& a, const Tensor& v) { return colvec_op(ColvecOp::sub, a, v); }
Tensor mul_colvec(const Tensor& a, const Tensor& v) { return colvec_op(ColvecOp::mul, a, v); }

// ---- matmul ----------------------------------------------------------------

namespace {

// C(m,p) += A(m,n) * B(n,p); each C entry accumulates in ascending-k order.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = a[i * n + k];
      const double* brow = b + k * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
    }
  }
}

// C(m,p) += A(m,n) * B(p,n)^T
void gemm_bt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    for (std::size_t j = 0; j < p; ++j) {
      const double* brow = b + j * n;
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += arow[k] * brow[k];
      c[i * p + j] += acc;
    }
  }
}

// C(n,p) += A(m,n)^T * B(m,p)
void gemm_at_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t k = 0; k < m; ++k) {
    const double* arow = a + k * n;
    const double* brow = b + k * p;
    for (std::size_t i = 0; i < n; ++i) {
      const double aki = arow[i];
      double* crow = c + i * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += aki * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2, "matmul: expects 2-D tensors");
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  if (b.dim(0) != n)
    throw std::invalid_argument("matmul: inner dims differ " + shape_to_string(a.shape()) + " * " +
                                shape_to_string(b.shape()));
  std::vector<double> out(m * p, 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, n, p);
  return binary_op(a, b, {m, p}, std::move(out), [m, n, p](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (self.inputs[0]->requires_grad)  // dA = dC * B^T
      gemm_bt_acc(self.grad.data(), bv.data(), self.inputs[0]->grad_ref().data(), m, p, n);
    if (self.inputs[1]->requires_grad)  // dB = A^T * dC
      gemm_at_acc(av.data(), self.grad.data(), self.inputs[1]->grad_ref().data(), m, n, p);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b) {
  require(a.shape().size() == 3 && b.shape().size() == 3, "bmm: expects 3-D tensors");
  const std::size_t batches = a.dim(0), m = a.dim(1), n = a.dim(2);
  require(b.dim(0) == batches, "bmm: batch dims differ");
  const std::size_t p = trans_b ? b.dim(1) : b.dim(2);
  require((trans_b ? b.dim(2) : b.dim(1)) == n, "bmm: inner dims differ");
  std::vector<double> out(batches * m * p, 0.0);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  const std::size_t bsz = trans_b ? b.dim(1) * b.dim(2) : n * p;
  for (std::size_t s = 0; s < batches; ++s) {
    if (trans_b)
      gemm_bt_acc(ad + s * m * n, bd + s * bsz, out.data() + s * m * p, m, n, p);
    else
      gemm_acc(ad + s * m * n, bd + s * bsz, out.data() + s * m * p, m, n, p);
  }
  return binary_op(a, b, {batches, m, p}, std::move(out), [batches, m, n, p, trans_b, bsz](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    for (std::size_t s = 0; s < batches; ++s) {
      const double* ga = self.grad.data() + s * m * p;
      const double* as = av.data() + s * m * n;
      const double* bs = bv.data() + s * bsz;
      if (self.inputs[0]->requires_grad) {
        double* da = self.inputs[0]->grad_ref().data() + s * m * n;
        if (trans_b)
          gemm_acc(ga, bs, da, m, p, n);  // dA = dC * B   (B is (p,n))
        else
          gemm_bt_acc(ga, bs, da, m, p, n);  // dA = dC * B^T
      }
      if (self.inputs[1]->requires_grad) {
        double* db = self.inputs[1]->grad_ref().data() + s * bsz;
        if (trans_b)
          gemm_at_acc(ga, as, db, m, p, n);  // dB = dC^T * A  -> (p,n)
        else
          gemm_at_acc(as, ga, db, m, n, p);  // dB = A^T * dC
      }
    }
  });
}

// ---- activations -----------------------------------------------------------

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return unary_op(a, a.shape(), std::move(out), [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const auto& av = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor reglu(const Tensor& a) {
  const Shape& s = a.shape();
  require(!s.empty() && s.back() % 2 == 0, "reglu: last dimension must be even");
  auto [m, n2] = as_2d(a);
  const std::size_t n = n2 / 2;
  Shape out_shape = s;
  out_shape.back() = n;
  std::vector<double> out(m * n);
  auto av = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double x = av[i * n2 + j];
      const double g = av[i * n2 + n + j];
      out[i * n + j] = x * (g > 0.0 ? g : 0.0);
    }
  return unary_op(a, std::move(out_shape), std::move(out), [m, n, n2](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const auto& av = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad_ref();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double gz = self.grad[i * n + j];
        const double x = av[i * n2 + j];
        const double gate = av[i * n2 + n + j];
        g[i * n2 + j] += gz * (gate > 0.0 ? gate : 0.0);
        if (gate > 0.0) g[i * n2 + n + j] += gz * x;
      }
  });
}

Tensor softmax_lastdim(const Tensor& a) {
  auto [m, n] = as_2d(a);
  std::vector<double> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = av.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = std::exp(row[j] - mx) / denom;
  }
  return unary_op(a, a.shape(), std::move(out), [m, n](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_ref();
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.value.data() + i * n;
      const double* gz = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gz[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (gz[j] - dot);
    }
  });
}

Tensor rsqrt_shift(const Tensor& a, double eps) {
  std::vector<double> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / std::sqrt(av[i] + eps);
  return unary_op(a, a.shape(), std::move(out), [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * (-0.5 * y * y * y);
    }
  });
}

// ---- reductions ------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return unary_op(a, {1}, {acc}, [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_ref();
    const double gz = self.grad[0];
    for (double& x : g) x += gz;
  });
}

Tensor mean_all(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return unary_op(a, {1}, {acc * inv}, [inv](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_ref();
    const double gz = self.grad[0] * inv;
    for (double& x : g) x += gz;
  });
}

Tensor mean_axis0(const Tensor& a) {
  require(a.shape().size() == 2, "mean_axis0: expects 2-D");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(n, 0.0);
  auto av = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += av[i * n + j];
  const double inv = 1.0 / static_cast<double>(m);
  for (double& v : out) v *= inv;
  return unary_op(a, {n}, std::move(out), [m, n, inv](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_ref();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] * inv;
  });
}

Tensor mean_lastdim(const Tensor& a) {
  require(a.shape().size() == 2, "mean_lastdim: expects 2-D");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m, 0.0);
  auto av = a.data();
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += av[i * n + j];
    out[i] = acc / static_cast<double>(n);
  }
  const double inv = 1.0 / static_cast<double>(n);
  return unary_op(a, {m}, std::move(out), [m, n, inv](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_ref();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i] * inv;
  });
}

Tensor mean_axis1(const Tensor& a) {
  require(a.shape().size() == 3, "mean_axis1: expects 3-D");
  const std::size_t B = a.dim(0), d = a.dim(1), k = a.dim(2);
  std::vector<double> out(B * k, 0.0);
  std::vector<double> buf(d);
  auto av = a.data();
  const double inv = 1.0 / static_cast<double>(d);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t l = 0; l < k; ++l) {
      for (std::size_t j = 0; j < d; ++j) buf[j] = av[(b * d + j) * k + l];
      // Value-canonical summation order makes the mean bitwise invariant to
      // permutations of axis 1.
      std::sort(buf.begin(), buf.end());
      double acc = 0.0;
      for (double v : buf) acc += v;
      out[b * k + l] = acc * inv;
    }
  }
  return unary_op(a, {B, k}, std::move(out), [B, d, k, inv](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_ref();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t l = 0; l < k; ++l) g[(b * d + j) * k + l] += self.grad[b * k + l] * inv;
  });
}

// ---- structural ops --------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) throw std::invalid_argument("reshape: element count mismatch");
  std::vector<double> out(a.data().begin(), a.data().end());
  return unary_op(a, std::move(shape), std::move(out), [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_ref();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require(a.shape().size() == 2, "slice_rows: expects 2-D");
  const std::size_t m = a.dim(0), n = a.dim(1);
  require(begin <= end && end <= m, "slice_rows: range out of bounds");
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          a.data().begin() + static_cast<std::ptrdiff_t>(end * n));
  return unary_op(a, {end - begin, n}, std::move(out), [begin, n](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_ref();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
  });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2, "concat_rows: expects 2-D");
  require(a.dim(1) == b.dim(1), "concat_rows: column counts differ");
  const std::size_t n = a.dim(1);
  std::vector<double> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const std::size_t asz = a.numel();
  return binary_op(a, b, {a.dim(0) + b.dim(0), n}, std::move(out), [asz](Node& self) {
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_ref();
      for (std::size_t i = 0; i < asz; ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[asz + i];
    }
  });
}

Tensor stack_axis1(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "stack_axis1: no parts");
  const std::size_t B = parts[0].dim(0), k = parts[0].dim(1), d = parts.size();
  for (const auto& p : parts)
    require(p.shape().size() == 2 && p.dim(0) == B && p.dim(1) == k, "stack_axis1: part shape mismatch");
  std::vector<double> out(B * d * k);
  for (std::size_t j = 0; j < d; ++j) {
    auto pv = parts[j].data();
    for (std::size_t b = 0; b < B; ++b)
      std::copy_n(pv.data() + b * k, k, out.data() + (b * d + j) * k);
  }
  auto n = new_node({B, d, k}, std::move(out));
  bool needs = false;
  for (const auto& p : parts) {
    n->inputs.push_back(p.node());
    needs = needs || p.requires_grad();
  }
  n->requires_grad = needs;
  if (needs) {
    n->backward_fn = [B, d, k](Node& self) {
      for (std::size_t j = 0; j < d; ++j) {
        auto& in = self.inputs[j];
        if (!in->requires_grad) continue;
        auto& g = in->grad_ref();
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t l = 0; l < k; ++l) g[b * k + l] += self.grad[(b * d + j) * k + l];
      }
    };
  }
  return wrap(std::move(n));
}

Tensor split_heads(const Tensor& a, std::size_t heads) {
  require(a.shape().size() == 3, "split_heads: expects 3-D");
  const std::size_t B = a.dim(0), d = a.dim(1), k = a.dim(2);
  require(heads >= 1 && k % heads == 0, "split_heads: k not divisible by head count");
  const std::size_t dh = k / heads;
  std::vector<double> out(a.numel());
  auto av = a.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < d; ++t)
        for (std::size_t c = 0; c < dh; ++c)
          out[((b * heads + h) * d + t) * dh + c] = av[(b * d + t) * k + h * dh + c];
  return unary_op(a, {B * heads, d, dh}, std::move(out), [B, d, k, heads, dh](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_ref();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t t = 0; t < d; ++t)
          for (std::size_t c = 0; c < dh; ++c)
            g[(b * d + t) * k + h * dh + c] += self.grad[((b * heads + h) * d + t) * dh + c];
  });
}

Tensor merge_heads(const Tensor& a, std::size_t heads) {
  require(a.shape().size() == 3, "merge_heads: expects 3-D");
  const std::size_t Bh = a.dim(0), d = a.dim(1), dh = a.dim(2);
  require(heads >= 1 && Bh % heads == 0, "merge_heads: batch not divisible by head count");
  const std::size_t B = Bh / heads, k = dh * heads;
  std::vector<double> out(a.numel());
  auto av = a.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < d; ++t)
        for (std::size_t c = 0; c < dh; ++c)
          out[(b * d + t) * k + h * dh + c] = av[((b * heads + h) * d + t) * dh + c];
  return unary_op(a, {B, d, k}, std::move(out), [B, d, k, heads, dh](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_ref();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t t = 0; t < d; ++t)
          for (std::size_t c = 0; c < dh; ++c)
            g[((b * heads + h) * d + t) * dh + c] += self.grad[(b * d + t) * k + h * dh + c];
  });
}

// ---- gather / scatter ------------------------------------------------------

Tensor embed_rows(const Tensor& table, const std::vector<std::size_t>& idx) {
  require(table.shape().size() == 2, "embed_rows: table must be 2-D");
  const std::size_t K = table.dim(0), k = table.dim(1);
  std::vector<double> out(idx.size() * k);
  auto tv = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= K) throw std::out_of_range("embed_rows: index out of range");
    std::copy_n(tv.data() + idx[i] * k, k, out.data() + i * k);
  }
  auto indices = idx;
  return unary_op(table, {idx.size(), k}, std::move(out), [indices, k](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_ref();
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t c = 0; c < k; ++c) g[indices[i] * k + c] += self.grad[i * k + c];
  });
}

Tensor outer(const std::vector<double>& x, const Tensor& v) {
  require(v.shape().size() == 1, "outer: v must be 1-D");
  const std::size_t m = x.size(), k = v.numel();
  std::vector<double> out(m * k);
  auto vv = v.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < k; ++c) out[i * k + c] = x[i] * vv[c];
  auto xs = x;
  return unary_op(v, {m, k}, std::move(out), [xs, m, k](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    auto& g = self.inputs[0]->grad_ref();
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) acc += xs[i] * self.grad[i * k + c];
      g[c] += acc;
    }
  });
}

// ---- losses ----------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  require(logits.shape().size() == 2, "cross_entropy: logits must be 2-D");
  const std::size_t m = logits.dim(0), C = logits.dim(1);
  require(labels.size() == m, "cross_entropy: label count mismatch");
  auto lv = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw std::out_of_range("cross_entropy: label out of range");
    const double* row = lv.data() + i * C;
    double mx = row[0];
    for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < C; ++j) denom += std::exp(row[j] - mx);
    total += mx + std::log(denom) - row[y];
  }
  const double inv = 1.0 / static_cast<double>(m);
  auto ys = labels;
  return unary_op(logits, {1}, {total * inv}, [ys, m, C, inv](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const auto& lv = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad_ref();
    const double gz = self.grad[0] * inv;
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = lv.data() + i * C;
      double mx = row[0];
      for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
      double denom = 0.0;
      for (std::size_t j = 0; j < C; ++j) denom += std::exp(row[j] - mx);
      for (std::size_t j = 0; j < C; ++j) {
        const double softmax = std::exp(row[j] - mx) / denom;
        const double delta = static_cast<std::size_t>(ys[i]) == j ? 1.0 : 0.0;
        g[i * C + j] += gz * (softmax - delta);
      }
    }
  });
}

Tensor mse(const Tensor& pred, const std::vector<double>& targets) {
  require(pred.numel() == targets.size(), "mse: size mismatch");
  auto pv = pred.data();
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double diff = pv[i] - targets[i];
    total += diff * diff;
  }
  const double inv = 1.0 / static_cast<double>(targets.size());
  auto ts = targets;
  return unary_op(pred, {1}, {total * inv}, [ts, inv](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const auto& pv = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad_ref();
    const double gz = self.grad[0] * inv;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gz * 2.0 * (pv[i] - ts[i]);
  });
}

// ---- dropout ---------------------------------------------------------------

Tensor dropout_mask(const Shape& shape, double rate, RngStream& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout_mask: rate must be in [0,1)");
  std::vector<double> mask(shape_numel(shape));
  const double keep = 1.0 / (1.0 - rate);
  for (double& v : mask) v = rng.uniform() < rate ? 0.0 : keep;
  return Tensor::constant(shape, std::move(mask));
}

Tensor dropout_mask(const Shape& shape, double rate, std::uint64_t seed) {
  RngStream rng(seed);
  return dropout_mask(shape, rate, rng);
}

}  // namespace tabtoken
