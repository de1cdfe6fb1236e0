// tensor.hpp: dense double tensors with reverse-mode differentiation.
//
// A Tensor is a handle to a graph node. Ops on tensors that require gradients
// record their inputs and an adjoint closure; backward() on a scalar walks the
// graph in reverse topological order once. Parameters are leaves created with
// requires_grad = true; their gradients accumulate until zero_grad().

#pragma once

#include "qfc/rng.hpp"

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qfc {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_size(const Shape& s);
std::string shape_string(const Shape& s);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool consumed = false;     // backward already run from this node
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> adjoint;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  // Negative indices count from the end.
  std::size_t dim(int i) const;
  std::size_t size() const { return node_->value.size(); }

  const std::vector<double>& values() const { return node_->value; }
  std::vector<double>& mutable_values() { return node_->value; }
  double item() const;
  double at(std::size_t flat) const { return node_->value[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  // Zeros when no gradient has reached this tensor.
  std::vector<double> grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // Requires a scalar. Throws std::logic_error when called twice on the same
  // graph root.
  void backward();

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
  friend Tensor make_tensor(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(const detail::Node&)>);
};

// Builds an op result; the adjoint is kept only when gradients are enabled and
// some input requires them.
Tensor make_tensor(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(const detail::Node&)> adjoint);

bool grad_enabled();

namespace detail {
// While set, relu appends the sign of every input it sees.
void set_relu_recorder(std::vector<char>* recorder);
}  // namespace detail

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// a: [..., M, K]; b: [K, N] (shared) or [..., K, N] (same leading dims).
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// Elementwise with b either the same shape as a or equal to a trailing block
// of a's shape (broadcast over the leading dims).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// alpha * a + beta
Tensor affine(const Tensor& a, double alpha, double beta = 0.0);
Tensor scale(const Tensor& a, double s);

Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// Softmax over `axis` (only the last axis is supported; pass -1). Entries may
// be -inf; a row with no finite entry is an error.
Tensor softmax(const Tensor& a, int axis = -1);
// Adds a constant tensor broadcast over the leading dims of a (e.g. a 0/-inf
// attention mask). No gradient flows to the constant.
Tensor add_constant(const Tensor& a, std::span<const double> c, const Shape& c_shape);

// Normalizes the last axis with 1/N variance and eps inside the root, then
// applies gain and bias of shape [N].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// table: [V, D]; output shape index_shape + [D].
Tensor embedding(const Tensor& table, std::span<const std::size_t> indices, const Shape& index_shape);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length);

// Mean over rows of -log softmax(logits)[target]; logits [..., V].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& a, double p, RngStream& rng, bool training);

// Max over sampled coordinates of |analytic - central| / max(floor, |central|),
// floor = denominator_floor (1e-8 by default).
// `max_coords` = 0 checks every coordinate; otherwise coordinates are drawn
// uniformly with the given seed. `skip(param_index, flat_index)` excludes
// coordinates up front. With exclude_relu_kinks, a coordinate whose +-h
// perturbation flips the sign of any relu input is dropped as a kink point.
struct GradCheckOptions {
  double h = 1e-5;
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  std::function<bool(std::size_t, std::size_t)> skip;
  bool exclude_relu_kinks = true;
  std::size_t* n_kinks = nullptr;  // optional count of dropped coordinates
  double denominator_floor = 1e-8;
};
double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                  const GradCheckOptions& options = {});

}  // namespace qfc
