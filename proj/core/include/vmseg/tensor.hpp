#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vmseg/common.hpp"

namespace vmseg {

namespace detail {

// One node of the op graph: the tensor value plus the record of how it was
// produced. Execution order is a topological order; backward() walks the
// reachable subgraph once in reverse.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  bool leaf = true;
  std::string op = "leaf";
  int64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

int64_t next_node_id();

}  // namespace detail

// Shared handle to a graph node. Values are immutable once created; the two
// sanctioned exceptions are gradient buffers and optimizer updates to leaf
// data between graph builds. Building disjoint graphs from different threads
// is fine; sharing one graph across threads is not.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node<T>> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return int64_t(node_->value.size()); }
  int64_t dim(size_t i) const { return node_->shape[i]; }
  int64_t rank() const { return int64_t(node_->shape.size()); }
  bool requires_grad() const { return node_->requires_grad; }
  int64_t id() const { return node_->id; }
  const std::string& op() const { return node_->op; }
  bool is_leaf() const { return node_->leaf; }

  std::span<const T> data() const { return {node_->value.data(), node_->value.size()}; }
  T item() const;

  // Mutable access to a leaf's storage (weight init, optimizer step). Throws
  // ContractError on non-leaf nodes: op outputs are frozen.
  std::span<T> mut_data();

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return {node_->grad.data(), node_->grad.size()}; }
  std::span<T> mut_grad();
  void zero_grad();

  std::shared_ptr<detail::Node<T>> node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

// ---- graph ops -------------------------------------------------------------
// All ops validate shapes (ShapeError) and propagate requires_grad from their
// inputs. Each documents its FLOP cost through vmseg::flopcount.

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T c);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T c);
// x: [rows..., d], bias: [d], broadcast over leading dims.
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> silu(const Tensor<T>& a);
template <typename T> Tensor<T> softplus(const Tensor<T>& a);
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
// Normalizes over the last dim d; gamma/beta: [d].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5);
// Row-wise softmax over the last dim, max-subtracted for stability.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x);
// out[i] = x[index[i]]; index entries address x's flat storage. Covers every
// rearrangement in the stack (scan routes, patch ops, flips); backward is
// scatter-add, so duplicate indices are legal.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, std::shared_ptr<const std::vector<int64_t>> index,
                 Shape out_shape);
// Row-level gather for 2-D [n, d] tensors: out[i, :] = x[rows[i], :].
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int64_t>& rows);
template <typename T> Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b);
// x: [C, h, w], kernels: [C, k, k] with k odd; same zero padding.
template <typename T> Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernels);

// Reverse-mode sweep from a scalar loss. Gradients accumulate into each
// reachable node that requires grad; leaves keep theirs until zero_grad().
template <typename T> void backward(const Tensor<T>& loss);

// ---- internals shared by op implementations in other translation units ----
namespace detail {

template <typename T>
Tensor<T> make_op(std::string op, Shape shape, std::vector<T> value,
                  std::vector<std::shared_ptr<Node<T>>> parents,
                  std::function<void(Node<T>&)> backprop);

template <typename T>
void check_finite_value(const Node<T>& n, const char* phase);

}  // namespace detail

}  // namespace vmseg
