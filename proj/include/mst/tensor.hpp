#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mst {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorImpl;

/// Record of the operation that produced a tensor. `backward` reads the
/// output's gradient and accumulates into the inputs' gradients.
template <typename T>
struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily, same length as data
  bool requires_grad = false;
  std::unique_ptr<Node<T>> node;

  std::vector<T>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor handle. Copies share storage; the computation
/// graph is rebuilt on every forward pass.
template <typename T>
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, T value);
  static Tensor scalar(T value);
  /// Trainable leaf: tracked, no producing node.
  static Tensor leaf(Shape shape, std::vector<T> data);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_node() const { return impl_->node != nullptr; }
  const char* op_name() const { return impl_->node ? impl_->node->op : ""; }

  /// Empty span until a backward pass has reached this tensor.
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad();

  /// Constant copy of the values, cut from the graph.
  Tensor detach() const;

  /// Reverse-mode pass from this scalar. Gradients accumulate into leaves;
  /// intermediate buffers are reset first so repeated calls add up cleanly.
  void backward() const;

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// Whether ops record graph nodes on this thread.
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an op result. The node is attached only when some input is tracked.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(const TensorImpl<T>&)> backward);
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(const TensorImpl<T>&)> backward);

/// Named trainable tensor.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace mst
