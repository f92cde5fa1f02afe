#include "mst/tensor.hpp"

#include <sstream>
#include <unordered_set>
#include <utility>

#include "mst/errors.hpp"

namespace mst {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor() : impl_(std::make_shared<TensorImpl<T>>()) {
  impl_->data.assign(1, T(0));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl<T>>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape) {
  return Tensor(shape, std::vector<T>(shape_numel(shape), T(0)));
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value) {
  return Tensor(shape, std::vector<T>(shape_numel(shape), value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
Tensor<T> Tensor<T>::leaf(Shape shape, std::vector<T> data) {
  return Tensor(std::move(shape), std::move(data), true);
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank mismatch for " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= impl_->shape[axis]) throw ShapeError("index out of range for " + shape_str(shape()));
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(impl_->shape, impl_->data);
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) throw ContractError("backward() needs a scalar root, got " + shape_str(shape()));
  if (!impl_->requires_grad) throw ContractError("backward() on an untracked tensor");

  // Iterative post-order DFS; reversed it is a topological order.
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<const TensorImpl<T>*> seen;
  std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [cur, next] = stack.back();
    if (cur->node && next < cur->node->inputs.size()) {
      TensorImpl<T>* child = cur->node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(cur);
    stack.pop_back();
  }

  for (TensorImpl<T>* t : order) {
    if (t->node) t->grad.assign(t->data.size(), T(0));
  }
  impl_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>* t = *it;
    if (t->node && t->node->backward) t->node->backward(*t);
  }
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace {

template <typename T, typename Range>
Tensor<T> make_result_impl(const char* op, Shape shape, std::vector<T> data, const Range& inputs,
                           std::function<void(const TensorImpl<T>&)> backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  bool tracked = false;
  if (!g_grad_enabled) return out;
  for (const auto& in : inputs) tracked = tracked || in.requires_grad();
  if (!tracked) return out;
  auto node = std::make_unique<Node<T>>();
  node->op = op;
  for (const auto& in : inputs) node->inputs.push_back(in.impl());
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(const TensorImpl<T>&)> backward) {
  return make_result_impl<T>(op, std::move(shape), std::move(data), inputs, std::move(backward));
}

template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      const std::vector<Tensor<T>>& inputs,
                      std::function<void(const TensorImpl<T>&)> backward) {
  return make_result_impl<T>(op, std::move(shape), std::move(data), inputs, std::move(backward));
}

template class Tensor<float>;
template class Tensor<double>;

#define MST_INSTANTIATE(T)                                                                      \
  template Tensor<T> make_result<T>(const char*, Shape, std::vector<T>,                         \
                                    std::initializer_list<Tensor<T>>,                           \
                                    std::function<void(const TensorImpl<T>&)>);                \
  template Tensor<T> make_result<T>(const char*, Shape, std::vector<T>,                         \
                                    const std::vector<Tensor<T>>&,                              \
                                    std::function<void(const TensorImpl<T>&)>);
MST_INSTANTIATE(float)
MST_INSTANTIATE(double)
#undef MST_INSTANTIATE

}  // namespace mst
