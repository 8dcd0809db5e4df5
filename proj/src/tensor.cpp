#include "g2sd/tensor.hpp"

#include <unordered_set>

#include "g2sd/errors.hpp"

namespace g2sd {

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto impl = std::make_shared<Impl>();
  impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return BasicTensor(std::move(impl));
}

template <class T>
BasicTensor<T> BasicTensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("from_data: shape " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return BasicTensor(std::move(impl));
}

template <class T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

template <class T>
std::int64_t BasicTensor<T>::dim(std::int64_t i) const {
  const auto n = ndim();
  if (i < 0) i += n;
  if (i < 0 || i >= n) throw IndexError("dim " + std::to_string(i) + " of " + shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(i)];
}

template <class T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <class T>
void BasicTensor<T>::backward() const {
  if (numel() != 1) throw ShapeError("backward() without seed needs a scalar, got " + shape_str(shape()));
  const T one(1);
  backward(std::span<const T>(&one, 1));
}

template <class T>
void BasicTensor<T>::backward(std::span<const T> seed) const {
  if (static_cast<std::int64_t>(seed.size()) != numel()) throw ShapeError("backward seed size mismatch");
  if (!impl_->requires_grad) throw ConfigError("backward() on a tensor that does not require grad");
  auto& g = impl_->ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  Tape<T>::build(*this).run_backward();
}

template <class T>
BasicTensor<T> BasicTensor<T>::detach() const {
  auto impl = std::make_shared<Impl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return BasicTensor(std::move(impl));
}

template <class T>
BasicTensor<T> BasicTensor<T>::clone() const {
  auto copy = detach();
  copy.impl_->requires_grad = impl_->requires_grad && impl_->grad_fn == nullptr;
  return copy;
}

template <class T>
Tape<T> Tape<T>::build(const BasicTensor<T>& root) {
  // Iterative post-order DFS; inputs are emitted before the nodes using them.
  Tape tape;
  std::unordered_set<const detail::TensorImpl<T>*> seen;
  struct Frame {
    detail::TensorImpl<T>* impl;
    std::size_t next;
  };
  std::vector<Frame> stack;
  if (!root.defined() || !root.impl()->grad_fn) return tape;
  stack.push_back({root.impl().get(), 0});
  seen.insert(root.impl().get());
  while (!stack.empty()) {
    auto& top = stack.back();
    const auto& inputs = top.impl->grad_fn->inputs;
    if (top.next < inputs.size()) {
      auto* child = inputs[top.next++].get();
      if (child->grad_fn && child->requires_grad && seen.insert(child).second) {
        stack.push_back({child, 0});
      }
    } else {
      tape.order_.push_back(top.impl);
      stack.pop_back();
    }
  }
  return tape;
}

template <class T>
void Tape<T>::run_backward() const {
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    auto* impl = *it;
    if (impl->grad.empty()) continue;  // not on any path from the root
    impl->grad_fn->backward(*impl);
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace g2sd
