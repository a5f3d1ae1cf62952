#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace sr3 {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Cache-line aligned allocator. Vectorised kernels peel a scalar prologue up
/// to the first aligned element, so unaligned storage would make rounding
/// depend on where the heap happened to place a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // empty until first written
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into the parents' grads.
  std::function<void(Node& self)> backward;

  bool is_leaf() const { return parents.empty(); }
  Buffer<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Gradient recording is on by default. While a NoGradGuard is alive on the
/// current thread, operations produce plain values without graph edges.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Row-major n-d array that takes part in a reverse-mode compute graph.
///
/// Tensor is a handle: copies share storage and graph node. Use clone() for
/// an independent value copy. T is float (default runs) or double (oracle and
/// gradient-check runs).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false) {
    return full({1}, value, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  T& operator[](std::size_t i) { return node_->data[i]; }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  /// Gradient buffer; zero-filled on first access.
  std::span<T> grad() { return node_->ensure_grad(); }
  std::span<const T> grad() const { return node_->ensure_grad(); }
  void zero_grad();

  /// Accumulates d(this)/d(leaf) into every requires_grad ancestor.
  /// Requires a single-element tensor.
  void backward();

  Tensor clone() const;
  /// Same values, no graph history.
  Tensor detach() const;
  /// Shares storage with a new shape of equal element count.
  Tensor reshape(Shape shape) const;

  bool all_finite() const;

  // Graph construction. `parents` are recorded only when gradient recording
  // is enabled and at least one of them requires grad.
  static Tensor make_result(Shape shape, Buffer<T> values,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node<T>&)> backward);

  detail::Node<T>& node() { return *node_; }
  const detail::Node<T>& node() const { return *node_; }
  const std::shared_ptr<detail::Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

/// Ordered name -> tensor collection (model parameters, gradients, moments).
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using NamedTensors = std::vector<NamedTensor<T>>;

/// Deep copy of every tensor in the set (no shared storage).
template <typename T>
NamedTensors<T> clone_all(const NamedTensors<T>& set) {
  NamedTensors<T> out;
  out.reserve(set.size());
  for (const auto& item : set) out.push_back({item.name, item.tensor.clone()});
  return out;
}

}  // namespace sr3
