#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stockformer/error.hpp"

namespace stockformer::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace detail {

// 64-byte aligned storage. Eigen peels a scalar head off unaligned arrays
// before its packet loop, and the two paths round differently, so without a
// fixed alignment the same op on the same inputs could differ in the last bit
// depending on where malloc put the buffer.
inline constexpr std::size_t kAlign = 64;

template <typename T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kAlign})); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kAlign}); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

// Leaves elements uninitialized on resize(n), so a fresh gradient buffer can
// be written once instead of zero-filled and then accumulated into.
template <typename T>
struct DefaultInitAllocator : AlignedAllocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  DefaultInitAllocator() = default;
  template <typename U>
  DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}
  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace detail

using Buffer = std::vector<double, detail::AlignedAllocator<double>>;

namespace detail {

using GradBuffer = std::vector<double, DefaultInitAllocator<double>>;

// Stores v into dst on first write, adds it afterwards.
template <typename Fresh>
inline void put(Fresh, double& dst, double v) {
  if constexpr (Fresh::value) dst = v;
  else dst += v;
}

struct Node {
  Shape shape;
  Buffer value;
  GradBuffer grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  double* ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad.data();
  }

  /// Calls body(dst, fresh). When fresh is std::true_type the buffer is
  /// uninitialized and body must assign every element exactly once.
  template <typename Body>
  void write_grad(Body&& body) {
    if (grad.empty()) {
      grad.resize(value.size());
      body(grad.data(), std::true_type{});
    } else {
      body(grad.data(), std::false_type{});
    }
  }
};

inline thread_local int no_grad_depth = 0;

}  // namespace detail

inline bool grad_enabled() noexcept { return detail::no_grad_depth == 0; }

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() noexcept { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Shared handle to a dense row-major array of doubles that may sit on the
/// gradient tape. Copying a Tensor copies the handle, not the data.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    node_->value.assign(numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (values.size() != numel(shape)) {
      throw ShapeMismatch("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                          to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value.assign(values.begin(), values.end());
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(double v, bool requires_grad = false) { return Tensor(Shape{}, std::vector<double>{v}, requires_grad); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return {node_->ensure_grad(), node_->value.size()}; }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  double item() const {
    if (size() != 1) throw NotScalar("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  /// Same values, off the tape.
  Tensor detach() const { return make(node_->shape, node_->value); }

  detail::Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& handle() const noexcept { return node_; }

  static Tensor make(Shape shape, Buffer values, bool requires_grad = false) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return wrap(std::move(node));
  }

  // Used by ops to build results.
  static Tensor wrap(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Builds an op result. The backward rule is only recorded when some parent
/// requires grad and recording is enabled.
inline Tensor make_result(Shape shape, Buffer value, std::initializer_list<Tensor> parents,
                          std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs && grad_enabled()) {
    node->requires_grad = true;
    for (const auto& p : parents) node->parents.push_back(p.handle());
    node->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(node));
}

inline Tensor make_result(Shape shape, Buffer value, const std::vector<Tensor>& parents,
                          std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs && grad_enabled()) {
    node->requires_grad = true;
    for (const auto& p : parents) node->parents.push_back(p.handle());
    node->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(node));
}

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable tensor that requires grad; the recorded graph is released.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw NotScalar("backward() needs a scalar loss, got shape " + (loss.defined() ? to_string(loss.shape()) : "[]"));
  }
  if (!loss.requires_grad()) {
    throw InvalidArgument("backward() on a loss that does not depend on any tensor requiring grad");
  }

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (detail::Node* node : order) {
    node->backward = nullptr;
    node->parents.clear();
  }
}

}  // namespace stockformer::ad
