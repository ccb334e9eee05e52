// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same buffer, which is what
// lets the parameter registry, the optimizer and the blocks all see one
// weight. Use clone() for an independent copy.
//
// Differentiable ops append to the Tape that is recording on the calling
// thread. With no recording tape, ops build no graph and retain nothing.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace paca {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AutogradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Shape {
 public:
  Shape() = default;  // rank 0, one element
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  std::size_t numel() const { return numel_; }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::string to_string() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
  std::size_t numel_ = 1;
};

// Live/peak element counts over every tensor buffer (values and grads).
struct ActivationMeter {
  static std::int64_t live();
  static std::int64_t peak();
  static void reset_peak();
};

// When enabled, every op checks its output for NaN/Inf and throws
// NonFiniteError naming the op. On by default in builds without NDEBUG.
void set_finite_checks(bool enabled);
bool finite_checks();

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct TensorNode {
  TensorNode(Shape s, std::vector<T> values);
  ~TensorNode();
  TensorNode(const TensorNode&) = delete;
  TensorNode& operator=(const TensorNode&) = delete;

  void ensure_grad();
  void release_grad();

  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t numel() const { return node().shape.numel(); }
  std::size_t dim(std::size_t axis) const { return node().shape[axis]; }
  std::size_t rank() const { return node().shape.rank(); }

  std::span<T> data() { return node().data; }
  std::span<const T> data() const { return node().data; }
  T& operator[](std::size_t i) { return node().data[i]; }
  const T& operator[](std::size_t i) const { return node().data[i]; }
  T& at(std::initializer_list<std::size_t> index);
  const T& at(std::initializer_list<std::size_t> index) const;
  T item() const;

  bool requires_grad() const { return node().requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const { return !node().grad.empty(); }
  // Empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return node().grad; }
  std::span<T> grad_mut() { return node().grad; }
  Tensor grad_tensor() const;
  void zero_grad();
  void clear_grad();
  // Handle semantics: adds into the shared node even through a const handle.
  void accumulate_grad(std::span<const T> g) const;

  // Deep copy with no gradient and requires_grad = false.
  Tensor clone() const;
  // Same shape and buffer reinterpretation as a copy; not differentiable.
  Tensor detach() const { return clone(); }
  bool same(const Tensor& other) const { return node_ == other.node_; }

  std::shared_ptr<detail::TensorNode<T>> handle() const { return node_; }

 private:
  detail::TensorNode<T>& node() const;
  std::shared_ptr<detail::TensorNode<T>> node_;
};

// Records executed ops in execution order. backward() replays them in
// reverse, once each, accumulating gradients into every reachable tensor
// that requires them.
template <typename T>
class Tape {
 public:
  using NodePtr = std::shared_ptr<detail::TensorNode<T>>;

  struct Entry {
    std::string op;
    std::vector<NodePtr> inputs;
    NodePtr output;
    std::function<void()> backward;
  };

  // RAII guard making a tape the recording tape of this thread.
  class Recording {
   public:
    explicit Recording(Tape& tape);
    ~Recording();
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    Tape* previous_;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Recording record() { return Recording(*this); }
  void push(Entry entry) { entries_.push_back(std::move(entry)); }
  void backward(const Tensor<T>& loss);
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<Entry>& entries() const { return entries_; }

  static Tape* active();

 private:
  std::vector<Entry> entries_;
};

// Convenience: tape.backward(loss).
template <typename T>
void backward(const Tensor<T>& loss, Tape<T>& tape) {
  tape.backward(loss);
}

}  // namespace paca
