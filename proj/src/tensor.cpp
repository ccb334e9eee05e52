// SPDX-License-Identifier: Apache-2.0
#include "paca/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <sstream>

namespace paca {

namespace {

std::atomic<std::int64_t> g_live{0};
std::atomic<std::int64_t> g_peak{0};

#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif

void meter_add(std::int64_t n) {
  const std::int64_t now = g_live.fetch_add(n, std::memory_order_relaxed) + n;
  std::int64_t peak = g_peak.load(std::memory_order_relaxed);
  while (now > peak && !g_peak.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void meter_sub(std::int64_t n) { g_live.fetch_sub(n, std::memory_order_relaxed); }

std::size_t checked_product(const std::vector<std::size_t>& dims) {
  std::size_t n = 1;
  for (std::size_t d : dims) {
    if (d == 0) throw ShapeError("shape extents must be >= 1");
    if (n > std::numeric_limits<std::size_t>::max() / d) throw ShapeError("shape element count overflows");
    n *= d;
  }
  return n;
}

}  // namespace

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)), numel_(checked_product(dims_)) {}

std::string Shape::to_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
  os << ']';
  return os.str();
}

std::int64_t ActivationMeter::live() { return g_live.load(std::memory_order_relaxed); }
std::int64_t ActivationMeter::peak() { return g_peak.load(std::memory_order_relaxed); }
void ActivationMeter::reset_peak() { g_peak.store(g_live.load(std::memory_order_relaxed), std::memory_order_relaxed); }

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled, std::memory_order_relaxed); }
bool finite_checks() { return g_finite_checks.load(std::memory_order_relaxed); }

namespace detail {

template <typename T>
TensorNode<T>::TensorNode(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape.numel()) {
    throw ShapeError("buffer of " + std::to_string(data.size()) + " elements does not match shape " +
                     shape.to_string());
  }
  meter_add(static_cast<std::int64_t>(data.size()));
}

template <typename T>
TensorNode<T>::~TensorNode() {
  meter_sub(static_cast<std::int64_t>(data.size() + grad.size()));
}

template <typename T>
void TensorNode<T>::ensure_grad() {
  if (grad.empty()) {
    grad.assign(data.size(), T(0));
    meter_add(static_cast<std::int64_t>(grad.size()));
  }
}

template <typename T>
void TensorNode<T>::release_grad() {
  meter_sub(static_cast<std::int64_t>(grad.size()));
  grad.clear();
  grad.shrink_to_fit();
}

}  // namespace detail

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) {
  const std::size_t n = shape.numel();
  node_ = std::make_shared<detail::TensorNode<T>>(std::move(shape), std::vector<T>(n, fill));
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : node_(std::make_shared<detail::TensorNode<T>>(std::move(shape), std::move(values))) {}

template <typename T>
detail::TensorNode<T>& Tensor<T>::node() const {
  if (!node_) throw std::logic_error("use of an undefined tensor");
  return *node_;
}

template <typename T>
T& Tensor<T>::at(std::initializer_list<std::size_t> index) {
  return const_cast<T&>(std::as_const(*this).at(index));
}

template <typename T>
const T& Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.rank()) throw ShapeError("index rank does not match shape " + s.to_string());
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw ShapeError("index out of range for shape " + s.to_string());
    flat = flat * s[axis] + i;
    ++axis;
  }
  return node().data[flat];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().to_string());
  return node().data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  node().requires_grad = on;
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::grad_tensor() const {
  if (!has_grad()) return Tensor(shape());
  return Tensor(shape(), std::vector<T>(node().grad.begin(), node().grad.end()));
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (has_grad()) std::fill(node().grad.begin(), node().grad.end(), T(0));
}

template <typename T>
void Tensor<T>::clear_grad() {
  node().release_grad();
}

template <typename T>
void Tensor<T>::accumulate_grad(std::span<const T> g) const {
  auto& n = node();
  if (g.size() != n.data.size()) throw ShapeError("gradient size does not match shape " + n.shape.to_string());
  n.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(shape(), std::vector<T>(node().data.begin(), node().data.end()));
}

namespace {
template <typename T>
thread_local Tape<T>* t_active_tape = nullptr;
}

template <typename T>
Tape<T>::Recording::Recording(Tape& tape) : previous_(t_active_tape<T>) {
  t_active_tape<T> = &tape;
}

template <typename T>
Tape<T>::Recording::~Recording() {
  t_active_tape<T> = previous_;
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return t_active_tape<T>;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw AutogradError("backward on an undefined tensor");
  if (loss.numel() != 1) throw AutogradError("backward needs a scalar loss, got shape " + loss.shape().to_string());
  if (entries_.empty()) throw AutogradError("backward on a detached loss: the tape is empty");
  const auto root = loss.handle();
  const bool produced_here =
      std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.output == root; });
  if (!produced_here) throw AutogradError("backward on a detached loss: it was not produced by this tape");

  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output->grad.empty()) it->backward();
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template struct detail::TensorNode<float>;
template struct detail::TensorNode<double>;

}  // namespace paca
