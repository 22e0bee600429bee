#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "poda/error.hpp"

namespace poda {

template <typename T>
class Tape;

template <typename T>
struct TensorImpl {
  std::vector<int64_t> shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily, same length as data
  Tape<T>* tape = nullptr;
  int64_t node = -1;  // index into the tape, -1 for leaves
};

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline int64_t shape_numel(const std::vector<int64_t>& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

/// Dense n-dimensional array with an attached gradient slot. Copies are
/// shallow; the underlying buffer is shared.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape) {
    return filled(std::move(shape), T(0));
  }

  static Tensor filled(std::vector<int64_t> shape, T value) {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    int64_t n = shape_numel(shape);
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(static_cast<size_t>(n), value);
    return t;
  }

  static Tensor from(std::vector<int64_t> shape, std::vector<T> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError("Tensor::from: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    return t;
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int64_t>& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  std::vector<T>& data() { return impl_->data; }
  const std::vector<T>& data() const { return impl_->data; }
  T* ptr() { return impl_->data.data(); }
  const T* ptr() const { return impl_->data.data(); }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::vector<T>& grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }
  const std::vector<T>& grad() const { return impl_->grad; }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1) throw ShapeError("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
    return impl_->data[0];
  }

  Tape<T>* tape() const { return impl_ ? impl_->tape : nullptr; }
  int64_t node() const { return impl_->node; }
  bool wants_grad() const { return impl_ && impl_->tape != nullptr; }

  /// Marks this tensor as a leaf tracked by `tape` (a trainable parameter).
  void watch(Tape<T>& tape) {
    impl_->tape = &tape;
    impl_->node = -1;
  }
  void unwatch() {
    impl_->tape = nullptr;
    impl_->node = -1;
  }
  void set_recorded(Tape<T>* tape, int64_t node) {
    impl_->tape = tape;
    impl_->node = node;
  }

  /// Deep copy of values (gradient and tape state are not copied).
  Tensor clone_detached() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// Ordered record of executed primitives. Each node owns the backward closure
/// for one primitive, capturing whatever activations it needs; recording
/// order is the topological order of the forward pass.
template <typename T>
class Tape {
 public:
  bool recording() const { return recording_; }
  void set_recording(bool r) { recording_ = r; }

  int64_t record(const char* op, std::function<void()> backward) {
    nodes_.push_back(Node{op, std::move(backward)});
    return static_cast<int64_t>(nodes_.size()) - 1;
  }

  /// Runs backward closures from `from_node` down to the first node.
  void run_backward(int64_t from_node) {
    for (int64_t i = from_node; i >= 0; --i) nodes_[static_cast<size_t>(i)].backward();
  }

  void clear() { nodes_.clear(); }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  bool recording_ = true;
};

/// RAII scope that pauses recording (evaluation/validation passes).
template <typename T>
class NoGrad {
 public:
  explicit NoGrad(Tape<T>* tape) : tape_(tape), prev_(tape ? tape->recording() : false) {
    if (tape_) tape_->set_recording(false);
  }
  ~NoGrad() {
    if (tape_) tape_->set_recording(prev_);
  }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  Tape<T>* tape_;
  bool prev_;
};

/// Populates gradients of everything reachable from a scalar loss.
/// Gradients accumulate additively across multiple uses of a tensor.
template <typename T>
void backward(Tensor<T>& loss) {
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  Tape<T>* tape = loss.tape();
  if (!tape) throw ShapeError("backward: loss is not attached to a tape");
  if (loss.node() < 0) throw ShapeError("backward: loss is a leaf; nothing to differentiate");
  loss.grad()[0] = T(1);
  tape->run_backward(loss.node());
}

}  // namespace poda
