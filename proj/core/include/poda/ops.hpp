#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "poda/rng.hpp"
#include "poda/tensor.hpp"

// Reverse-mode primitives. Every function computes its forward value and,
// when an input is attached to a recording tape, pushes one backward closure
// that accumulates into the inputs' grad buffers.

namespace poda {

namespace detail {

template <typename T>
Tape<T>* op_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = nullptr;
  for (const Tensor<T>* in : inputs) {
    if (!in->defined()) continue;
    Tape<T>* t = in->tape();
    if (!t) continue;
    if (tape && t != tape) throw ShapeError("primitive spans two different tapes");
    tape = t;
  }
  return (tape && tape->recording()) ? tape : nullptr;
}

template <typename T>
void ensure_grad(TensorImpl<T>& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), T(0));
}

template <typename T>
bool wants(const std::shared_ptr<TensorImpl<T>>& t) {
  return t->tape != nullptr;
}

// Suffix broadcast: b's shape must equal a's shape or a trailing slice of it.
template <typename T>
void check_suffix(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  bool ok = bs.size() <= as.size();
  if (ok) {
    for (size_t i = 0; i < bs.size(); ++i) {
      if (bs[bs.size() - 1 - i] != as[as.size() - 1 - i]) {
        ok = false;
        break;
      }
    }
  }
  if (!ok)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(as) + " vs " + shape_str(bs));
}

struct AxisView {
  int64_t outer;
  int64_t n;
  int64_t inner;
};

inline AxisView axis_view(const std::vector<int64_t>& shape, int axis) {
  if (axis < 0) axis += static_cast<int>(shape.size());
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
  AxisView v{1, shape[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) v.outer *= shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void acc_mm(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      T av = arow[p];
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T
template <typename T>
void acc_mm_bt(const T* a, const T* b, T* c, int64_t m, int64_t n, int64_t k) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    T* crow = c + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T s = T(0);
      for (int64_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      crow[p] += s;
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
template <typename T>
void acc_mm_at(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (int64_t p = 0; p < k; ++p) {
      T av = arow[p];
      if (av == T(0)) continue;
      T* crow = c + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

/// Boolean mask with an explicit shape; broadcast over the leading dimensions
/// of the tensor it is applied to.
struct BoolMask {
  std::vector<int64_t> shape;
  std::vector<uint8_t> flags;
};

// ---------------------------------------------------------------------------
// elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_suffix("add", a, b);
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const int64_t n = a.numel(), bn = b.numel();
  const T* ap = a.ptr();
  const T* bp = b.ptr();
  T* op = out.ptr();
  for (int64_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i % bn];
  if (Tape<T>* tape = detail::op_tape<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("add", [ai, bi, oi] {
      detail::ensure_grad(*oi);
      const int64_t n2 = static_cast<int64_t>(oi->data.size());
      const int64_t bn2 = static_cast<int64_t>(bi->data.size());
      if (detail::wants(ai)) {
        detail::ensure_grad(*ai);
        for (int64_t i = 0; i < n2; ++i) ai->grad[i] += oi->grad[i];
      }
      if (detail::wants(bi)) {
        detail::ensure_grad(*bi);
        for (int64_t i = 0; i < n2; ++i) bi->grad[i % bn2] += oi->grad[i];
      }
    }));
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_suffix("sub", a, b);
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const int64_t n = a.numel(), bn = b.numel();
  for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] - b.ptr()[i % bn];
  if (Tape<T>* tape = detail::op_tape<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("sub", [ai, bi, oi] {
      detail::ensure_grad(*oi);
      const int64_t n2 = static_cast<int64_t>(oi->data.size());
      const int64_t bn2 = static_cast<int64_t>(bi->data.size());
      if (detail::wants(ai)) {
        detail::ensure_grad(*ai);
        for (int64_t i = 0; i < n2; ++i) ai->grad[i] += oi->grad[i];
      }
      if (detail::wants(bi)) {
        detail::ensure_grad(*bi);
        for (int64_t i = 0; i < n2; ++i) bi->grad[i % bn2] -= oi->grad[i];
      }
    }));
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_suffix("mul", a, b);
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const int64_t n = a.numel(), bn = b.numel();
  for (int64_t i = 0; i < n; ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i % bn];
  if (Tape<T>* tape = detail::op_tape<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("mul", [ai, bi, oi] {
      detail::ensure_grad(*oi);
      const int64_t n2 = static_cast<int64_t>(oi->data.size());
      const int64_t bn2 = static_cast<int64_t>(bi->data.size());
      if (detail::wants(ai)) {
        detail::ensure_grad(*ai);
        for (int64_t i = 0; i < n2; ++i) ai->grad[i] += oi->grad[i] * bi->data[i % bn2];
      }
      if (detail::wants(bi)) {
        detail::ensure_grad(*bi);
        for (int64_t i = 0; i < n2; ++i) bi->grad[i % bn2] += oi->grad[i] * ai->data[i];
      }
    }));
  }
  return out;
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] * c;
  if (Tape<T>* tape = detail::op_tape<T>({&a})) {
    auto ai = a.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("scalar_mul", [ai, oi, c] {
      if (!detail::wants(ai)) return;
      detail::ensure_grad(*oi);
      detail::ensure_grad(*ai);
      for (size_t i = 0; i < oi->data.size(); ++i) ai->grad[i] += oi->grad[i] * c;
    }));
  }
  return out;
}

template <typename T>
Tensor<T> scalar_add(const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] + c;
  if (Tape<T>* tape = detail::op_tape<T>({&a})) {
    auto ai = a.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("scalar_add", [ai, oi] {
      if (!detail::wants(ai)) return;
      detail::ensure_grad(*oi);
      detail::ensure_grad(*ai);
      for (size_t i = 0; i < oi->data.size(); ++i) ai->grad[i] += oi->grad[i];
    }));
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise nonlinearities
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = std::exp(a.ptr()[i]);
  if (Tape<T>* tape = detail::op_tape<T>({&a})) {
    auto ai = a.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("exp", [ai, oi] {
      if (!detail::wants(ai)) return;
      detail::ensure_grad(*oi);
      detail::ensure_grad(*ai);
      for (size_t i = 0; i < oi->data.size(); ++i) ai->grad[i] += oi->grad[i] * oi->data[i];
    }));
  }
  return out;
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = std::log(a.ptr()[i]);
  if (Tape<T>* tape = detail::op_tape<T>({&a})) {
    auto ai = a.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("log", [ai, oi] {
      if (!detail::wants(ai)) return;
      detail::ensure_grad(*oi);
      detail::ensure_grad(*ai);
      for (size_t i = 0; i < oi->data.size(); ++i) ai->grad[i] += oi->grad[i] / ai->data[i];
    }));
  }
  return out;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = std::tanh(a.ptr()[i]);
  if (Tape<T>* tape = detail::op_tape<T>({&a})) {
    auto ai = a.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("tanh", [ai, oi] {
      if (!detail::wants(ai)) return;
      detail::ensure_grad(*oi);
      detail::ensure_grad(*ai);
      for (size_t i = 0; i < oi->data.size(); ++i)
        ai->grad[i] += oi->grad[i] * (T(1) - oi->data[i] * oi->data[i]);
    }));
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] > T(0) ? a.ptr()[i] : T(0);
  if (Tape<T>* tape = detail::op_tape<T>({&a})) {
    auto ai = a.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("relu", [ai, oi] {
      if (!detail::wants(ai)) return;
      detail::ensure_grad(*oi);
      detail::ensure_grad(*ai);
      for (size_t i = 0; i < oi->data.size(); ++i)
        if (ai->data[i] > T(0)) ai->grad[i] += oi->grad[i];
    }));
  }
  return out;
}

/// Logistic function, composed as 0.5 * (tanh(x/2) + 1) for stability.
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return scalar_mul(scalar_add(tanh(scalar_mul(a, T(0.5))), T(1)), T(0.5));
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

/// 2-D or batched 3-D matrix product: [M,K]x[K,N] or [B,M,K]x[B,K,N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (!((as.size() == 2 && bs.size() == 2) || (as.size() == 3 && bs.size() == 3)))
    throw ShapeError("matmul: expected 2-D or 3-D operands, got " + shape_str(as) + " and " + shape_str(bs));
  int64_t batch = as.size() == 3 ? as[0] : 1;
  int64_t m = as[as.size() - 2], k = as[as.size() - 1];
  int64_t k2 = bs[bs.size() - 2], n = bs[bs.size() - 1];
  if (k != k2 || (bs.size() == 3 && bs[0] != batch))
    throw ShapeError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs));

  std::vector<int64_t> oshape = as.size() == 3 ? std::vector<int64_t>{batch, m, n}
                                               : std::vector<int64_t>{m, n};
  Tensor<T> out = Tensor<T>::zeros(std::move(oshape));
  for (int64_t bidx = 0; bidx < batch; ++bidx) {
    detail::acc_mm(a.ptr() + bidx * m * k, b.ptr() + bidx * k * n, out.ptr() + bidx * m * n, m, k, n);
  }
  if (Tape<T>* tape = detail::op_tape<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("matmul", [ai, bi, oi, batch, m, k, n] {
      detail::ensure_grad(*oi);
      if (detail::wants(ai)) {
        detail::ensure_grad(*ai);
        for (int64_t bidx = 0; bidx < batch; ++bidx)
          detail::acc_mm_bt(oi->grad.data() + bidx * m * n, bi->data.data() + bidx * k * n,
                            ai->grad.data() + bidx * m * k, m, n, k);
      }
      if (detail::wants(bi)) {
        detail::ensure_grad(*bi);
        for (int64_t bidx = 0; bidx < batch; ++bidx)
          detail::acc_mm_at(ai->data.data() + bidx * m * k, oi->grad.data() + bidx * m * n,
                            bi->grad.data() + bidx * k * n, m, k, n);
      }
    }));
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int64_t> new_shape) {
  if (shape_numel(new_shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(new_shape));
  Tensor<T> out = Tensor<T>::from(std::move(new_shape), a.data());
  if (Tape<T>* tape = detail::op_tape<T>({&a})) {
    auto ai = a.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("reshape", [ai, oi] {
      if (!detail::wants(ai)) return;
      detail::ensure_grad(*oi);
      detail::ensure_grad(*ai);
      for (size_t i = 0; i < oi->data.size(); ++i) ai->grad[i] += oi->grad[i];
    }));
  }
  return out;
}

/// Permutes axes; perm defaults to the 2-D swap.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a, std::vector<int> perm = {}) {
  const auto& as = a.shape();
  if (perm.empty()) {
    if (as.size() != 2) throw ShapeError("transpose: default perm requires 2-D, got " + shape_str(as));
    perm = {1, 0};
  }
  if (perm.size() != as.size()) throw ShapeError("transpose: perm rank mismatch for " + shape_str(as));
  const int nd = static_cast<int>(as.size());
  std::vector<int64_t> oshape(as.size());
  for (int i = 0; i < nd; ++i) oshape[static_cast<size_t>(i)] = as[static_cast<size_t>(perm[static_cast<size_t>(i)])];

  std::vector<int64_t> in_strides(as.size(), 1);
  for (int i = nd - 2; i >= 0; --i)
    in_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(i) + 1] * as[static_cast<size_t>(i) + 1];
  // stride of output axis i in the input buffer
  std::vector<int64_t> map_strides(as.size());
  for (int i = 0; i < nd; ++i) map_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];

  Tensor<T> out = Tensor<T>::zeros(oshape);
  const T* src = a.ptr();
  T* dst = out.ptr();
  const int64_t total = a.numel();
  std::vector<int64_t> idx(as.size(), 0);
  int64_t src_off = 0;
  for (int64_t o = 0; o < total; ++o) {
    dst[o] = src[src_off];
    for (int axis = nd - 1; axis >= 0; --axis) {
      auto ax = static_cast<size_t>(axis);
      if (++idx[ax] < oshape[ax]) {
        src_off += map_strides[ax];
        break;
      }
      idx[ax] = 0;
      src_off -= map_strides[ax] * (oshape[ax] - 1);
    }
  }
  if (Tape<T>* tape = detail::op_tape<T>({&a})) {
    auto ai = a.impl(), oi = out.impl();
    auto strides = map_strides;
    auto os = oshape;
    out.set_recorded(tape, tape->record("transpose", [ai, oi, strides, os] {
      if (!detail::wants(ai)) return;
      detail::ensure_grad(*oi);
      detail::ensure_grad(*ai);
      const int nd2 = static_cast<int>(os.size());
      std::vector<int64_t> idx2(os.size(), 0);
      int64_t src_off2 = 0;
      const int64_t total2 = static_cast<int64_t>(oi->data.size());
      for (int64_t o = 0; o < total2; ++o) {
        ai->grad[src_off2] += oi->grad[o];
        for (int axis = nd2 - 1; axis >= 0; --axis) {
          auto ax = static_cast<size_t>(axis);
          if (++idx2[ax] < os[ax]) {
            src_off2 += strides[ax];
            break;
          }
          idx2[ax] = 0;
          src_off2 -= strides[ax] * (os[ax] - 1);
        }
      }
    }));
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  auto base = parts[0].shape();
  if (axis < 0) axis += static_cast<int>(base.size());
  int64_t total_axis = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != base.size()) throw ShapeError("concat: rank mismatch");
    for (size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != axis && s[i] != base[i])
        throw ShapeError("concat: shape mismatch " + shape_str(base) + " vs " + shape_str(s));
    }
    total_axis += s[static_cast<size_t>(axis)];
  }
  std::vector<int64_t> oshape = base;
  oshape[static_cast<size_t>(axis)] = total_axis;
  Tensor<T> out = Tensor<T>::zeros(oshape);

  auto view = detail::axis_view(oshape, axis);
  int64_t offset = 0;
  for (const auto& p : parts) {
    int64_t pn = p.shape()[static_cast<size_t>(axis)];
    const T* src = p.ptr();
    for (int64_t o = 0; o < view.outer; ++o) {
      T* dst = out.ptr() + (o * view.n + offset) * view.inner;
      const T* s = src + o * pn * view.inner;
      std::copy(s, s + pn * view.inner, dst);
    }
    offset += pn;
  }

  std::vector<const Tensor<T>*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  Tape<T>* tape = nullptr;
  for (const auto& p : parts) {
    if (p.tape()) {
      if (tape && tape != p.tape()) throw ShapeError("concat spans two tapes");
      tape = p.tape();
    }
  }
  if (tape && tape->recording()) {
    std::vector<std::shared_ptr<TensorImpl<T>>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    auto oi = out.impl();
    out.set_recorded(tape, tape->record("concat", [impls, oi, view, axis] {
      detail::ensure_grad(*oi);
      int64_t off = 0;
      for (auto& pi : impls) {
        // length of this part along the concat axis
        int64_t pn = static_cast<int64_t>(pi->data.size()) / (view.outer * view.inner);
        if (detail::wants(pi)) {
          detail::ensure_grad(*pi);
          for (int64_t o = 0; o < view.outer; ++o) {
            const T* g = oi->grad.data() + (o * view.n + off) * view.inner;
            T* dst = pi->grad.data() + o * pn * view.inner;
            for (int64_t i = 0; i < pn * view.inner; ++i) dst[i] += g[i];
          }
        }
        off += pn;
      }
    }));
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions and normalizations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& a, int axis) {
  auto view = detail::axis_view(a.shape(), axis);
  if (axis < 0) axis += a.ndim();
  std::vector<int64_t> oshape;
  for (int i = 0; i < a.ndim(); ++i)
    if (i != axis) oshape.push_back(a.dim(i));
  if (oshape.empty()) oshape.push_back(1);
  Tensor<T> out = Tensor<T>::zeros(oshape);
  const T* src = a.ptr();
  T* dst = out.ptr();
  for (int64_t o = 0; o < view.outer; ++o)
    for (int64_t j = 0; j < view.n; ++j)
      for (int64_t i = 0; i < view.inner; ++i)
        dst[o * view.inner + i] += src[(o * view.n + j) * view.inner + i];
  if (Tape<T>* tape = detail::op_tape<T>({&a})) {
    auto ai = a.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("reduce_sum", [ai, oi, view] {
      if (!detail::wants(ai)) return;
      detail::ensure_grad(*oi);
      detail::ensure_grad(*ai);
      for (int64_t o = 0; o < view.outer; ++o)
        for (int64_t j = 0; j < view.n; ++j)
          for (int64_t i = 0; i < view.inner; ++i)
            ai->grad[(o * view.n + j) * view.inner + i] += oi->grad[o * view.inner + i];
    }));
  }
  return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& a, int axis) {
  auto view = detail::axis_view(a.shape(), axis);
  return scalar_mul(reduce_sum(a, axis), T(1) / static_cast<T>(view.n));
}

template <typename T>
Tensor<T> reduce_sum_all(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros({1});
  T s = T(0);
  for (int64_t i = 0; i < a.numel(); ++i) s += a.ptr()[i];
  out.ptr()[0] = s;
  if (Tape<T>* tape = detail::op_tape<T>({&a})) {
    auto ai = a.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("reduce_sum_all", [ai, oi] {
      if (!detail::wants(ai)) return;
      detail::ensure_grad(*oi);
      detail::ensure_grad(*ai);
      for (size_t i = 0; i < ai->data.size(); ++i) ai->grad[i] += oi->grad[0];
    }));
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  auto view = detail::axis_view(a.shape(), axis);
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* src = a.ptr();
  T* dst = out.ptr();
  for (int64_t o = 0; o < view.outer; ++o) {
    for (int64_t i = 0; i < view.inner; ++i) {
      const int64_t base = o * view.n * view.inner + i;
      T mx = src[base];
      for (int64_t j = 1; j < view.n; ++j) mx = std::max(mx, src[base + j * view.inner]);
      T z = T(0);
      for (int64_t j = 0; j < view.n; ++j) {
        T e = std::exp(src[base + j * view.inner] - mx);
        dst[base + j * view.inner] = e;
        z += e;
      }
      for (int64_t j = 0; j < view.n; ++j) dst[base + j * view.inner] /= z;
    }
  }
  if (Tape<T>* tape = detail::op_tape<T>({&a})) {
    auto ai = a.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("softmax", [ai, oi, view] {
      if (!detail::wants(ai)) return;
      detail::ensure_grad(*oi);
      detail::ensure_grad(*ai);
      for (int64_t o = 0; o < view.outer; ++o) {
        for (int64_t i = 0; i < view.inner; ++i) {
          const int64_t base = o * view.n * view.inner + i;
          T dot = T(0);
          for (int64_t j = 0; j < view.n; ++j)
            dot += oi->grad[base + j * view.inner] * oi->data[base + j * view.inner];
          for (int64_t j = 0; j < view.n; ++j) {
            const int64_t idx = base + j * view.inner;
            ai->grad[idx] += oi->data[idx] * (oi->grad[idx] - dot);
          }
        }
      }
    }));
  }
  return out;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a, int axis) {
  auto view = detail::axis_view(a.shape(), axis);
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* src = a.ptr();
  T* dst = out.ptr();
  for (int64_t o = 0; o < view.outer; ++o) {
    for (int64_t i = 0; i < view.inner; ++i) {
      const int64_t base = o * view.n * view.inner + i;
      T mx = src[base];
      for (int64_t j = 1; j < view.n; ++j) mx = std::max(mx, src[base + j * view.inner]);
      T z = T(0);
      for (int64_t j = 0; j < view.n; ++j) z += std::exp(src[base + j * view.inner] - mx);
      T lz = mx + std::log(z);
      for (int64_t j = 0; j < view.n; ++j) dst[base + j * view.inner] = src[base + j * view.inner] - lz;
    }
  }
  if (Tape<T>* tape = detail::op_tape<T>({&a})) {
    auto ai = a.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("log_softmax", [ai, oi, view] {
      if (!detail::wants(ai)) return;
      detail::ensure_grad(*oi);
      detail::ensure_grad(*ai);
      for (int64_t o = 0; o < view.outer; ++o) {
        for (int64_t i = 0; i < view.inner; ++i) {
          const int64_t base = o * view.n * view.inner + i;
          T gsum = T(0);
          for (int64_t j = 0; j < view.n; ++j) gsum += oi->grad[base + j * view.inner];
          for (int64_t j = 0; j < view.n; ++j) {
            const int64_t idx = base + j * view.inner;
            ai->grad[idx] += oi->grad[idx] - std::exp(oi->data[idx]) * gsum;
          }
        }
      }
    }));
  }
  return out;
}

/// Normalizes over the last axis with learned gain and bias; population
/// variance with epsilon 1e-5 inside the square root.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gain, const Tensor<T>& bias) {
  const T eps = static_cast<T>(1e-5);
  const auto& as = a.shape();
  const int64_t d = as.back();
  if (gain.numel() != d || bias.numel() != d)
    throw ShapeError("layer_norm: gain/bias length must match last axis of " + shape_str(as));
  const int64_t rows = a.numel() / d;
  Tensor<T> out = Tensor<T>::zeros(as);
  // saved for backward
  auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(a.numel()));
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  const T* src = a.ptr();
  T* dst = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = src + r * d;
    T mean = T(0);
    for (int64_t j = 0; j < d; ++j) mean += x[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (int64_t j = 0; j < d; ++j) {
      T dv = x[j] - mean;
      var += dv * dv;
    }
    var /= static_cast<T>(d);
    T istd = T(1) / std::sqrt(var + eps);
    (*inv_std)[static_cast<size_t>(r)] = istd;
    for (int64_t j = 0; j < d; ++j) {
      T xh = (x[j] - mean) * istd;
      (*xhat)[static_cast<size_t>(r * d + j)] = xh;
      dst[r * d + j] = xh * gain.ptr()[j] + bias.ptr()[j];
    }
  }
  if (Tape<T>* tape = detail::op_tape<T>({&a, &gain, &bias})) {
    auto ai = a.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("layer_norm", [ai, gi, bi, oi, xhat, inv_std, rows, d] {
      detail::ensure_grad(*oi);
      if (detail::wants(gi)) {
        detail::ensure_grad(*gi);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < d; ++j)
            gi->grad[static_cast<size_t>(j)] +=
                oi->grad[static_cast<size_t>(r * d + j)] * (*xhat)[static_cast<size_t>(r * d + j)];
      }
      if (detail::wants(bi)) {
        detail::ensure_grad(*bi);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < d; ++j)
            bi->grad[static_cast<size_t>(j)] += oi->grad[static_cast<size_t>(r * d + j)];
      }
      if (detail::wants(ai)) {
        detail::ensure_grad(*ai);
        for (int64_t r = 0; r < rows; ++r) {
          T istd = (*inv_std)[static_cast<size_t>(r)];
          T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
          for (int64_t j = 0; j < d; ++j) {
            const size_t idx = static_cast<size_t>(r * d + j);
            T dxhat = oi->grad[idx] * gi->data[static_cast<size_t>(j)];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * (*xhat)[idx];
          }
          for (int64_t j = 0; j < d; ++j) {
            const size_t idx = static_cast<size_t>(r * d + j);
            T dxhat = oi->grad[idx] * gi->data[static_cast<size_t>(j)];
            ai->grad[idx] += istd * (dxhat - sum_dxhat / static_cast<T>(d) -
                                     (*xhat)[idx] * sum_dxhat_xhat / static_cast<T>(d));
          }
        }
      }
    }));
  }
  return out;
}

// ---------------------------------------------------------------------------
// gather / scatter
// ---------------------------------------------------------------------------

/// Gathers rows of a [V, d] table: out[i, :] = table[ids[i], :].
template <typename T>
Tensor<T> embedding_gather(const Tensor<T>& table, const std::vector<int32_t>& ids) {
  if (table.ndim() != 2) throw ShapeError("embedding_gather: table must be 2-D, got " + shape_str(table.shape()));
  const int64_t v = table.dim(0), d = table.dim(1);
  for (int32_t id : ids)
    if (id < 0 || id >= v)
      throw ShapeError("embedding_gather: id " + std::to_string(id) + " out of range for table " +
                       shape_str(table.shape()));
  Tensor<T> out = Tensor<T>::zeros({static_cast<int64_t>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy(table.ptr() + ids[i] * d, table.ptr() + (ids[i] + 1) * d, out.ptr() + static_cast<int64_t>(i) * d);
  if (Tape<T>* tape = detail::op_tape<T>({&table})) {
    auto ti = table.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("embedding_gather", [ti, oi, ids, d] {
      if (!detail::wants(ti)) return;
      detail::ensure_grad(*oi);
      detail::ensure_grad(*ti);
      for (size_t i = 0; i < ids.size(); ++i) {
        const T* g = oi->grad.data() + static_cast<int64_t>(i) * d;
        T* dst = ti->grad.data() + ids[i] * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
      }
    }));
  }
  return out;
}

/// Scatter-accumulate along the last axis:
/// out = base; out[..., ids[i]] += values[..., i].
template <typename T>
Tensor<T> index_add(const Tensor<T>& base, const std::vector<int32_t>& ids, const Tensor<T>& values) {
  const auto& bs = base.shape();
  const auto& vs = values.shape();
  if (bs.size() != vs.size()) throw ShapeError("index_add: rank mismatch");
  for (size_t i = 0; i + 1 < bs.size(); ++i)
    if (bs[i] != vs[i]) throw ShapeError("index_add: leading dims differ: " + shape_str(bs) + " vs " + shape_str(vs));
  const int64_t n = bs.back();
  const int64_t l = vs.back();
  if (l != static_cast<int64_t>(ids.size())) throw ShapeError("index_add: ids length mismatch");
  for (int32_t id : ids)
    if (id < 0 || id >= n) throw ShapeError("index_add: id " + std::to_string(id) + " out of range");
  const int64_t rows = base.numel() / n;
  Tensor<T> out = Tensor<T>::from(bs, base.data());
  for (int64_t r = 0; r < rows; ++r) {
    T* orow = out.ptr() + r * n;
    const T* vrow = values.ptr() + r * l;
    for (int64_t i = 0; i < l; ++i) orow[ids[static_cast<size_t>(i)]] += vrow[i];
  }
  if (Tape<T>* tape = detail::op_tape<T>({&base, &values})) {
    auto bi = base.impl(), vi = values.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("index_add", [bi, vi, oi, ids, rows, n, l] {
      detail::ensure_grad(*oi);
      if (detail::wants(bi)) {
        detail::ensure_grad(*bi);
        for (size_t i = 0; i < oi->grad.size(); ++i) bi->grad[i] += oi->grad[i];
      }
      if (detail::wants(vi)) {
        detail::ensure_grad(*vi);
        for (int64_t r = 0; r < rows; ++r) {
          const T* g = oi->grad.data() + r * n;
          T* vg = vi->grad.data() + r * l;
          for (int64_t i = 0; i < l; ++i) vg[i] += g[ids[static_cast<size_t>(i)]];
        }
      }
    }));
  }
  return out;
}

// ---------------------------------------------------------------------------
// masking and dropout
// ---------------------------------------------------------------------------

/// Writes `value` where the mask flag is set; mask shape must be a suffix of
/// the input shape (broadcast over leading dims).
template <typename T>
Tensor<T> masked_fill(const Tensor<T>& a, const BoolMask& mask, T value) {
  const int64_t mn = shape_numel(mask.shape);
  if (mn != static_cast<int64_t>(mask.flags.size()))
    throw ShapeError("masked_fill: mask flags do not match mask shape");
  const auto& as = a.shape();
  bool suffix_ok = mask.shape.size() <= as.size();
  if (suffix_ok) {
    for (size_t i = 0; i < mask.shape.size(); ++i)
      if (mask.shape[mask.shape.size() - 1 - i] != as[as.size() - 1 - i]) suffix_ok = false;
  }
  if (!suffix_ok)
    throw ShapeError("masked_fill: mask " + shape_str(mask.shape) + " does not broadcast over " + shape_str(as));
  Tensor<T> out = Tensor<T>::from(as, a.data());
  for (int64_t i = 0; i < a.numel(); ++i)
    if (mask.flags[static_cast<size_t>(i % mn)]) out.ptr()[i] = value;
  if (Tape<T>* tape = detail::op_tape<T>({&a})) {
    auto ai = a.impl(), oi = out.impl();
    auto flags = mask.flags;
    out.set_recorded(tape, tape->record("masked_fill", [ai, oi, flags, mn] {
      if (!detail::wants(ai)) return;
      detail::ensure_grad(*oi);
      detail::ensure_grad(*ai);
      for (size_t i = 0; i < oi->data.size(); ++i)
        if (!flags[i % static_cast<size_t>(mn)]) ai->grad[i] += oi->grad[i];
    }));
  }
  return out;
}

/// Inverted dropout: zeroes elements with probability `rate` and scales
/// survivors by 1/(1-rate) during training; identity in evaluation.
template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double rate, Rng& rng, bool train) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
  if (!train || rate == 0.0) return a;
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  auto keep = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(a.numel()));
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) {
    bool k = !rng.bernoulli(rate);
    (*keep)[static_cast<size_t>(i)] = k;
    out.ptr()[i] = k ? a.ptr()[i] * scale : T(0);
  }
  if (Tape<T>* tape = detail::op_tape<T>({&a})) {
    auto ai = a.impl(), oi = out.impl();
    out.set_recorded(tape, tape->record("dropout", [ai, oi, keep, scale] {
      if (!detail::wants(ai)) return;
      detail::ensure_grad(*oi);
      detail::ensure_grad(*ai);
      for (size_t i = 0; i < oi->data.size(); ++i)
        if ((*keep)[i]) ai->grad[i] += oi->grad[i] * scale;
    }));
  }
  return out;
}

}  // namespace poda
