#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "poda/model.hpp"
#include "poda/ops.hpp"
#include "poda/rng.hpp"

namespace poda {

struct MaskedLossStats {
  int64_t masked_positions = 0;
  int64_t all_zero_mask_warnings = 0;
};

/// Masked negative log-likelihood summed over masked positions:
/// sum_i mask(i) * -logprob[i][label_i]. Fine-tuning passes an all-ones mask.
template <typename T>
Tensor<T> masked_nll_sum(const Tensor<T>& logprobs, const std::vector<int32_t>& labels,
                         const std::vector<uint8_t>& mask, MaskedLossStats* stats = nullptr) {
  const int64_t rows = logprobs.dim(0);
  const int64_t cols = logprobs.dim(1);
  if (rows != static_cast<int64_t>(labels.size()) || rows != static_cast<int64_t>(mask.size()))
    throw ShapeError("masked_nll: rows " + std::to_string(rows) + " vs labels " +
                     std::to_string(labels.size()) + " vs mask " + std::to_string(mask.size()));
  int64_t count = 0;
  // -mask weights as a constant matrix; the product has exactly zero gradient
  // at every unmasked row.
  Tensor<T> w = Tensor<T>::zeros({rows, cols});
  for (int64_t i = 0; i < rows; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    int32_t label = labels[static_cast<size_t>(i)];
    if (label < 0 || label >= cols) throw ShapeError("masked_nll: label out of range");
    w.ptr()[i * cols + label] = T(-1);
    ++count;
  }
  if (stats) {
    stats->masked_positions += count;
    if (count == 0) stats->all_zero_mask_warnings += 1;
  }
  return reduce_sum_all(mul(logprobs, w));
}

/// Masked NLL divided by max(1, #masked positions).
template <typename T>
Tensor<T> masked_nll_loss(const Tensor<T>& logprobs, const std::vector<int32_t>& labels,
                          const std::vector<uint8_t>& mask, MaskedLossStats* stats = nullptr) {
  MaskedLossStats local;
  Tensor<T> s = masked_nll_sum(logprobs, labels, mask, &local);
  if (stats) {
    stats->masked_positions += local.masked_positions;
    stats->all_zero_mask_warnings += local.all_zero_mask_warnings;
  }
  return scalar_mul(s, T(1) / static_cast<T>(std::max<int64_t>(1, local.masked_positions)));
}

struct ClipResult {
  double norm = 0.0;
  double scale = 1.0;
  bool skipped = false;  // non-finite norm: gradients zeroed, step skipped
};

/// Scales all gradients so the global L2 norm is at most max_norm.
template <typename T>
ClipResult clip_grad_norm(ParameterSet<T>& params, double max_norm) {
  double sq = 0.0;
  for (auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (T g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  ClipResult r;
  r.norm = std::sqrt(sq);
  if (!std::isfinite(r.norm)) {
    for (auto& [name, t] : params) t.zero_grad();
    r.skipped = true;
    r.scale = 0.0;
    return r;
  }
  if (r.norm > max_norm) {
    r.scale = max_norm / r.norm;
    for (auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      for (T& g : t.grad()) g = static_cast<T>(g * r.scale);
    }
  }
  return r;
}

/// Nesterov accelerated gradient state. Velocities mirror the parameter list
/// by position.
template <typename T>
struct OptimizerState {
  double learning_rate = 2e-3;
  double momentum = 0.99;
  std::vector<Tensor<T>> velocity;

  static OptimizerState init(const ParameterSet<T>& params, double lr, double momentum) {
    OptimizerState s;
    s.learning_rate = lr;
    s.momentum = momentum;
    for (const auto& [name, t] : params) s.velocity.push_back(Tensor<T>::zeros(t.shape()));
    return s;
  }
};

/// One NAG update: v <- mu*v - lr*g; param <- param + mu*v - lr*g.
/// `lr_scale` implements warmup ramps without disturbing the scheduled base
/// rate. Throws if any parameter becomes non-finite.
template <typename T>
void nag_step(ParameterSet<T>& params, OptimizerState<T>& state, double lr_scale = 1.0) {
  size_t idx = 0;
  const T lr = static_cast<T>(state.learning_rate * lr_scale);
  const T mu = static_cast<T>(state.momentum);
  for (auto& [name, t] : params) {
    Tensor<T>& vel = state.velocity[idx++];
    if (!t.has_grad()) continue;
    T* v = vel.ptr();
    T* p = t.ptr();
    const std::vector<T>& g = t.grad();
    bool finite = true;
    for (int64_t i = 0; i < t.numel(); ++i) {
      v[i] = mu * v[i] - lr * g[static_cast<size_t>(i)];
      p[i] += mu * v[i] - lr * g[static_cast<size_t>(i)];
      finite &= std::isfinite(static_cast<double>(p[i]));
    }
    if (!finite)
      throw Error(ExitCode::failure, "nag_step: non-finite value in parameter " + name +
                                         "; training aborted (checkpoints preserved)");
  }
}

/// Exponential moving average of parameters:
/// shadow <- decay*shadow + (1-decay)*param.
template <typename T>
struct EmaState {
  double decay = 0.9995;
  std::vector<Tensor<T>> shadow;

  static EmaState init(const ParameterSet<T>& params, double decay) {
    EmaState s;
    s.decay = decay;
    for (const auto& [name, t] : params) s.shadow.push_back(t.clone_detached());
    return s;
  }
};

template <typename T>
void ema_update(EmaState<T>& ema, const ParameterSet<T>& params) {
  size_t idx = 0;
  const T d = static_cast<T>(ema.decay);
  for (const auto& [name, t] : params) {
    Tensor<T>& s = ema.shadow[idx++];
    if (s.numel() != t.numel()) throw ShapeError("ema_update: shadow shape mismatch for " + name);
    T* sp = s.ptr();
    const T* pp = t.ptr();
    for (int64_t i = 0; i < t.numel(); ++i) sp[i] = d * sp[i] + (T(1) - d) * pp[i];
  }
}

enum class LrAction { keep, halve, stop };

/// Validation-driven schedule: halve the learning rate after `patience`
/// epochs without strict improvement; stop once the rate falls below the
/// floor. The learning-rate sequence is non-increasing by construction.
struct LrSchedule {
  double best_val_loss = std::numeric_limits<double>::infinity();
  double lr_floor = 1e-4;
  int patience = 1;
  int bad_epochs = 0;
  int halvings = 0;

  /// Feeds one epoch's validation loss; the caller applies the action to the
  /// optimizer's learning rate.
  LrAction update(double val_loss) {
    if (val_loss < best_val_loss) {
      best_val_loss = val_loss;
      bad_epochs = 0;
      return LrAction::keep;
    }
    if (++bad_epochs >= patience) {
      bad_epochs = 0;
      ++halvings;
      return LrAction::halve;
    }
    return LrAction::keep;
  }
};

/// Applies a schedule decision; returns stop when the halved rate drops
/// below the floor.
template <typename T>
LrAction apply_lr_action(LrAction action, OptimizerState<T>& opt, const LrSchedule& sched) {
  if (action == LrAction::halve) {
    opt.learning_rate *= 0.5;
    if (opt.learning_rate < sched.lr_floor) return LrAction::stop;
  }
  return action;
}

/// Greedy token-budget batching over padded lengths: examples are shuffled,
/// stably sorted by length, and packed so that
/// (#examples in batch) * (max length in batch) <= token_budget.
/// Returns batches of example indices; batch order is shuffled per epoch.
inline std::vector<std::vector<int32_t>> make_batches(const std::vector<int64_t>& lengths,
                                                      int64_t token_budget, Rng& rng) {
  std::vector<int32_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::stable_sort(order.begin(), order.end(),
                   [&](int32_t a, int32_t b) { return lengths[static_cast<size_t>(a)] < lengths[static_cast<size_t>(b)]; });

  std::vector<std::vector<int32_t>> batches;
  std::vector<int32_t> cur;
  int64_t cur_max = 0;
  for (int32_t idx : order) {
    int64_t len = lengths[static_cast<size_t>(idx)];
    if (len > token_budget)
      throw ConfigError("make_batches: example " + std::to_string(idx) + " has " + std::to_string(len) +
                        " tokens, exceeding the budget of " + std::to_string(token_budget));
    int64_t new_max = std::max(cur_max, len);
    if (!cur.empty() && new_max * static_cast<int64_t>(cur.size() + 1) > token_budget) {
      batches.push_back(std::move(cur));
      cur.clear();
      cur_max = 0;
      new_max = len;
    }
    cur.push_back(idx);
    cur_max = new_max;
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  rng.shuffle(batches);
  return batches;
}

/// Elementwise mean of per-shard gradient sets (the synchronous
/// data-parallel contract; executed single-device here).
template <typename T>
std::vector<Tensor<T>> average_gradients(const std::vector<std::vector<Tensor<T>>>& shards) {
  if (shards.empty()) throw ShapeError("average_gradients: no shards");
  const size_t n = shards[0].size();
  for (const auto& s : shards)
    if (s.size() != n) throw ShapeError("average_gradients: shard parameter counts differ");
  std::vector<Tensor<T>> out;
  out.reserve(n);
  for (size_t p = 0; p < n; ++p) {
    const auto& first = shards[0][p];
    for (const auto& s : shards)
      if (s[p].shape() != first.shape())
        throw ShapeError("average_gradients: shape mismatch across shards at parameter " + std::to_string(p));
    Tensor<T> acc = Tensor<T>::zeros(first.shape());
    for (const auto& s : shards)
      for (int64_t i = 0; i < acc.numel(); ++i) acc.ptr()[i] += s[p].ptr()[i];
    const T inv = T(1) / static_cast<T>(shards.size());
    for (int64_t i = 0; i < acc.numel(); ++i) acc.ptr()[i] *= inv;
    out.push_back(std::move(acc));
  }
  return out;
}

}  // namespace poda
