#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "poda/model.hpp"
#include "poda/training.hpp"

namespace poda {

using Real = float;

/// Everything needed to reproduce a training run from a given iteration.
/// Serialized as a little-endian binary container: magic "PODA", a u32
/// format version, then length-prefixed named sections. Serialization is
/// deterministic, so identical states produce identical bytes.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  uint64_t iteration = 0;
  uint64_t epoch = 0;
  uint64_t batch_in_epoch = 0;
  uint64_t root_seed = 0;
  double epoch_train_loss_sum = 0.0;
  uint64_t epoch_train_batches = 0;

  ModelConfig model_config;
  uint64_t vocab_hash = 0;

  std::vector<std::pair<std::string, Tensor<Real>>> params;
  double ema_decay = 0.9995;
  std::vector<std::pair<std::string, Tensor<Real>>> ema;
  double learning_rate = 2e-3;
  double momentum = 0.99;
  std::vector<std::pair<std::string, Tensor<Real>>> velocity;
  LrSchedule schedule;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Copies live training state into a serializable snapshot.
Checkpoint snapshot(const TransformerPg<Real>& model, const OptimizerState<Real>& opt,
                    const EmaState<Real>& ema, const LrSchedule& schedule, uint64_t vocab_hash);

/// Rebuilds a model (and optionally optimizer/EMA state) from a snapshot.
TransformerPg<Real> restore_model(const Checkpoint& ckpt, bool use_ema_weights);

}  // namespace poda
