#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "poda/checkpoint.hpp"
#include "poda/evaluation.hpp"
#include "poda/model.hpp"
#include "poda/noising.hpp"
#include "poda/training.hpp"

namespace poda {

/// One teacher-forced training example. `mask` has len(target)+1 entries:
/// one per target token plus the terminating EOS position, which is always
/// counted (the decoder has to learn where sequences end).
struct TrainItem {
  TokenSequence source;
  TokenSequence target;
  std::vector<uint8_t> mask;

  int64_t padded_len() const {
    return std::max<int64_t>(static_cast<int64_t>(source.size()),
                             static_cast<int64_t>(target.size()) + 1);
  }
};

struct TrainOptions {
  double learning_rate = 2e-3;
  double momentum = 0.99;
  double grad_clip = 2.0;
  double ema_decay = 0.9995;
  double lr_floor = 1e-4;
  int64_t warmup_steps = 0;  // linear lr ramp over the first N iterations
  int patience = 1;
  int64_t token_budget = 3000;
  int64_t max_iterations = 20000;  // 0 = no iteration cap
  int64_t max_epochs = 0;          // 0 = until the schedule stops
  int64_t checkpoint_every = 0;    // iterations; 0 = final checkpoint only
  bool loss_sum_mode = false;      // strict summed loss instead of masked mean
  bool use_ema_for_validation = true;
  uint64_t seed = 42;
  std::string out_dir;  // empty: keep everything in memory, write no files
};

struct EpochLog {
  int64_t epoch = 0;
  int64_t iteration = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_ppl = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<double> iteration_losses;  // one entry per optimizer step
  std::vector<EpochLog> epochs;
  int64_t skipped_steps = 0;
  std::string stop_reason;
};

/// Single-device training loop: token-budget batches, masked NLL, gradient
/// clipping, NAG updates, EMA tracking, and the validation-driven
/// learning-rate schedule. All randomness derives from the root seed plus
/// (epoch, iteration) counters, so a run can be checkpointed and resumed
/// bit-exactly.
class Trainer {
 public:
  /// Produces the epoch's training items. Pretraining providers re-noise per
  /// epoch; fine-tuning providers return a fixed list.
  using DataFn = std::function<std::vector<TrainItem>(int64_t epoch)>;

  Trainer(TransformerPg<Real> model, const TrainOptions& opts, uint64_t vocab_hash);

  /// Resumes from a snapshot; `opts` must describe the same run.
  static Trainer resume(const Checkpoint& ckpt, const TrainOptions& opts);

  TrainResult run(const DataFn& train_data, const std::vector<TrainItem>& val_data);

  /// Masked mean NLL over a dataset with the current (or EMA) weights.
  double evaluate_loss(const std::vector<TrainItem>& items, bool use_ema);

  Checkpoint make_checkpoint() const;
  const TransformerPg<Real>& model() const { return model_; }
  TransformerPg<Real>& model() { return model_; }
  const EmaState<Real>& ema() const { return ema_; }
  int64_t iteration() const { return iteration_; }
  int64_t epoch() const { return epoch_; }
  TrainOptions& options() { return opts_; }
  double learning_rate() const { return opt_.learning_rate; }
  void set_learning_rate(double lr) { opt_.learning_rate = lr; }

  /// Detached copy of the current (or EMA) weights, safe to decode with while
  /// training continues.
  TransformerPg<Real> eval_model(bool use_ema) const;

 private:
  double train_batch(const std::vector<TrainItem>& items, const std::vector<int32_t>& batch,
                     MaskedLossStats& stats);
  void swap_ema_weights();
  void write_log_line(const EpochLog& log);

  TransformerPg<Real> model_;
  TrainOptions opts_;
  uint64_t vocab_hash_ = 0;
  Tape<Real> tape_;
  OptimizerState<Real> opt_;
  EmaState<Real> ema_;
  LrSchedule schedule_;
  int64_t iteration_ = 0;
  int64_t epoch_ = 0;
  int64_t batch_in_epoch_ = 0;
  double epoch_loss_sum_ = 0.0;
  int64_t epoch_batches_ = 0;
  int64_t skipped_steps_ = 0;
};

// Seed-stream ids: every subsystem draws from Rng(root_seed ^ kSeed*, n) so
// streams are independent and reproducible in isolation.
inline constexpr uint64_t kSeedInit = 0x11;
inline constexpr uint64_t kSeedNoise = 0x22;
inline constexpr uint64_t kSeedBatch = 0x33;
inline constexpr uint64_t kSeedDropout = 0x44;
inline constexpr uint64_t kSeedValNoise = 0x55;

/// Fine-tuning items: plain (source, target) pairs, all-ones mask.
std::vector<TrainItem> make_pair_items(
    const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>& pairs,
    const Vocabulary& vocab);

/// Denoising items for one epoch: each clean segment is noised with a stream
/// derived from (seed, epoch, index), so epochs see fresh corruption and any
/// (epoch, index) pair is reproducible on its own.
std::vector<TrainItem> make_denoising_items(const std::vector<std::vector<std::string>>& segments,
                                            const NoiseConfig& noise, const Vocabulary& vocab,
                                            const std::vector<double>& unigram, uint64_t seed,
                                            int64_t epoch);

Trainer::DataFn make_denoising_provider(std::vector<std::vector<std::string>> segments,
                                        const NoiseConfig& noise, const Vocabulary& vocab,
                                        uint64_t seed);

/// Teacher-forced perplexity items for a dataset under the given model.
std::vector<PerplexityItem> perplexity_items(const TransformerPg<Real>& model,
                                             const std::vector<TrainItem>& items);

}  // namespace poda
