#include "poda/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "poda/error.hpp"

namespace poda {

Trainer::Trainer(TransformerPg<Real> model, const TrainOptions& opts, uint64_t vocab_hash)
    : model_(std::move(model)),
      opts_(opts),
      vocab_hash_(vocab_hash),
      opt_(OptimizerState<Real>::init(model_.params, opts.learning_rate, opts.momentum)),
      ema_(EmaState<Real>::init(model_.params, opts.ema_decay)) {
  schedule_.lr_floor = opts.lr_floor;
  schedule_.patience = opts.patience;
  model_.params.attach(tape_);
}

Trainer Trainer::resume(const Checkpoint& ckpt, const TrainOptions& opts) {
  if (opts.seed != ckpt.root_seed)
    throw ConfigError("resume: run seed " + std::to_string(opts.seed) +
                      " differs from checkpoint seed " + std::to_string(ckpt.root_seed));
  Trainer t(restore_model(ckpt, /*use_ema_weights=*/false), opts, ckpt.vocab_hash);
  t.opt_.learning_rate = ckpt.learning_rate;
  t.opt_.momentum = ckpt.momentum;
  if (ckpt.velocity.size() != t.opt_.velocity.size() || ckpt.ema.size() != t.ema_.shadow.size())
    throw CheckpointError("resume: optimizer/EMA sections do not match the parameter count");
  size_t idx = 0;
  for (auto& v : t.opt_.velocity) {
    const auto& [name, src] = ckpt.velocity[idx++];
    if (src.shape() != v.shape())
      throw CheckpointError("resume: velocity shape mismatch for parameter '" + name + "'");
    v.data() = src.data();
  }
  idx = 0;
  for (auto& s : t.ema_.shadow) {
    const auto& [name, src] = ckpt.ema[idx++];
    if (src.shape() != s.shape())
      throw CheckpointError("resume: EMA shape mismatch for parameter '" + name + "'");
    s.data() = src.data();
  }
  t.ema_.decay = ckpt.ema_decay;
  t.schedule_ = ckpt.schedule;
  t.iteration_ = static_cast<int64_t>(ckpt.iteration);
  t.epoch_ = static_cast<int64_t>(ckpt.epoch);
  t.batch_in_epoch_ = static_cast<int64_t>(ckpt.batch_in_epoch);
  t.epoch_loss_sum_ = ckpt.epoch_train_loss_sum;
  t.epoch_batches_ = static_cast<int64_t>(ckpt.epoch_train_batches);
  return t;
}

TransformerPg<Real> Trainer::eval_model(bool use_ema) const {
  return restore_model(make_checkpoint(), use_ema);
}

Checkpoint Trainer::make_checkpoint() const {
  Checkpoint c = snapshot(model_, opt_, ema_, schedule_, vocab_hash_);
  c.iteration = static_cast<uint64_t>(iteration_);
  c.epoch = static_cast<uint64_t>(epoch_);
  c.batch_in_epoch = static_cast<uint64_t>(batch_in_epoch_);
  c.root_seed = opts_.seed;
  c.epoch_train_loss_sum = epoch_loss_sum_;
  c.epoch_train_batches = static_cast<uint64_t>(epoch_batches_);
  return c;
}

double Trainer::train_batch(const std::vector<TrainItem>& items, const std::vector<int32_t>& batch,
                            MaskedLossStats& stats) {
  tape_.clear();
  model_.params.zero_grad();
  Rng dropout_rng(opts_.seed ^ kSeedDropout, static_cast<uint64_t>(iteration_));

  Tensor<Real> total;
  int64_t mask_count = 0;
  for (int32_t idx : batch) {
    const TrainItem& item = items[static_cast<size_t>(idx)];
    Tensor<Real> logp = model_.forward_logprobs(item.source, item.target, Mode::train, &dropout_rng);
    MaskedLossStats local;
    Tensor<Real> item_sum =
        masked_nll_sum(logp, TransformerPg<Real>::labels(item.target), item.mask, &local);
    stats.masked_positions += local.masked_positions;
    stats.all_zero_mask_warnings += local.all_zero_mask_warnings;
    mask_count += local.masked_positions;
    total = total.defined() ? add(total, item_sum) : item_sum;
  }
  Tensor<Real> loss =
      opts_.loss_sum_mode
          ? scalar_mul(total, Real(1) / static_cast<Real>(batch.size()))
          : scalar_mul(total, Real(1) / static_cast<Real>(std::max<int64_t>(1, mask_count)));

  backward(loss);
  ClipResult clip = clip_grad_norm(model_.params, opts_.grad_clip);
  if (clip.skipped) {
    ++skipped_steps_;
  } else {
    double lr_scale = opts_.warmup_steps > 0
                          ? std::min(1.0, static_cast<double>(iteration_ + 1) /
                                              static_cast<double>(opts_.warmup_steps))
                          : 1.0;
    nag_step(model_.params, opt_, lr_scale);
  }
  ema_update(ema_, model_.params);
  return static_cast<double>(loss.item());
}

void Trainer::swap_ema_weights() {
  size_t idx = 0;
  for (auto& [name, t] : model_.params) std::swap(t.data(), ema_.shadow[idx++].data());
}

double Trainer::evaluate_loss(const std::vector<TrainItem>& items, bool use_ema) {
  NoGrad<Real> guard(&tape_);
  if (use_ema) swap_ema_weights();
  double nll = 0.0;
  int64_t count = 0;
  for (const TrainItem& item : items) {
    Tensor<Real> logp = model_.forward_logprobs(item.source, item.target, Mode::eval);
    std::vector<int32_t> labels = TransformerPg<Real>::labels(item.target);
    const int64_t cols = logp.dim(1);
    for (size_t i = 0; i < labels.size(); ++i) {
      if (!item.mask[i]) continue;
      nll -= static_cast<double>(logp.ptr()[static_cast<int64_t>(i) * cols + labels[i]]);
      ++count;
    }
  }
  if (use_ema) swap_ema_weights();
  return count > 0 ? nll / static_cast<double>(count) : 0.0;
}

void Trainer::write_log_line(const EpochLog& log) {
  if (opts_.out_dir.empty()) return;
  std::ofstream f(opts_.out_dir + "/train.log", std::ios::app);
  if (!f) throw IoError("cannot append to training log in " + opts_.out_dir);
  f << log.epoch << '\t' << log.iteration << '\t' << std::setprecision(10) << log.train_loss << '\t'
    << log.val_loss << '\t' << log.val_ppl << '\t' << log.lr << '\n';
}

TrainResult Trainer::run(const DataFn& train_data, const std::vector<TrainItem>& val_data) {
  TrainResult result;
  if (opts_.max_iterations <= 0 && opts_.max_epochs <= 0 && val_data.empty())
    throw ConfigError("Trainer::run: no stopping condition (set max_iterations, max_epochs, or provide validation data)");
  if (!opts_.out_dir.empty()) std::filesystem::create_directories(opts_.out_dir);

  auto save_periodic = [&]() {
    if (opts_.out_dir.empty() || opts_.checkpoint_every <= 0) return;
    if (iteration_ % opts_.checkpoint_every != 0) return;
    std::ostringstream name;
    name << opts_.out_dir << "/ckpt_iter" << std::setw(8) << std::setfill('0') << iteration_ << ".poda";
    save_checkpoint(make_checkpoint(), name.str());
  };
  auto finish = [&](const std::string& reason) {
    result.stop_reason = reason;
    result.skipped_steps = skipped_steps_;
    if (!opts_.out_dir.empty()) save_checkpoint(make_checkpoint(), opts_.out_dir + "/ckpt_final.poda");
    return result;
  };

  for (;; ++epoch_) {
    if (opts_.max_epochs > 0 && epoch_ >= opts_.max_epochs) return finish("max_epochs");

    std::vector<TrainItem> items = train_data(epoch_);
    if (items.empty()) throw ConfigError("training data provider returned no examples");
    std::vector<int64_t> lengths;
    lengths.reserve(items.size());
    for (const auto& it : items) lengths.push_back(it.padded_len());
    Rng batch_rng(opts_.seed ^ kSeedBatch, static_cast<uint64_t>(epoch_));
    std::vector<std::vector<int32_t>> batches = make_batches(lengths, opts_.token_budget, batch_rng);

    // On resume, skip the batches this epoch already consumed.
    for (size_t b = static_cast<size_t>(batch_in_epoch_); b < batches.size(); ++b) {
      MaskedLossStats stats;
      double loss = train_batch(items, batches[b], stats);
      result.iteration_losses.push_back(loss);
      epoch_loss_sum_ += loss;
      ++epoch_batches_;
      ++iteration_;
      ++batch_in_epoch_;
      save_periodic();
      if (opts_.max_iterations > 0 && iteration_ >= opts_.max_iterations) return finish("max_iterations");
    }

    EpochLog log;
    log.epoch = epoch_;
    log.iteration = iteration_;
    log.train_loss = epoch_batches_ > 0 ? epoch_loss_sum_ / static_cast<double>(epoch_batches_) : 0.0;
    log.val_loss = val_data.empty() ? 0.0 : evaluate_loss(val_data, opts_.use_ema_for_validation);
    log.val_ppl = std::exp(log.val_loss);
    log.lr = opt_.learning_rate;
    result.epochs.push_back(log);
    write_log_line(log);

    batch_in_epoch_ = 0;
    epoch_loss_sum_ = 0.0;
    epoch_batches_ = 0;

    if (!val_data.empty()) {
      LrAction action = apply_lr_action(schedule_.update(log.val_loss), opt_, schedule_);
      if (action == LrAction::stop) return finish("lr_floor");
    }
  }
}

std::vector<TrainItem> make_pair_items(
    const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>& pairs,
    const Vocabulary& vocab) {
  std::vector<TrainItem> items;
  items.reserve(pairs.size());
  for (const auto& [src_tokens, tgt_tokens] : pairs) {
    auto [src, tgt] = encode_extended(src_tokens, tgt_tokens, vocab);
    TrainItem item;
    item.source = std::move(src);
    item.target = std::move(tgt);
    item.mask.assign(item.target.size() + 1, 1);
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<TrainItem> make_denoising_items(const std::vector<std::vector<std::string>>& segments,
                                            const NoiseConfig& noise, const Vocabulary& vocab,
                                            const std::vector<double>& unigram, uint64_t seed,
                                            int64_t epoch) {
  std::vector<TrainItem> items;
  items.reserve(segments.size());
  for (size_t i = 0; i < segments.size(); ++i) {
    Rng rng(seed, (static_cast<uint64_t>(epoch) << 24) ^ static_cast<uint64_t>(i));
    NoisedExample ex = make_noised_example(segments[i], noise, vocab, unigram, rng);
    TrainItem item;
    item.source = std::move(ex.noisy);
    item.target = std::move(ex.clean);
    item.mask = std::move(ex.mask);
    item.mask.push_back(1);  // the EOS position always counts
    items.push_back(std::move(item));
  }
  return items;
}

Trainer::DataFn make_denoising_provider(std::vector<std::vector<std::string>> segments,
                                        const NoiseConfig& noise, const Vocabulary& vocab,
                                        uint64_t seed) {
  auto unigram = vocab.unigram();
  return [segments = std::move(segments), noise, vocab, unigram, seed](int64_t epoch) {
    return make_denoising_items(segments, noise, vocab, unigram, seed ^ kSeedNoise, epoch);
  };
}

std::vector<PerplexityItem> perplexity_items(const TransformerPg<Real>& model,
                                             const std::vector<TrainItem>& items) {
  std::vector<PerplexityItem> out;
  out.reserve(items.size());
  for (const TrainItem& item : items) {
    Tensor<Real> logp = model.forward_logprobs(item.source, item.target, Mode::eval);
    std::vector<int32_t> labels = TransformerPg<Real>::labels(item.target);
    PerplexityItem pi;
    pi.mask = item.mask;
    const int64_t cols = logp.dim(1);
    for (size_t i = 0; i < labels.size(); ++i)
      pi.label_logprobs.push_back(
          static_cast<double>(logp.ptr()[static_cast<int64_t>(i) * cols + labels[i]]));
    out.push_back(std::move(pi));
  }
  return out;
}

}  // namespace poda
