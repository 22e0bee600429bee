#pragma once

#include <cstdint>
#include <string>

#include "poda/decoding.hpp"
#include "poda/model.hpp"
#include "poda/noising.hpp"
#include "poda/trainer.hpp"

namespace poda {

/// Every tunable across modules, loadable from a flat "key = value" file with
/// one section per module. Unknown sections or keys are rejected. Two named
/// presets exist: "desk" (toy defaults, also the struct defaults) and
/// "paper" (full-scale values).
struct RunConfig {
  // [run]
  uint64_t seed = 42;

  // [corpus]
  int64_t max_vocab = 1000;
  std::string corpus_mode = "paragraph";  // or "sentence"
  int64_t segment_max_len = 128;
  int64_t sentence_max_len = 500;
  int64_t min_paragraph_len = 3;
  double max_oov_fraction = 0.30;

  // [noising]
  double sigma = 0.5;
  double beta_mean = 0.15;
  double beta_std = 0.03;
  double keep_uncorrupted_rate = 0.03;

  // [model]
  int n_layers_enc = 2;
  int n_layers_dec = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_ffn = 256;
  double dropout = 0.2;
  bool tie_embeddings = true;
  int max_positions = 256;

  // [training]
  double learning_rate = 2e-3;
  double momentum = 0.99;
  double grad_clip = 2.0;
  double ema_decay = 0.9995;
  double lr_floor = 1e-4;
  int64_t warmup_steps = 0;
  int patience = 1;
  int64_t token_budget = 3000;
  int64_t max_iterations = 20000;
  int64_t max_epochs = 0;
  int64_t checkpoint_every = 1000;
  double val_fraction = 0.01;
  std::string loss_mode = "mean";  // or "sum" for the strict summed objective
  bool use_ema_for_validation = false;  // the paper preset turns this on

  // [decoding]
  int beam_size = 4;
  int max_len = 64;
  int min_len = 1;
  double length_norm_exponent = 1.0;

  /// Applies a named preset ("desk" or "paper") on top of the current values.
  void apply_preset(const std::string& name);

  /// Parses a config file into this struct; unknown keys are errors.
  void load_file(const std::string& path);
  void set(const std::string& section, const std::string& key, const std::string& value);

  /// Canonical serialization; the echoed file reloads to an identical config.
  std::string serialize() const;
  void save(const std::string& path) const;

  void validate() const;

  ModelConfig model_config(int64_t vocab_size) const;
  NoiseConfig noise_config() const;
  TrainOptions train_options(const std::string& out_dir) const;
  BeamConfig beam_config() const;
};

}  // namespace poda
