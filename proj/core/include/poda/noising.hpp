#pragma once

#include <string>
#include <vector>

#include "poda/corpus.hpp"
#include "poda/rng.hpp"

namespace poda {

/// Hyperparameters of the noising pipeline. alpha/beta are moment-matched to
/// (beta_mean, beta_std) at construction.
struct NoiseConfig {
  double sigma = 0.5;          // std-dev of the Gaussian shuffle offsets
  double beta_mean = 0.15;     // E[p] of the per-sequence corruption probability
  double beta_std = 0.03;      // std[p]
  double keep_uncorrupted_rate = 0.03;
  double alpha = 0.0;          // derived
  double beta = 0.0;           // derived

  static NoiseConfig make(double sigma, double beta_mean, double beta_std,
                          double keep_uncorrupted_rate);
  static NoiseConfig defaults() { return make(0.5, 0.15, 0.03, 0.03); }
};

/// Moment matching for Beta(alpha, beta): s = mean(1-mean)/std^2 - 1,
/// alpha = mean*s, beta = (1-mean)*s. Throws ConfigError when the variance
/// bound std^2 < mean(1-mean) is violated.
std::pair<double, double> derive_beta_params(double mean, double stddev);

/// One noised training example. `corrupted` and `mask` are indexed over the
/// CLEAN sequence x, regardless of how the operator chain reordered or
/// shortened the noisy side.
struct NoisedExample {
  TokenSequence clean;
  TokenSequence noisy;
  std::vector<uint8_t> corrupted;
  std::vector<uint8_t> mask;
};

struct ShuffleResult {
  std::vector<std::string> tokens;
  std::vector<uint8_t> moved;  // per original position
};

struct DeleteResult {
  std::vector<std::string> tokens;
  std::vector<uint8_t> deleted;  // per original position
};

struct ReplaceResult {
  std::vector<std::string> tokens;
  std::vector<uint8_t> replaced;  // per position (length preserved)
};

/// Rearranges x by the stable argsort of indices[i] = i + offsets[i].
/// moved[i] is true iff the token originally at i landed elsewhere.
ShuffleResult shuffle_with_offsets(const std::vector<std::string>& x,
                                   const std::vector<double>& offsets);
ShuffleResult shuffle(const std::vector<std::string>& x, double sigma, Rng& rng);

/// Deletes each token independently with the given probability.
DeleteResult delete_with_p(const std::vector<std::string>& x, double p, Rng& rng);
/// Samples one p ~ Beta(alpha, beta) for the whole call, then deletes.
DeleteResult delete_tokens(const std::vector<std::string>& x, double alpha, double beta, Rng& rng);

/// Replaces each token independently with probability p by a draw from the
/// unigram distribution over ranked vocabulary entries. A position counts as
/// replaced even if the sampled word happens to equal the original.
ReplaceResult replace_with_p(const std::vector<std::string>& x, double p, const Vocabulary& vocab,
                             const std::vector<double>& unigram, Rng& rng);
ReplaceResult replace_tokens(const std::vector<std::string>& x, double alpha, double beta,
                             const Vocabulary& vocab, const std::vector<double>& unigram, Rng& rng);

struct NoiseOutcome {
  std::vector<std::string> noisy;
  std::vector<uint8_t> corrupted;  // over clean positions
};

/// Algorithm core: applies shuffle, delete, replace in a uniformly random
/// order, composing corruption flags back to clean coordinates.
NoiseOutcome apply_noise(const std::vector<std::string>& x, const NoiseConfig& cfg,
                         const Vocabulary& vocab, const std::vector<double>& unigram, Rng& rng);

/// mask[i] = true for every corrupted i; uncorrupted positions are included
/// independently with probability keep_rate.
std::vector<uint8_t> build_mask(const std::vector<uint8_t>& corrupted, double keep_rate, Rng& rng);

/// Full pipeline: noise + mask + extended-vocabulary encoding of the
/// (noisy source, clean target) pair. Retries the draw when every token was
/// deleted, so the source side is never empty.
NoisedExample make_noised_example(const std::vector<std::string>& clean_tokens,
                                  const NoiseConfig& cfg, const Vocabulary& vocab,
                                  const std::vector<double>& unigram, Rng& rng);

}  // namespace poda
