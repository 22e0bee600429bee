#include "poda/noising.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "poda/error.hpp"

namespace poda {

std::pair<double, double> derive_beta_params(double mean, double stddev) {
  if (!(mean > 0.0 && mean < 1.0)) throw ConfigError("derive_beta_params: mean must be in (0, 1)");
  double var = stddev * stddev;
  if (!(var > 0.0)) throw ConfigError("derive_beta_params: std must be > 0");
  double bound = mean * (1.0 - mean);
  if (var >= bound)
    throw ConfigError("derive_beta_params: variance " + std::to_string(var) +
                      " violates the Beta bound mean*(1-mean) = " + std::to_string(bound));
  double s = bound / var - 1.0;
  return {mean * s, (1.0 - mean) * s};
}

NoiseConfig NoiseConfig::make(double sigma, double beta_mean, double beta_std,
                              double keep_uncorrupted_rate) {
  if (sigma < 0.0) throw ConfigError("NoiseConfig: sigma must be >= 0");
  if (keep_uncorrupted_rate < 0.0 || keep_uncorrupted_rate > 1.0)
    throw ConfigError("NoiseConfig: keep_uncorrupted_rate must be in [0, 1]");
  NoiseConfig cfg;
  cfg.sigma = sigma;
  cfg.beta_mean = beta_mean;
  cfg.beta_std = beta_std;
  cfg.keep_uncorrupted_rate = keep_uncorrupted_rate;
  std::tie(cfg.alpha, cfg.beta) = derive_beta_params(beta_mean, beta_std);
  return cfg;
}

ShuffleResult shuffle_with_offsets(const std::vector<std::string>& x,
                                   const std::vector<double>& offsets) {
  const size_t n = x.size();
  if (offsets.size() != n) throw ShapeError("shuffle_with_offsets: offsets length mismatch");
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Stable argsort of i + offset_i; ties keep original order so sigma = 0 is
  // the exact identity.
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return static_cast<double>(a) + offsets[a] < static_cast<double>(b) + offsets[b];
  });
  ShuffleResult r;
  r.tokens.reserve(n);
  r.moved.assign(n, 0);
  for (size_t out = 0; out < n; ++out) {
    r.tokens.push_back(x[order[out]]);
    if (order[out] != out) r.moved[order[out]] = 1;
  }
  return r;
}

ShuffleResult shuffle(const std::vector<std::string>& x, double sigma, Rng& rng) {
  std::vector<double> offsets(x.size());
  for (auto& d : offsets) d = sigma > 0.0 ? rng.normal(0.0, sigma) : 0.0;
  return shuffle_with_offsets(x, offsets);
}

DeleteResult delete_with_p(const std::vector<std::string>& x, double p, Rng& rng) {
  DeleteResult r;
  r.deleted.assign(x.size(), 0);
  for (size_t i = 0; i < x.size(); ++i) {
    if (rng.bernoulli(p)) {
      r.deleted[i] = 1;
    } else {
      r.tokens.push_back(x[i]);
    }
  }
  return r;
}

DeleteResult delete_tokens(const std::vector<std::string>& x, double alpha, double beta, Rng& rng) {
  double p = rng.beta(alpha, beta);
  return delete_with_p(x, p, rng);
}

ReplaceResult replace_with_p(const std::vector<std::string>& x, double p, const Vocabulary& vocab,
                             const std::vector<double>& unigram, Rng& rng) {
  ReplaceResult r;
  r.tokens = x;
  r.replaced.assign(x.size(), 0);
  if (vocab.ranked_size() == 0) return r;  // nothing to sample from
  for (size_t i = 0; i < x.size(); ++i) {
    if (!rng.bernoulli(p)) continue;
    r.replaced[i] = 1;
    double u = rng.uniform();
    double cum = 0.0;
    int32_t picked = vocab.ranked_size() - 1;
    for (int32_t k = 0; k < vocab.ranked_size(); ++k) {
      cum += unigram[static_cast<size_t>(k)];
      if (u < cum) {
        picked = k;
        break;
      }
    }
    r.tokens[i] = vocab.word_at(picked + kNumSpecials);
  }
  return r;
}

ReplaceResult replace_tokens(const std::vector<std::string>& x, double alpha, double beta,
                             const Vocabulary& vocab, const std::vector<double>& unigram, Rng& rng) {
  double p = rng.beta(alpha, beta);
  return replace_with_p(x, p, vocab, unigram, rng);
}

NoiseOutcome apply_noise(const std::vector<std::string>& x, const NoiseConfig& cfg,
                         const Vocabulary& vocab, const std::vector<double>& unigram, Rng& rng) {
  if (x.empty()) throw ShapeError("apply_noise: input sequence is empty");

  // Uniformly random order of the three operators.
  std::vector<int> order = {0, 1, 2};
  rng.shuffle(order);

  NoiseOutcome out;
  out.corrupted.assign(x.size(), 0);
  std::vector<std::string> cur = x;
  // origin[j] = clean index of the token currently at position j; flags are
  // composed through the chain so they always index the clean sequence.
  std::vector<size_t> origin(x.size());
  std::iota(origin.begin(), origin.end(), 0);

  for (int op : order) {
    switch (op) {
      case 0: {  // shuffle
        std::vector<double> offsets(cur.size());
        for (auto& d : offsets) d = cfg.sigma > 0.0 ? rng.normal(0.0, cfg.sigma) : 0.0;
        std::vector<size_t> perm(cur.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::stable_sort(perm.begin(), perm.end(), [&](size_t a, size_t b) {
          return static_cast<double>(a) + offsets[a] < static_cast<double>(b) + offsets[b];
        });
        std::vector<std::string> next(cur.size());
        std::vector<size_t> next_origin(cur.size());
        for (size_t j = 0; j < perm.size(); ++j) {
          next[j] = std::move(cur[perm[j]]);
          next_origin[j] = origin[perm[j]];
          if (perm[j] != j) out.corrupted[origin[perm[j]]] = 1;
        }
        cur = std::move(next);
        origin = std::move(next_origin);
        break;
      }
      case 1: {  // delete
        double p = rng.beta(cfg.alpha, cfg.beta);
        std::vector<std::string> next;
        std::vector<size_t> next_origin;
        for (size_t j = 0; j < cur.size(); ++j) {
          if (rng.bernoulli(p)) {
            out.corrupted[origin[j]] = 1;
          } else {
            next.push_back(std::move(cur[j]));
            next_origin.push_back(origin[j]);
          }
        }
        cur = std::move(next);
        origin = std::move(next_origin);
        break;
      }
      case 2: {  // replace
        double p = rng.beta(cfg.alpha, cfg.beta);
        if (vocab.ranked_size() == 0) break;
        for (size_t j = 0; j < cur.size(); ++j) {
          if (!rng.bernoulli(p)) continue;
          out.corrupted[origin[j]] = 1;
          double u = rng.uniform();
          double cum = 0.0;
          int32_t picked = vocab.ranked_size() - 1;
          for (int32_t k = 0; k < vocab.ranked_size(); ++k) {
            cum += unigram[static_cast<size_t>(k)];
            if (u < cum) {
              picked = k;
              break;
            }
          }
          cur[j] = vocab.word_at(picked + kNumSpecials);
        }
        break;
      }
    }
  }
  out.noisy = std::move(cur);
  return out;
}

std::vector<uint8_t> build_mask(const std::vector<uint8_t>& corrupted, double keep_rate, Rng& rng) {
  if (keep_rate < 0.0 || keep_rate > 1.0) throw ConfigError("build_mask: keep_rate must be in [0, 1]");
  std::vector<uint8_t> mask(corrupted.size(), 0);
  for (size_t i = 0; i < corrupted.size(); ++i) {
    mask[i] = corrupted[i] ? 1 : (rng.bernoulli(keep_rate) ? 1 : 0);
  }
  return mask;
}

NoisedExample make_noised_example(const std::vector<std::string>& clean_tokens,
                                  const NoiseConfig& cfg, const Vocabulary& vocab,
                                  const std::vector<double>& unigram, Rng& rng) {
  NoiseOutcome outcome = apply_noise(clean_tokens, cfg, vocab, unigram, rng);
  // A short sequence can lose every token to DELETE; redraw from the same
  // stream so the encoder always sees a non-empty source.
  int attempts = 0;
  while (outcome.noisy.empty() && ++attempts < 100) {
    outcome = apply_noise(clean_tokens, cfg, vocab, unigram, rng);
  }
  NoisedExample ex;
  if (outcome.noisy.empty()) {
    outcome.noisy = clean_tokens;
    outcome.corrupted.assign(clean_tokens.size(), 0);
  }
  ex.corrupted = outcome.corrupted;
  ex.mask = build_mask(outcome.corrupted, cfg.keep_uncorrupted_rate, rng);
  auto [src, tgt] = encode_extended(outcome.noisy, clean_tokens, vocab);
  ex.noisy = std::move(src);
  ex.clean = std::move(tgt);
  return ex;
}

}  // namespace poda
