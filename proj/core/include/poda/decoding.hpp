#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "poda/model.hpp"

namespace poda {

/// Partial output sequence tracked by the beam. `tokens` is BOS-prefixed and
/// holds extended-vocabulary ids; `logprob` is the cumulative log-probability
/// of the generated tokens.
struct BeamHypothesis {
  std::vector<int32_t> tokens = {kBos};
  double logprob = 0.0;
  bool finished = false;
  bool truncated = false;

  int64_t generated_len() const { return static_cast<int64_t>(tokens.size()) - 1; }

  /// Length-normalized score: logprob / generated_len^exponent, counting
  /// generated tokens only (EOS included).
  double normalized_score(double exponent = 1.0) const {
    int64_t g = std::max<int64_t>(1, generated_len());
    return logprob / std::pow(static_cast<double>(g), exponent);
  }
};

struct BeamConfig {
  int beam_size = 4;
  int max_len = 64;
  int min_len = 1;
  double length_norm_exponent = 1.0;
};

struct BeamResult {
  BeamHypothesis best;
  std::vector<BeamHypothesis> finished;  // ranked by normalized score
};

/// Arithmetic mean of the per-model next-token distributions (probability
/// space, not logits), for one prefix. All models must agree on the
/// extended-vocabulary size.
template <typename T>
std::vector<double> ensemble_step_probs(const std::vector<const TransformerPg<T>*>& models,
                                        const std::vector<Tensor<T>>& h_encs,
                                        const std::vector<int32_t>& prefix_ext_ids,
                                        const std::vector<int32_t>& source_ext_ids, int64_t n_oov) {
  if (models.empty()) throw ConfigError("ensemble_step_probs: no models");
  if (models.size() != h_encs.size()) throw ShapeError("ensemble_step_probs: models/encodings mismatch");
  const int64_t v_ext = models[0]->config.vocab_size + n_oov;
  std::vector<double> mean(static_cast<size_t>(v_ext), 0.0);
  for (size_t m = 0; m < models.size(); ++m) {
    if (models[m]->config.vocab_size != models[0]->config.vocab_size)
      throw VocabMismatchError("ensemble_step_probs: models disagree on vocabulary size");
    Tensor<T> p = models[m]->step_probs(h_encs[m], prefix_ext_ids, source_ext_ids, n_oov);
    if (p.numel() != v_ext) throw ShapeError("ensemble_step_probs: distribution length mismatch");
    for (int64_t i = 0; i < v_ext; ++i) mean[static_cast<size_t>(i)] += static_cast<double>(p.ptr()[i]);
  }
  const double inv = 1.0 / static_cast<double>(models.size());
  for (double& x : mean) x *= inv;
  return mean;
}

/// Length-normalized beam search over one or more models (probabilities
/// averaged at every step). Hypotheses that emit EOS within the step's top
/// beam_size candidates move to the finished pool and stop occupying beam
/// slots; the search ends once beam_size hypotheses have finished or the
/// length limit is reached. Final ranking is by normalized score with ties
/// broken toward the lexicographically smaller token sequence.
template <typename T>
BeamResult beam_search(const std::vector<const TransformerPg<T>*>& models, const TokenSequence& source,
                       const BeamConfig& cfg) {
  if (models.empty()) throw ConfigError("beam_search: no models");
  if (cfg.beam_size < 1 || cfg.max_len < 1) throw ConfigError("beam_search: beam_size and max_len must be >= 1");

  std::vector<Tensor<T>> h_encs;
  h_encs.reserve(models.size());
  for (const auto* m : models) h_encs.push_back(m->encode(source, Mode::eval));
  const int64_t n_oov = static_cast<int64_t>(source.oov_words.size());
  const int64_t v_ext = models[0]->config.vocab_size + n_oov;

  struct Candidate {
    int32_t parent;
    int32_t token;
    double logprob;
  };

  std::vector<BeamHypothesis> live = {BeamHypothesis{}};
  std::vector<BeamHypothesis> finished;

  for (int step = 1; step <= cfg.max_len; ++step) {
    std::vector<Candidate> cands;
    cands.reserve(live.size() * static_cast<size_t>(v_ext));
    for (size_t h = 0; h < live.size(); ++h) {
      std::vector<double> p =
          ensemble_step_probs(models, h_encs, live[h].tokens, source.ext_ids, n_oov);
      for (int64_t tok = 0; tok < v_ext; ++tok) {
        if (tok == kEos && step < cfg.min_len) continue;
        double lp = std::log(std::max(p[static_cast<size_t>(tok)], 1e-300));
        cands.push_back({static_cast<int32_t>(h), static_cast<int32_t>(tok), live[h].logprob + lp});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });

    // EOS candidates finish only when they rank within the step's top
    // beam_size; the live beam refills from the best non-EOS candidates.
    std::vector<BeamHypothesis> next_live;
    for (size_t c = 0; c < cands.size(); ++c) {
      const Candidate& cand = cands[c];
      if (cand.token == kEos) {
        if (c < static_cast<size_t>(cfg.beam_size)) {
          BeamHypothesis hyp = live[static_cast<size_t>(cand.parent)];
          hyp.tokens.push_back(kEos);
          hyp.logprob = cand.logprob;
          hyp.finished = true;
          finished.push_back(std::move(hyp));
        }
        continue;
      }
      if (next_live.size() < static_cast<size_t>(cfg.beam_size)) {
        BeamHypothesis hyp = live[static_cast<size_t>(cand.parent)];
        hyp.tokens.push_back(cand.token);
        hyp.logprob = cand.logprob;
        next_live.push_back(std::move(hyp));
      }
      if (next_live.size() >= static_cast<size_t>(cfg.beam_size) &&
          c >= static_cast<size_t>(cfg.beam_size)) {
        break;  // both pools are full
      }
    }
    live = std::move(next_live);
    if (finished.size() >= static_cast<size_t>(cfg.beam_size) || live.empty()) break;
  }

  auto rank = [&](std::vector<BeamHypothesis>& pool) {
    std::stable_sort(pool.begin(), pool.end(), [&](const BeamHypothesis& a, const BeamHypothesis& b) {
      double sa = a.normalized_score(cfg.length_norm_exponent);
      double sb = b.normalized_score(cfg.length_norm_exponent);
      if (sa != sb) return sa > sb;
      return a.tokens < b.tokens;
    });
  };

  BeamResult result;
  if (!finished.empty()) {
    rank(finished);
    result.best = finished.front();
    result.finished = std::move(finished);
  } else {
    // No hypothesis reached EOS within max_len: return the best unfinished
    // one, flagged as truncated.
    rank(live);
    result.best = live.front();
    result.best.truncated = true;
  }
  return result;
}

template <typename T>
BeamResult beam_search(const TransformerPg<T>& model, const TokenSequence& source,
                       const BeamConfig& cfg) {
  std::vector<const TransformerPg<T>*> models = {&model};
  return beam_search(models, source, cfg);
}

/// Surface forms of a hypothesis, BOS/EOS stripped, extended ids resolved
/// against the source's OOV table.
inline std::vector<std::string> hypothesis_words(const BeamHypothesis& hyp, const Vocabulary& vocab,
                                                 const std::vector<std::string>& oov_words) {
  std::vector<std::string> words;
  for (size_t i = 1; i < hyp.tokens.size(); ++i) {
    if (hyp.tokens[i] == kEos) break;
    words.push_back(ext_id_to_word(hyp.tokens[i], vocab, oov_words));
  }
  return words;
}

}  // namespace poda
