#include <doctest.h>

#include <cmath>

#include "poda/decoding.hpp"
#include "test_support.hpp"

using namespace poda;

TEST_SUITE_BEGIN("decoding");

namespace {

// Exhaustive reference search: enumerate every EOS-terminated sequence of
// generated length <= max_len, score by cumulative logprob of the SAME model
// probabilities, rank by normalized score with lexicographic tie-breaking.
struct OracleBest {
  std::vector<int32_t> tokens;  // BOS-prefixed, ends with EOS
  double score = -std::numeric_limits<double>::infinity();
};

template <typename T>
void oracle_expand(const TransformerPg<T>& model, const Tensor<T>& h_enc, const TokenSequence& src,
                   std::vector<int32_t>& prefix, double logprob, int max_len, OracleBest& best) {
  const int64_t v_ext = model.config.vocab_size + static_cast<int64_t>(src.oov_words.size());
  auto probs = model.step_probs(h_enc, prefix, src.ext_ids, static_cast<int64_t>(src.oov_words.size()));
  for (int64_t tok = 0; tok < v_ext; ++tok) {
    double lp = logprob + std::log(std::max(static_cast<double>(probs.ptr()[tok]), 1e-300));
    if (tok == kEos) {
      int64_t gen = static_cast<int64_t>(prefix.size());  // generated including EOS
      double score = lp / static_cast<double>(gen);
      std::vector<int32_t> full = prefix;
      full.push_back(kEos);
      if (score > best.score || (score == best.score && full < best.tokens)) {
        best.score = score;
        best.tokens = full;
      }
      continue;
    }
    if (static_cast<int>(prefix.size()) < max_len) {
      prefix.push_back(static_cast<int32_t>(tok));
      oracle_expand(model, h_enc, src, prefix, lp, max_len, best);
      prefix.pop_back();
    }
  }
}

}  // namespace

TEST_CASE("beam of one is greedy argmax decoding") {
  auto model = test::tiny_model<float>(9, 81);
  Vocabulary v = test::toy_vocab(5);
  TokenSequence src = encode_source({"w0", "w2", "w4"}, v);

  BeamConfig cfg;
  cfg.beam_size = 1;
  cfg.max_len = 8;
  BeamResult r = beam_search(model, src, cfg);

  // replicate greedily: follow the argmax until EOS
  auto h_enc = model.encode(src, Mode::eval);
  std::vector<int32_t> prefix = {kBos};
  for (int step = 0; step < cfg.max_len; ++step) {
    auto p = model.step_probs(h_enc, prefix, src.ext_ids, 0);
    int32_t argmax = 0;
    for (int64_t i = 1; i < p.numel(); ++i)
      if (p.ptr()[i] > p.ptr()[argmax]) argmax = static_cast<int32_t>(i);
    prefix.push_back(argmax);
    if (argmax == kEos) break;
  }
  CHECK(r.best.tokens == prefix);
}

TEST_CASE("beam search matches exhaustive argmax with full-width beams") {
  const int64_t vocab = 5;
  const int max_len = 4;
  auto model = test::tiny_model<float>(vocab, 82);
  Vocabulary v = test::toy_vocab(1);  // "w0" is the only real word

  Rng rng(83);
  for (int trial = 0; trial < 6; ++trial) {
    std::vector<std::string> words;
    size_t len = 1 + rng.uniform_int(4);
    for (size_t i = 0; i < len; ++i) words.push_back(rng.bernoulli(0.3) ? "oovX" : "w0");
    TokenSequence src = encode_source(words, v);

    BeamConfig cfg;
    cfg.beam_size = 700;  // >= 5^4 candidate prefixes: nothing is ever pruned
    cfg.max_len = max_len;
    BeamResult r = beam_search(model, src, cfg);

    OracleBest best;
    std::vector<int32_t> prefix = {kBos};
    auto h_enc = model.encode(src, Mode::eval);
    oracle_expand(model, h_enc, src, prefix, 0.0, max_len, best);

    REQUIRE_FALSE(best.tokens.empty());
    CHECK(r.best.tokens == best.tokens);
    CHECK(r.best.normalized_score() == doctest::Approx(best.score).epsilon(1e-9));
  }
}

TEST_CASE("beam search is deterministic") {
  auto model = test::tiny_model<float>(12, 84);
  Vocabulary v = test::toy_vocab(8);
  TokenSequence src = encode_source({"w0", "w3", "oovQ"}, v);
  BeamConfig cfg;
  cfg.beam_size = 4;
  cfg.max_len = 10;
  BeamResult a = beam_search(model, src, cfg);
  BeamResult b = beam_search(model, src, cfg);
  CHECK(a.best.tokens == b.best.tokens);
  CHECK(a.best.logprob == b.best.logprob);
}

TEST_CASE("hypothesis logprob never increases as it grows") {
  auto model = test::tiny_model<float>(12, 85);
  Vocabulary v = test::toy_vocab(8);
  TokenSequence src = encode_source({"w0", "w1", "w2", "w3"}, v);
  BeamConfig cfg;
  cfg.beam_size = 3;
  cfg.max_len = 12;
  BeamResult r = beam_search(model, src, cfg);
  for (const auto& hyp : r.finished) {
    CHECK(hyp.logprob <= 0.0);
    CHECK(hyp.finished);
    CHECK(hyp.tokens.back() == kEos);
  }
}

TEST_CASE("truncation flag when EOS is unreachable") {
  auto model = test::tiny_model<float>(9, 86);
  Vocabulary v = test::toy_vocab(5);
  TokenSequence src = encode_source({"w0"}, v);
  BeamConfig cfg;
  cfg.beam_size = 2;
  cfg.max_len = 3;
  cfg.min_len = 10;  // EOS excluded at every reachable step
  BeamResult r = beam_search(model, src, cfg);
  CHECK(r.best.truncated);
  CHECK(r.finished.empty());
  CHECK(r.best.generated_len() == 3);
}

TEST_CASE("output ids stay valid and decode to source OOV surface forms") {
  auto model = test::tiny_model<float>(12, 87);
  Vocabulary v = test::toy_vocab(8);
  TokenSequence src = encode_source({"w0", "Zunk", "w2"}, v);
  BeamConfig cfg;
  cfg.beam_size = 5;
  cfg.max_len = 6;
  BeamResult r = beam_search(model, src, cfg);
  const int64_t v_ext = model.config.vocab_size + 1;
  for (const auto& hyp : r.finished) {
    for (int32_t id : hyp.tokens) {
      CHECK(id >= 0);
      CHECK(id < v_ext);
    }
    auto words = hypothesis_words(hyp, v, src.oov_words);
    for (const auto& w : words) CHECK_FALSE(w.empty());
  }
  // the extended id maps back to the OOV surface form
  CHECK(ext_id_to_word(model.config.vocab_size, v, src.oov_words) == "Zunk");
}

TEST_CASE("ensemble of identical models equals the single model") {
  auto model = test::tiny_model<float>(12, 88);
  Vocabulary v = test::toy_vocab(8);
  TokenSequence src = encode_source({"w0", "w5"}, v);
  auto h_enc = model.encode(src, Mode::eval);

  std::vector<const TransformerPg<float>*> one = {&model};
  std::vector<const TransformerPg<float>*> three = {&model, &model, &model};
  std::vector<Tensor<float>> h1 = {h_enc};
  std::vector<Tensor<float>> h3 = {h_enc, h_enc, h_enc};

  std::vector<int32_t> prefix = {kBos, 4};
  auto p1 = ensemble_step_probs(one, h1, prefix, src.ext_ids, 0);
  auto p3 = ensemble_step_probs(three, h3, prefix, src.ext_ids, 0);
  REQUIRE(p1.size() == p3.size());
  for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] == doctest::Approx(p3[i]).epsilon(1e-7));

  BeamConfig cfg;
  cfg.beam_size = 3;
  cfg.max_len = 8;
  BeamResult ra = beam_search(model, src, cfg);
  BeamResult rb = beam_search(three, src, cfg);
  CHECK(ra.best.tokens == rb.best.tokens);
}

TEST_CASE("ensemble mean of two different models is a distribution") {
  auto m1 = test::tiny_model<float>(12, 89);
  auto m2 = test::tiny_model<float>(12, 90);
  Vocabulary v = test::toy_vocab(8);
  Rng rng(91);
  for (int trial = 0; trial < 10; ++trial) {
    auto words = test::toy_sentence(v, 1 + rng.uniform_int(5), rng);
    TokenSequence src = encode_source(words, v);
    std::vector<const TransformerPg<float>*> models = {&m1, &m2};
    std::vector<Tensor<float>> hs = {m1.encode(src, Mode::eval), m2.encode(src, Mode::eval)};
    auto p = ensemble_step_probs(models, hs, {kBos}, src.ext_ids, 0);
    double sum = 0;
    for (double x : p) {
      CHECK(x >= 0.0);
      sum += x;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("length normalization exponent reweights the final ranking") {
  BeamHypothesis shorter;
  shorter.tokens = {kBos, 5, kEos};  // 2 generated tokens
  shorter.logprob = -2.0;
  BeamHypothesis longer;
  longer.tokens = {kBos, 5, 6, 7, kEos};  // 4 generated tokens
  longer.logprob = -3.6;

  // plain division: the longer hypothesis wins (-0.9 > -1.0)
  CHECK(longer.normalized_score(1.0) > shorter.normalized_score(1.0));
  // exponent 0 disables normalization: raw cumulative logprob decides
  CHECK(shorter.normalized_score(0.0) > longer.normalized_score(0.0));
  CHECK(shorter.normalized_score(0.0) == doctest::Approx(-2.0));
  CHECK(shorter.normalized_score(1.0) == doctest::Approx(-1.0));
}

TEST_CASE("ensemble rejects vocabulary mismatches") {
  auto m1 = test::tiny_model<float>(12, 92);
  auto m2 = test::tiny_model<float>(16, 93);
  Vocabulary v = test::toy_vocab(8);
  TokenSequence src = encode_source({"w0"}, v);
  std::vector<const TransformerPg<float>*> models = {&m1, &m2};
  std::vector<Tensor<float>> hs = {m1.encode(src, Mode::eval), m2.encode(src, Mode::eval)};
  CHECK_THROWS_AS(ensemble_step_probs(models, hs, {kBos}, src.ext_ids, 0), VocabMismatchError);
}

TEST_SUITE_END();
