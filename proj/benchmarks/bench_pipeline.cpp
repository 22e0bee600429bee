#include <benchmark/benchmark.h>

#include "poda/decoding.hpp"
#include "poda/noising.hpp"
#include "poda/trainer.hpp"

using namespace poda;

namespace {

Vocabulary bench_vocab(int n) {
  std::vector<std::string> stream;
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n - i; ++k) stream.push_back("w" + std::to_string(i));
  return Vocabulary::build(stream, static_cast<size_t>(n));
}

std::vector<std::string> bench_sentence(const Vocabulary& v, size_t len, Rng& rng) {
  std::vector<std::string> s;
  for (size_t i = 0; i < len; ++i)
    s.push_back(v.word_at(kNumSpecials + static_cast<int32_t>(rng.uniform_int(
                              static_cast<uint64_t>(v.ranked_size())))));
  return s;
}

void BM_apply_noise(benchmark::State& state) {
  Vocabulary v = bench_vocab(200);
  auto unigram = v.unigram();
  NoiseConfig cfg = NoiseConfig::defaults();
  Rng rng(1);
  auto x = bench_sentence(v, static_cast<size_t>(state.range(0)), rng);
  for (auto _ : state) {
    auto out = apply_noise(x, cfg, v, unigram, rng);
    benchmark::DoNotOptimize(out.noisy.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_apply_noise)->Arg(32)->Arg(128);

void BM_forward_logprobs(benchmark::State& state) {
  ModelConfig cfg = ModelConfig::desk_preset();
  Vocabulary v = bench_vocab(500);
  cfg.vocab_size = v.total_size();
  Rng init(2);
  auto model = TransformerPg<Real>::init(cfg, init);
  Rng rng(3);
  auto words = bench_sentence(v, static_cast<size_t>(state.range(0)), rng);
  auto [src, tgt] = encode_extended(words, words, v);
  for (auto _ : state) {
    auto lp = model.forward_logprobs(src, tgt, Mode::eval);
    benchmark::DoNotOptimize(lp.ptr());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_forward_logprobs)->Arg(8)->Arg(32);

void BM_train_step(benchmark::State& state) {
  ModelConfig cfg = ModelConfig::desk_preset();
  Vocabulary v = bench_vocab(500);
  cfg.vocab_size = v.total_size();
  Rng init(4);
  auto model = TransformerPg<Real>::init(cfg, init);
  Tape<Real> tape;
  model.params.attach(tape);
  Rng rng(5);
  auto words = bench_sentence(v, 16, rng);
  auto [src, tgt] = encode_extended(words, words, v);
  std::vector<uint8_t> mask(tgt.size() + 1, 1);
  Rng drop(6);
  for (auto _ : state) {
    tape.clear();
    model.params.zero_grad();
    auto lp = model.forward_logprobs(src, tgt, Mode::train, &drop);
    auto loss = masked_nll_loss(lp, TransformerPg<Real>::labels(tgt), mask);
    backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_train_step);

void BM_beam_search(benchmark::State& state) {
  ModelConfig cfg = ModelConfig::desk_preset();
  Vocabulary v = bench_vocab(500);
  cfg.vocab_size = v.total_size();
  Rng init(7);
  auto model = TransformerPg<Real>::init(cfg, init);
  Rng rng(8);
  TokenSequence src = encode_source(bench_sentence(v, 12, rng), v);
  BeamConfig bc;
  bc.beam_size = static_cast<int>(state.range(0));
  bc.max_len = 16;
  for (auto _ : state) {
    auto r = beam_search(model, src, bc);
    benchmark::DoNotOptimize(r.best.logprob);
  }
}
BENCHMARK(BM_beam_search)->Arg(1)->Arg(4);

}  // namespace

BENCHMARK_MAIN();
