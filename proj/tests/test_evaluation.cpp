#include <doctest.h>

#include <cmath>

#include "poda/error.hpp"
#include "poda/evaluation.hpp"
#include "rouge_fixtures.hpp"
#include "test_support.hpp"

using namespace poda;

TEST_SUITE_BEGIN("evaluation");

namespace {

void check_score(const RougeScore& got, const double want[3]) {
  CHECK(got.precision == doctest::Approx(want[0]).epsilon(1e-12));
  CHECK(got.recall == doctest::Approx(want[1]).epsilon(1e-12));
  CHECK(got.f1 == doctest::Approx(want[2]).epsilon(1e-12));
}

}  // namespace

TEST_CASE("rouge fixtures: 20 hand-computed pairs") {
  for (const auto& fx : test::kRougeFixtures) {
    auto cand = tokenize(fx.candidate);
    auto ref = tokenize(fx.reference);
    check_score(rouge_n(cand, ref, 1), fx.r1);
    check_score(rouge_n(cand, ref, 2), fx.r2);
    check_score(rouge_l(cand, ref), fx.rl);
  }
}

TEST_CASE("rouge degenerate inputs") {
  std::vector<std::string> empty;
  std::vector<std::string> one = {"x"};
  const double zero[3] = {0, 0, 0};
  check_score(rouge_n(empty, one, 1), zero);
  check_score(rouge_l(empty, one), zero);
  // candidate shorter than n scores zero on its component
  auto r2 = rouge_n(one, {"x", "y"}, 2);
  CHECK(r2.precision == 0.0);
  CHECK(r2.recall == 0.0);
  CHECK_THROWS_AS(rouge_n(one, one, 0), ConfigError);
}

TEST_CASE("rouge F1 is symmetric under candidate/reference swap") {
  Rng rng(95);
  Vocabulary v = test::toy_vocab(6);
  for (int trial = 0; trial < 60; ++trial) {
    auto a = test::toy_sentence(v, 1 + rng.uniform_int(8), rng);
    auto b = test::toy_sentence(v, 1 + rng.uniform_int(8), rng);
    for (size_t n = 1; n <= 2; ++n) {
      auto ab = rouge_n(a, b, n);
      auto ba = rouge_n(b, a, n);
      CHECK(ab.f1 == doctest::Approx(ba.f1).epsilon(1e-12));
      CHECK(ab.precision == doctest::Approx(ba.recall).epsilon(1e-12));
    }
    auto labf = rouge_l(a, b);
    auto lbaf = rouge_l(b, a);
    CHECK(labf.f1 == doctest::Approx(lbaf.f1).epsilon(1e-12));
  }
}

TEST_CASE("rouge agrees with the naive quadratic oracle on random pairs") {
  Rng rng(96);
  Vocabulary v = test::toy_vocab(5);
  for (int trial = 0; trial < 40; ++trial) {
    auto a = test::toy_sentence(v, 1 + rng.uniform_int(7), rng);
    auto b = test::toy_sentence(v, 1 + rng.uniform_int(7), rng);
    CHECK(rouge_n(a, b, 1).f1 == doctest::Approx(test::naive_rouge_n_f1(a, b, 1)).epsilon(1e-12));
    CHECK(rouge_n(a, b, 2).f1 == doctest::Approx(test::naive_rouge_n_f1(a, b, 2)).epsilon(1e-12));
    CHECK(lcs_length(a, b) == test::naive_lcs(a, b));
  }
}

TEST_CASE("LCS is monotone under shared suffixes") {
  Rng rng(97);
  Vocabulary v = test::toy_vocab(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto a = test::toy_sentence(v, 1 + rng.uniform_int(6), rng);
    auto b = test::toy_sentence(v, 1 + rng.uniform_int(6), rng);
    size_t before = lcs_length(a, b);
    auto suffix = test::toy_sentence(v, 1 + rng.uniform_int(3), rng);
    auto a2 = a, b2 = b;
    a2.insert(a2.end(), suffix.begin(), suffix.end());
    b2.insert(b2.end(), suffix.begin(), suffix.end());
    CHECK(lcs_length(a2, b2) >= before + suffix.size());
  }
}

TEST_CASE("all rouge components live in [0, 1]") {
  Rng rng(98);
  Vocabulary v = test::toy_vocab(4);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = test::toy_sentence(v, rng.uniform_int(6), rng);
    auto b = test::toy_sentence(v, rng.uniform_int(6), rng);
    for (const auto& s : {rouge_n(a, b, 1), rouge_n(a, b, 2), rouge_l(a, b)}) {
      CHECK(s.precision >= 0.0);
      CHECK(s.precision <= 1.0);
      CHECK(s.recall >= 0.0);
      CHECK(s.recall <= 1.0);
      CHECK(s.f1 >= 0.0);
      CHECK(s.f1 <= 1.0);
    }
  }
}

TEST_CASE("multi-reference rouge takes the best F1") {
  auto cand = tokenize("the cat sat");
  std::vector<std::vector<std::string>> refs = {tokenize("entirely different words"),
                                                tokenize("the cat"), tokenize("a cat")};
  auto best = rouge_n_multi(cand, refs, 1);
  auto direct = rouge_n(cand, refs[1], 1);
  CHECK(best.f1 == doctest::Approx(direct.f1).epsilon(1e-12));
  CHECK(best.precision == doctest::Approx(direct.precision).epsilon(1e-12));

  auto bl = rouge_l_multi(cand, refs);
  CHECK(bl.f1 == doctest::Approx(rouge_l(cand, refs[1]).f1).epsilon(1e-12));
  CHECK_THROWS_AS(rouge_n_multi(cand, {}, 1), ConfigError);
}

TEST_CASE("perplexity oracles") {
  // uniform distribution over V tokens: ppl == V
  const int64_t V = 137;
  PerplexityItem item;
  for (int i = 0; i < 10; ++i) item.label_logprobs.push_back(-std::log(static_cast<double>(V)));
  CHECK(perplexity({item}) == doctest::Approx(static_cast<double>(V)).epsilon(1e-9));

  // perfect model
  PerplexityItem perfect;
  perfect.label_logprobs = {0.0, 0.0, 0.0};
  CHECK(perplexity({perfect}) == doctest::Approx(1.0).epsilon(1e-12));

  // hand-built two-example set: probabilities e^-1, e^-2 | e^-4 (masked out), e^-3
  PerplexityItem a;
  a.label_logprobs = {-1.0, -2.0};
  PerplexityItem b;
  b.label_logprobs = {-4.0, -3.0};
  b.mask = {0, 1};
  double expected = std::exp((1.0 + 2.0 + 3.0) / 3.0);
  CHECK(perplexity({a, b}) == doctest::Approx(expected).epsilon(1e-12));

  CHECK_THROWS_AS(perplexity({}), ConfigError);
}

TEST_SUITE_END();
