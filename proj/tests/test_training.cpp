#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "poda/trainer.hpp"
#include "test_support.hpp"

using namespace poda;

TEST_SUITE_BEGIN("training");

TEST_CASE("masked_nll_loss hand values") {
  // rows: log-probabilities; only the chosen label column matters
  auto lp = [&](std::vector<double> label_logps) {
    const int64_t rows = static_cast<int64_t>(label_logps.size());
    Tensor<double> m = Tensor<double>::filled({rows, 3}, -50.0);
    for (int64_t i = 0; i < rows; ++i) m.ptr()[i * 3 + 1] = label_logps[static_cast<size_t>(i)];
    return m;
  };

  MaskedLossStats stats;
  auto zero = masked_nll_loss(lp({-2.0, -3.0}), {1, 1}, {0, 0}, &stats);
  CHECK(zero.item() == 0.0);
  CHECK(stats.all_zero_mask_warnings == 1);

  auto single = masked_nll_loss(lp({-2.0}), {1}, {1});
  CHECK(single.item() == doctest::Approx(2.0));  // p = e^-2

  auto pair = masked_nll_loss(lp({-1.0, -3.0}), {1, 1}, {1, 1});
  CHECK(pair.item() == doctest::Approx(2.0));  // mean of 1 and 3

  auto partial = masked_nll_loss(lp({-1.0, -3.0, -7.0}), {1, 1, 1}, {1, 0, 1});
  CHECK(partial.item() == doctest::Approx(4.0));  // mean of 1 and 7

  auto sum = masked_nll_sum(lp({-1.0, -3.0}), {1, 1}, {1, 1});
  CHECK(sum.item() == doctest::Approx(4.0));
}

TEST_CASE("masked loss has exactly zero gradient at unmasked rows") {
  Tape<double> tape;
  Rng rng(51);
  auto logits = test::random_tensor({4, 5}, rng);
  logits.watch(tape);
  auto logp = log_softmax(logits, -1);
  auto loss = masked_nll_loss(logp, {0, 1, 2, 3}, {1, 0, 1, 0});
  backward(loss);
  for (int64_t c = 0; c < 5; ++c) {
    CHECK(logits.grad()[static_cast<size_t>(1 * 5 + c)] == 0.0);
    CHECK(logits.grad()[static_cast<size_t>(3 * 5 + c)] == 0.0);
  }
  double row0 = 0;
  for (int64_t c = 0; c < 5; ++c) row0 += std::abs(logits.grad()[static_cast<size_t>(c)]);
  CHECK(row0 > 0.0);
}

TEST_CASE("clip_grad_norm endpoints and recomputed norm") {
  auto make_params = [](std::vector<double> grads) {
    ParameterSet<double> p;
    auto t = Tensor<double>::zeros({static_cast<int64_t>(grads.size())});
    t.grad() = grads;
    p.add("w", t);
    return p;
  };

  auto p1 = make_params({0.6, 0.8});  // norm 1.0
  auto r1 = clip_grad_norm(p1, 2.0);
  CHECK(r1.scale == doctest::Approx(1.0));
  CHECK(p1.at("w").grad()[0] == doctest::Approx(0.6));

  auto p2 = make_params({0.0, 4.0});  // norm 4.0
  auto r2 = clip_grad_norm(p2, 2.0);
  CHECK(r2.norm == doctest::Approx(4.0));
  CHECK(r2.scale == doctest::Approx(0.5));
  CHECK(p2.at("w").grad()[1] == doctest::Approx(2.0));

  Rng rng(52);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> g(8);
    for (auto& x : g) x = rng.normal(0.0, 2.0);
    auto p = make_params(g);
    double before = 0;
    for (double x : g) before += x * x;
    before = std::sqrt(before);
    clip_grad_norm(p, 2.0);
    double after = 0;
    for (double x : p.at("w").grad()) after += x * x;
    after = std::sqrt(after);
    CHECK(after == doctest::Approx(std::min(before, 2.0)).epsilon(1e-9));
    CHECK(after <= 2.0 + 1e-6);
  }

  auto bad = make_params({1.0, std::numeric_limits<double>::quiet_NaN()});
  auto rb = clip_grad_norm(bad, 2.0);
  CHECK(rb.skipped);
  CHECK(bad.at("w").grad()[0] == 0.0);
}

TEST_CASE("nag_step matches the hand-iterated recurrence") {
  // f(w) = w^2/2, grad = w; v <- mu v - lr g; w <- w + mu v - lr g
  const double mu = 0.9, lr = 0.1;
  double w = 1.0, v = 0.0;
  ParameterSet<double> params;
  auto t = Tensor<double>::from({1}, {1.0});
  params.add("w", t);
  OptimizerState<double> opt = OptimizerState<double>::init(params, lr, mu);

  for (int step = 0; step < 2; ++step) {
    double g = w;  // analytic gradient at the current point
    params.at("w").grad() = {g};
    nag_step(params, opt);
    v = mu * v - lr * g;
    w = w + mu * v - lr * g;
    CHECK(params.at("w").ptr()[0] == doctest::Approx(w).epsilon(1e-12));
    params.at("w").zero_grad();
  }
}

TEST_CASE("nag_step with zero momentum is plain gradient descent") {
  ParameterSet<double> params;
  params.add("w", Tensor<double>::from({2}, {1.0, -2.0}));
  params.at("w").grad() = {0.5, 0.25};
  OptimizerState<double> opt = OptimizerState<double>::init(params, 0.1, 0.0);
  nag_step(params, opt);
  CHECK(params.at("w").ptr()[0] == doctest::Approx(1.0 - 0.1 * 0.5));
  CHECK(params.at("w").ptr()[1] == doctest::Approx(-2.0 - 0.1 * 0.25));

  // zero gradient, zero velocity: parameters unchanged
  params.at("w").zero_grad();
  opt.velocity[0] = Tensor<double>::zeros({2});
  auto before = params.at("w").data();
  nag_step(params, opt);
  CHECK(params.at("w").data() == before);
}

TEST_CASE("ema_update closed form") {
  ParameterSet<double> params;
  params.add("w", Tensor<double>::from({1}, {3.0}));
  EmaState<double> ema = EmaState<double>::init(params, 0.9);
  ema.shadow[0].ptr()[0] = 10.0;  // shadow_0

  const int k = 7;
  for (int i = 0; i < k; ++i) ema_update(ema, params);
  double expect = std::pow(0.9, k) * 10.0 + (1.0 - std::pow(0.9, k)) * 3.0;
  CHECK(ema.shadow[0].ptr()[0] == doctest::Approx(expect).epsilon(1e-9));

  // decay 0 copies the parameters immediately
  EmaState<double> e0 = EmaState<double>::init(params, 0.0);
  e0.shadow[0].ptr()[0] = -100.0;
  ema_update(e0, params);
  CHECK(e0.shadow[0].ptr()[0] == doctest::Approx(3.0));
}

TEST_CASE("lr schedule decisions") {
  LrSchedule sched;
  sched.patience = 1;
  OptimizerState<double> opt;
  opt.learning_rate = 2e-3;

  CHECK(apply_lr_action(sched.update(3.0), opt, sched) == LrAction::keep);
  CHECK(apply_lr_action(sched.update(2.0), opt, sched) == LrAction::keep);
  CHECK(opt.learning_rate == doctest::Approx(2e-3));

  // equal loss is not an improvement
  CHECK(apply_lr_action(sched.update(2.0), opt, sched) == LrAction::halve);
  CHECK(opt.learning_rate == doctest::Approx(1e-3));

  // 1.5e-4 halves to 7.5e-5 < 1e-4: stop
  opt.learning_rate = 1.5e-4;
  CHECK(apply_lr_action(sched.update(5.0), opt, sched) == LrAction::stop);
  CHECK(opt.learning_rate == doctest::Approx(7.5e-5));
}

TEST_CASE("lr sequence is non-increasing for any loss sequence") {
  Rng rng(53);
  LrSchedule sched;
  OptimizerState<double> opt;
  opt.learning_rate = 2e-3;
  double prev = opt.learning_rate;
  for (int e = 0; e < 200; ++e) {
    LrAction a = apply_lr_action(sched.update(rng.uniform(0.0, 5.0)), opt, sched);
    CHECK(opt.learning_rate <= prev);
    prev = opt.learning_rate;
    if (a == LrAction::stop) break;
  }
  CHECK(opt.learning_rate < 2e-3);  // random losses must eventually halve
}

TEST_CASE("make_batches token-budget arithmetic") {
  Rng rng(54);
  std::vector<int64_t> ten(10, 300);
  auto b1 = make_batches(ten, 3000, rng);
  CHECK(b1.size() == 1);

  std::vector<int64_t> eleven(11, 300);
  auto b2 = make_batches(eleven, 3000, rng);
  REQUIRE(b2.size() == 2);
  CHECK(b2[0].size() + b2[1].size() == 11);
  CHECK(std::max(b2[0].size(), b2[1].size()) == 10);

  std::vector<int64_t> over = {3001};
  CHECK_THROWS_AS(make_batches(over, 3000, rng), ConfigError);
}

TEST_CASE("make_batches partitions the input exactly and respects the budget") {
  Rng rng(55);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<int64_t> lengths;
    size_t n = 1 + rng.uniform_int(60);
    for (size_t i = 0; i < n; ++i) lengths.push_back(1 + static_cast<int64_t>(rng.uniform_int(40)));
    auto batches = make_batches(lengths, 64, rng);
    std::set<int32_t> seen;
    for (const auto& b : batches) {
      REQUIRE_FALSE(b.empty());
      int64_t mx = 0;
      for (int32_t idx : b) {
        CHECK(seen.insert(idx).second);  // each example exactly once
        mx = std::max(mx, lengths[static_cast<size_t>(idx)]);
      }
      CHECK(mx * static_cast<int64_t>(b.size()) <= 64);
    }
    CHECK(seen.size() == n);
  }
}

TEST_CASE("average_gradients identity and mean") {
  auto g1 = std::vector<Tensor<double>>{Tensor<double>::from({2}, {1.0, 3.0})};
  auto g2 = std::vector<Tensor<double>>{Tensor<double>::from({2}, {3.0, 5.0})};

  auto same = average_gradients<double>({g1});
  CHECK(same[0].data() == g1[0].data());

  auto dup = average_gradients<double>({g1, g1});
  CHECK(dup[0].data() == g1[0].data());

  auto mean = average_gradients<double>({g1, g2});
  CHECK(mean[0].ptr()[0] == doctest::Approx(2.0));
  CHECK(mean[0].ptr()[1] == doctest::Approx(4.0));

  auto bad = std::vector<Tensor<double>>{Tensor<double>::from({3}, {1, 2, 3})};
  CHECK_THROWS_AS(average_gradients<double>({g1, bad}), ShapeError);
}

TEST_CASE("gradient sharding equals the unsplit batch gradient") {
  // grad of (L1 + L2)/2 computed in one pass vs average_gradients over the
  // two per-shard gradients, on a tiny double model
  auto model = test::tiny_model<double>(16, 61);
  Vocabulary v = test::toy_vocab(10);
  auto [s1, t1] = encode_extended({"w0", "w1", "w2"}, {"w0", "w1"}, v);
  auto [s2, t2] = encode_extended({"w3", "w4"}, {"w3", "w4", "w0"}, v);
  std::vector<uint8_t> m1 = {1, 1, 1};
  std::vector<uint8_t> m2 = {1, 0, 1, 1};

  auto shard_grads = [&](const TokenSequence& src, const TokenSequence& tgt,
                         const std::vector<uint8_t>& mask) {
    Tape<double> tape;
    model.params.attach(tape);
    model.params.zero_grad();
    auto loss = masked_nll_loss(model.forward_logprobs(src, tgt, Mode::eval),
                                TransformerPg<double>::labels(tgt), mask);
    backward(loss);
    std::vector<Tensor<double>> grads;
    for (auto& [name, t] : model.params)
      grads.push_back(Tensor<double>::from(t.shape(), t.grad()));
    model.params.detach();
    return grads;
  };

  auto ga = shard_grads(s1, t1, m1);
  auto gb = shard_grads(s2, t2, m2);
  auto averaged = average_gradients<double>({ga, gb});

  Tape<double> tape;
  model.params.attach(tape);
  model.params.zero_grad();
  auto la = masked_nll_loss(model.forward_logprobs(s1, t1, Mode::eval),
                            TransformerPg<double>::labels(t1), m1);
  auto lb = masked_nll_loss(model.forward_logprobs(s2, t2, Mode::eval),
                            TransformerPg<double>::labels(t2), m2);
  auto mean_loss = scalar_mul(add(la, lb), 0.5);
  backward(mean_loss);

  size_t idx = 0;
  for (auto& [name, t] : model.params) {
    const auto& got = averaged[idx++].data();
    const auto& want = t.grad();
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-6));
  }
  model.params.detach();
}

namespace {

Trainer::DataFn fixed_pairs_provider(const std::vector<TrainItem>& items) {
  return [items](int64_t) { return items; };
}

std::vector<TrainItem> copy_task_items(const Vocabulary& v, int n, uint64_t seed, size_t len = 4) {
  Rng rng(seed);
  std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> pairs;
  for (int i = 0; i < n; ++i) {
    auto s = test::toy_sentence(v, len, rng);
    pairs.emplace_back(s, s);
  }
  return make_pair_items(pairs, v);
}

}  // namespace

TEST_CASE("trainer loss decreases on a tiny copy task") {
  Vocabulary v = test::toy_vocab(12);
  auto items = copy_task_items(v, 24, 62);
  auto model = test::tiny_model<float>(v.total_size(), 63, 16, 1, 2, 32);

  TrainOptions opts;
  opts.learning_rate = 2e-3;
  opts.token_budget = 200;
  opts.max_iterations = 60;
  opts.seed = 7;
  Trainer trainer(std::move(model), opts, v.content_hash());
  TrainResult r = trainer.run(fixed_pairs_provider(items), {});
  REQUIRE(r.iteration_losses.size() == 60);
  double first = r.iteration_losses[0];
  double last = r.iteration_losses.back();
  CHECK(last < first * 0.8);
}

TEST_CASE("trainer trace is deterministic under a fixed seed") {
  Vocabulary v = test::toy_vocab(12);
  auto items = copy_task_items(v, 12, 64);
  auto run_once = [&] {
    auto model = test::tiny_model<float>(v.total_size(), 65, 16, 1, 2, 32);
    TrainOptions opts;
    opts.token_budget = 100;
    opts.max_iterations = 20;
    opts.seed = 9;
    Trainer trainer(std::move(model), opts, v.content_hash());
    return trainer.run(fixed_pairs_provider(items), {}).iteration_losses;
  };
  CHECK(run_once() == run_once());  // bitwise identical trace
}

TEST_CASE("resume from checkpoint reproduces the uninterrupted trace") {
  Vocabulary v = test::toy_vocab(12);
  auto items = copy_task_items(v, 18, 66);
  auto val = copy_task_items(v, 6, 67);
  TrainOptions opts;
  opts.token_budget = 90;  // several batches per epoch, so the cut is mid-epoch
  opts.max_iterations = 30;
  opts.seed = 11;

  auto fresh_model = [&] { return test::tiny_model<float>(v.total_size(), 68, 16, 1, 2, 32); };

  Trainer full(fresh_model(), opts, v.content_hash());
  TrainResult r_full = full.run(fixed_pairs_provider(items), val);

  TrainOptions first_half = opts;
  first_half.max_iterations = 13;
  Trainer part1(fresh_model(), first_half, v.content_hash());
  TrainResult r1 = part1.run(fixed_pairs_provider(items), val);
  Checkpoint ckpt = part1.make_checkpoint();

  auto path = std::filesystem::temp_directory_path() / "poda_resume_test.poda";
  save_checkpoint(ckpt, path.string());
  Checkpoint loaded = load_checkpoint(path.string());
  std::filesystem::remove(path);

  Trainer part2 = Trainer::resume(loaded, opts);
  TrainResult r2 = part2.run(fixed_pairs_provider(items), val);

  std::vector<double> stitched = r1.iteration_losses;
  stitched.insert(stitched.end(), r2.iteration_losses.begin(), r2.iteration_losses.end());
  CHECK(stitched == r_full.iteration_losses);

  REQUIRE(r_full.epochs.size() == r1.epochs.size() + r2.epochs.size());
  size_t k = 0;
  for (const auto& e : r1.epochs) {
    CHECK(e.val_loss == r_full.epochs[k].val_loss);
    CHECK(e.train_loss == r_full.epochs[k].train_loss);
    ++k;
  }
  for (const auto& e : r2.epochs) {
    CHECK(e.val_loss == r_full.epochs[k].val_loss);
    CHECK(e.train_loss == r_full.epochs[k].train_loss);
    ++k;
  }
}

TEST_CASE("fine-tuning from a random-init checkpoint equals training from scratch") {
  Vocabulary v = test::toy_vocab(12);
  auto items = copy_task_items(v, 10, 70);
  TrainOptions opts;
  opts.token_budget = 100;
  opts.max_iterations = 10;
  opts.seed = 13;

  Trainer scratch(test::tiny_model<float>(v.total_size(), 71, 16, 1, 2, 32), opts, v.content_hash());
  auto trace_scratch = scratch.run(fixed_pairs_provider(items), {}).iteration_losses;

  // write the same freshly initialized model through a checkpoint first
  Trainer init_only(test::tiny_model<float>(v.total_size(), 71, 16, 1, 2, 32), opts, v.content_hash());
  Checkpoint ckpt = init_only.make_checkpoint();
  Trainer resumed = Trainer::resume(ckpt, opts);
  auto trace_resumed = resumed.run(fixed_pairs_provider(items), {}).iteration_losses;

  CHECK(trace_scratch == trace_resumed);
}

TEST_CASE("pretraining loss decreases over the first 200 iterations, median of 3 seeds") {
  int successes = 0;
  for (uint64_t seed : {21ULL, 22ULL, 23ULL}) {
    Rng crng(seed);
    std::vector<std::vector<std::string>> corpus;
    Vocabulary v = test::toy_vocab(25);
    for (int i = 0; i < 100; ++i) corpus.push_back(test::toy_sentence(v, 3 + crng.uniform_int(3), crng));

    auto model = test::tiny_model<float>(v.total_size(), seed ^ 0x5a, 32, 1, 2, 64);
    TrainOptions opts;
    opts.seed = seed;
    opts.token_budget = 100;
    opts.max_iterations = 200;
    opts.warmup_steps = 100;
    Trainer trainer(std::move(model), opts, v.content_hash());
    auto provider = make_denoising_provider(corpus, NoiseConfig::defaults(), v, seed);
    TrainResult r = trainer.run(provider, {});
    REQUIRE(r.iteration_losses.size() == 200);
    double head = 0, tail = 0;
    for (int i = 0; i < 50; ++i) head += r.iteration_losses[static_cast<size_t>(i)];
    for (int i = 150; i < 200; ++i) tail += r.iteration_losses[static_cast<size_t>(i)];
    if (tail < head) ++successes;
  }
  CHECK(successes >= 2);  // median of three seeds improves
}

TEST_CASE("denoising provider is reproducible and epoch-varying") {
  Vocabulary v = test::toy_vocab(15);
  std::vector<std::vector<std::string>> segments;
  Rng rng(72);
  for (int i = 0; i < 8; ++i) segments.push_back(test::toy_sentence(v, 6, rng));
  auto provider = make_denoising_provider(segments, NoiseConfig::defaults(), v, 99);

  auto e0a = provider(0);
  auto e0b = provider(0);
  REQUIRE(e0a.size() == e0b.size());
  for (size_t i = 0; i < e0a.size(); ++i) {
    CHECK(e0a[i].source.words == e0b[i].source.words);
    CHECK(e0a[i].mask == e0b[i].mask);
  }
  auto e1 = provider(1);
  bool any_diff = false;
  for (size_t i = 0; i < e0a.size(); ++i)
    if (e0a[i].source.words != e1[i].source.words || e0a[i].mask != e1[i].mask) any_diff = true;
  CHECK(any_diff);

  // the mask always has one extra entry for the EOS label row
  for (const auto& item : e0a) CHECK(item.mask.size() == item.target.size() + 1);
}

TEST_SUITE_END();
