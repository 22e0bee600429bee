#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "poda/checkpoint.hpp"
#include "poda/run_config.hpp"
#include "test_support.hpp"

using namespace poda;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("cli-formats");

namespace {

Checkpoint sample_checkpoint(uint64_t seed) {
  auto model = test::tiny_model<float>(20, seed);
  OptimizerState<Real> opt = OptimizerState<Real>::init(model.params, 1.5e-3, 0.97);
  EmaState<Real> ema = EmaState<Real>::init(model.params, 0.999);
  LrSchedule sched;
  sched.best_val_loss = 2.75;
  sched.halvings = 2;
  Checkpoint c = snapshot(model, opt, ema, sched, 0xabcdef1234ULL);
  c.iteration = 1234;
  c.epoch = 7;
  c.batch_in_epoch = 3;
  c.root_seed = 99;
  c.epoch_train_loss_sum = 17.5;
  c.epoch_train_batches = 3;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("checkpoint save/load/save is byte-identical") {
  auto dir = fs::temp_directory_path();
  auto p1 = dir / "poda_ckpt_a.poda";
  auto p2 = dir / "poda_ckpt_b.poda";

  Checkpoint c = sample_checkpoint(101);
  save_checkpoint(c, p1.string());
  Checkpoint loaded = load_checkpoint(p1.string());
  save_checkpoint(loaded, p2.string());
  CHECK(slurp(p1) == slurp(p2));

  CHECK(loaded.iteration == c.iteration);
  CHECK(loaded.epoch == c.epoch);
  CHECK(loaded.root_seed == c.root_seed);
  CHECK(loaded.vocab_hash == c.vocab_hash);
  CHECK(loaded.model_config == c.model_config);
  CHECK(loaded.schedule.best_val_loss == c.schedule.best_val_loss);
  CHECK(loaded.schedule.halvings == c.schedule.halvings);
  REQUIRE(loaded.params.size() == c.params.size());
  for (size_t i = 0; i < c.params.size(); ++i) {
    CHECK(loaded.params[i].first == c.params[i].first);
    CHECK(loaded.params[i].second.data() == c.params[i].second.data());
    CHECK(loaded.ema[i].second.data() == c.ema[i].second.data());
    CHECK(loaded.velocity[i].second.data() == c.velocity[i].second.data());
  }
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("checkpoint corruption errors name the failing section") {
  auto dir = fs::temp_directory_path();
  auto p = dir / "poda_ckpt_corrupt.poda";
  Checkpoint c = sample_checkpoint(102);
  save_checkpoint(c, p.string());
  std::string bytes = slurp(p);

  SUBCASE("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    std::ofstream(p, std::ios::binary).write(bad.data(), static_cast<std::streamsize>(bad.size()));
    CHECK_THROWS_WITH_AS(load_checkpoint(p.string()), doctest::Contains("magic"), CheckpointError);
  }
  SUBCASE("bad version") {
    std::string bad = bytes;
    bad[4] = 9;
    std::ofstream(p, std::ios::binary).write(bad.data(), static_cast<std::streamsize>(bad.size()));
    CHECK_THROWS_WITH_AS(load_checkpoint(p.string()), doctest::Contains("version"), CheckpointError);
  }
  SUBCASE("truncated params section") {
    std::string bad = bytes.substr(0, bytes.size() / 2);
    std::ofstream(p, std::ios::binary).write(bad.data(), static_cast<std::streamsize>(bad.size()));
    CHECK_THROWS_AS(load_checkpoint(p.string()), CheckpointError);
  }
  fs::remove(p);
}

TEST_CASE("restore_model rejects architecture mismatches") {
  Checkpoint c = sample_checkpoint(103);
  auto model = restore_model(c, false);
  CHECK(model.config == c.model_config);
  size_t i = 0;
  for (auto& [name, t] : model.params) {
    CHECK(t.data() == c.params[i++].second.data());
  }

  auto ema_model = restore_model(c, true);
  i = 0;
  for (auto& [name, t] : ema_model.params) {
    CHECK(t.data() == c.ema[i++].second.data());
  }

  Checkpoint broken = sample_checkpoint(104);
  broken.params[2].first = "not_a_real_parameter";
  CHECK_THROWS_AS(restore_model(broken, false), CheckpointError);
}

TEST_CASE("run config: defaults, presets, round trip") {
  RunConfig cfg;
  CHECK(cfg.d_model == 64);
  CHECK(cfg.max_iterations == 20000);

  cfg.apply_preset("paper");
  CHECK(cfg.d_model == 512);
  CHECK(cfg.n_layers_enc == 6);
  CHECK(cfg.d_ffn == 4096);
  CHECK(cfg.max_vocab == 50000);
  CHECK(cfg.max_iterations == 5000000);
  CHECK(cfg.learning_rate == doctest::Approx(2e-3));

  CHECK_THROWS_AS(cfg.apply_preset("gigantic"), ConfigError);

  // echo -> reload -> echo is a fixed point
  auto dir = fs::temp_directory_path();
  auto p = dir / "poda_cfg_echo.cfg";
  cfg.seed = 777;
  cfg.beam_size = 9;
  cfg.save(p.string());
  RunConfig reloaded;
  reloaded.load_file(p.string());
  CHECK(reloaded.serialize() == cfg.serialize());
  CHECK(reloaded.seed == 777);
  CHECK(reloaded.beam_size == 9);
  fs::remove(p);
}

TEST_CASE("run config rejects unknown keys and bad values") {
  auto dir = fs::temp_directory_path();
  auto p = dir / "poda_cfg_bad.cfg";

  {
    std::ofstream f(p);
    f << "[model]\nwarp_drive = on\n";
  }
  RunConfig cfg;
  CHECK_THROWS_WITH_AS(cfg.load_file(p.string()), doctest::Contains("warp_drive"), ConfigError);

  {
    std::ofstream f(p);
    f << "[warp]\nx = 1\n";
  }
  CHECK_THROWS_AS(cfg.load_file(p.string()), ConfigError);

  {
    std::ofstream f(p);
    f << "[model]\nd_model = sixty-four\n";
  }
  CHECK_THROWS_AS(cfg.load_file(p.string()), ConfigError);

  {
    std::ofstream f(p);
    f << "d_model = 64\n";  // key before any section
  }
  CHECK_THROWS_AS(cfg.load_file(p.string()), ConfigError);

  {
    std::ofstream f(p);
    f << "# comment only\n[model]\nd_model = 32\nn_heads = 4\n";
  }
  RunConfig ok;
  ok.load_file(p.string());
  CHECK(ok.d_model == 32);
  fs::remove(p);
}

TEST_CASE("desk checkpoints refuse fine-tuning under the paper preset") {
  Checkpoint c = sample_checkpoint(105);  // desk-shaped architecture
  RunConfig paper;
  paper.apply_preset("paper");
  ModelConfig want = paper.model_config(c.model_config.vocab_size);
  CHECK_FALSE(want == c.model_config);  // the CLI turns this into a ConfigError
}

TEST_SUITE_END();
