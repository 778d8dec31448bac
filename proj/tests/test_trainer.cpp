#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pvtformer/checkpoint.hpp"
#include "pvtformer/trainer.hpp"

using namespace pvt;

namespace {

std::string temp_path(const char* name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove(p);
  return p.string();
}

PVTFormerConfig fast_config() {
  PVTFormerConfig c = PVTFormerConfig::tiny();
  c.out_h = 32;
  c.out_w = 32;
  return c;
}

std::vector<Slice> phantom_slices(std::uint64_t seed, int patients,
                                  int per_patient) {
  std::vector<Slice> slices;
  for (const auto& v : synth_phantom(seed, patients, per_patient, 32)) {
    auto s = volume_to_slices(v, 32);
    slices.insert(slices.end(), s.begin(), s.end());
  }
  return slices;
}

}  // namespace

TEST_CASE("early stopping tracks the strict best and trips after patience") {
  EarlyStopping es(2);
  CHECK(es.observe(1, 1.0));
  CHECK(es.observe(2, 0.9));
  CHECK(!es.observe(3, 0.95));
  CHECK(!es.should_stop());
  CHECK(!es.observe(4, 0.97));
  CHECK(es.should_stop());
  CHECK(es.best_epoch() == 2);
  CHECK(es.best_value() == 0.9);
  CHECK(!es.observe(5, 0.9));  // ties do not improve
  CHECK_THROWS_AS(EarlyStopping(0), std::invalid_argument);
}

TEST_CASE("adam reproduces a hand-stepped quadratic to double precision") {
  double w = 1.0, g = 0.0;
  ParamRegistry<double> reg;
  reg.add("w", {1}, &w, &g);

  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.beta1 = 0.9;
  cfg.beta2 = 0.999;
  cfg.eps = 1e-8;
  Adam<double> opt(cfg);

  double ref_w = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    g = 2.0 * w;
    opt.step(reg);

    const double ref_g = 2.0 * ref_w;
    m = 0.9 * m + 0.1 * ref_g;
    v = 0.999 * v + 0.001 * ref_g * ref_g;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    ref_w -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(std::abs(w - ref_w) < 1e-12);
  }
  CHECK(opt.t() == 5);
  CHECK(std::abs(w) < 1.0);
}

TEST_CASE("train config validation rejects nonsense") {
  TrainConfig c;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lr = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.beta2 = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.patience = 60;
  c.max_epochs = 50;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("training is deterministic given the config seed") {
  auto train_slices = phantom_slices(301, 2, 2);
  auto val_slices = phantom_slices(302, 1, 2);

  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_epochs = 2;
  cfg.patience = 2;
  cfg.seed = 9;

  PVTFormer<float> a(fast_config());
  TrainResult ra = train(a, cfg, train_slices, val_slices);
  PVTFormer<float> b(fast_config());
  TrainResult rb = train(b, cfg, train_slices, val_slices);

  REQUIRE(ra.history.size() == rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    CHECK(ra.history[i].train_loss == rb.history[i].train_loss);
    CHECK(ra.history[i].val_loss == rb.history[i].val_loss);
  }
  CHECK(ra.best_epoch == rb.best_epoch);
  CHECK(ra.steps == rb.steps);

  Tensor4D<float> x = slices_to_input(val_slices, {0});
  Tensor4D<float> pa = a.forward(x, Phase::eval);
  Tensor4D<float> pb = b.forward(x, Phase::eval);
  for (Index i = 0; i < pa.size(); ++i) CHECK(pa.data()[i] == pb.data()[i]);
}

TEST_CASE("checkpoints round-trip weights, config and optimizer state") {
  const std::string path = temp_path("pvt_ckpt_roundtrip.bin");
  auto train_slices = phantom_slices(311, 2, 2);
  auto val_slices = phantom_slices(312, 1, 2);

  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.max_epochs = 2;
  cfg.patience = 2;
  cfg.seed = 13;

  PVTFormer<float> model(fast_config());
  TrainResult r = train(model, cfg, train_slices, val_slices, path);
  REQUIRE(std::filesystem::exists(path));
  CHECK(r.best_epoch >= 1);

  PVTFormerConfig stored = checkpoint_config(path);
  CHECK(stored.out_h == 32);
  PVTFormer<float> reloaded(stored);
  ParamRegistry<float> reg;
  reloaded.collect(reg);
  Adam<float> opt;
  CheckpointMeta meta = load_checkpoint(path, reg, &opt);
  CHECK(meta.epoch == r.best_epoch);
  CHECK(meta.best_val_loss == doctest::Approx(r.best_val_loss).epsilon(1e-12));
  CHECK(meta.has_optimizer);
  CHECK(opt.t() > 0);
  CHECK(meta.adam_t == opt.t());

  Tensor4D<float> x = slices_to_input(val_slices, {0, 1});
  Tensor4D<float> pa = model.forward(x, Phase::eval);
  Tensor4D<float> pb = reloaded.forward(x, Phase::eval);
  for (Index i = 0; i < pa.size(); ++i) CHECK(pa.data()[i] == pb.data()[i]);

  MetricsReport ra = evaluate(model, val_slices);
  MetricsReport rb = evaluate(reloaded, val_slices);
  CHECK(std::abs(ra.mean_dice - rb.mean_dice) < 1e-12);

  std::filesystem::remove(path);
}

TEST_CASE("adam moments survive the checkpoint byte-for-byte") {
  const std::string path = temp_path("pvt_ckpt_moments.bin");
  PVTFormer<float> model(fast_config());
  model.init(5);
  ParamRegistry<float> reg;
  model.collect(reg);

  Adam<float> opt(AdamConfig{1e-3, 0.9, 0.999, 1e-8});
  reg.zero_grad();
  for (auto& e : reg.entries()) {
    if (!e.trainable) continue;
    for (std::int64_t i = 0; i < e.count(); ++i)
      e.grad[i] = static_cast<float>(0.01 * ((i % 7) - 3));
  }
  opt.step(reg);
  opt.step(reg);
  save_checkpoint(path, model.cfg, reg, 2, 0.5, &opt);

  PVTFormer<float> other(fast_config());
  ParamRegistry<float> reg2;
  other.collect(reg2);
  Adam<float> opt2;
  load_checkpoint(path, reg2, &opt2);
  CHECK(opt2.t() == 2);
  REQUIRE(opt2.m().size() == opt.m().size());
  for (std::size_t s = 0; s < opt.m().size(); ++s) {
    for (Index i = 0; i < opt.m()[s].size(); ++i) {
      CHECK(opt.m()[s][i] == opt2.m()[s][i]);
      CHECK(opt.v()[s][i] == opt2.v()[s][i]);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("corrupt and mismatched checkpoints are rejected") {
  const std::string path = temp_path("pvt_ckpt_bad.bin");
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOTAPVTC garbage";
  }
  PVTFormer<float> model(fast_config());
  ParamRegistry<float> reg;
  model.collect(reg);
  CHECK_THROWS_AS(load_checkpoint(path, reg), std::runtime_error);
  CHECK_THROWS_AS(checkpoint_config(path), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint(temp_path("pvt_ckpt_absent.bin"), reg),
                  std::runtime_error);

  // A checkpoint for a different architecture must not half-load.
  const std::string other_path = temp_path("pvt_ckpt_other.bin");
  PVTFormerConfig big = fast_config();
  big.reduce_c = 24;
  PVTFormer<float> bigger(big);
  bigger.init(3);
  ParamRegistry<float> bigreg;
  bigger.collect(bigreg);
  save_checkpoint(other_path, big, bigreg, 1, 1.0);
  CHECK_THROWS_AS(load_checkpoint(other_path, reg), std::runtime_error);

  std::filesystem::remove(path);
  std::filesystem::remove(other_path);
}

TEST_CASE("history csv lists one 1-based row per epoch") {
  const std::string path = temp_path("pvt_history.csv");
  std::vector<EpochStats> hist = {{1, 0.5, 0.6}, {2, 0.4, 0.55}};
  write_history_csv(path, hist);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "epoch,train_loss,val_loss");
  std::getline(f, line);
  CHECK(line.rfind("1,", 0) == 0);
  std::getline(f, line);
  CHECK(line.rfind("2,", 0) == 0);
  CHECK(!std::getline(f, line));
  std::filesystem::remove(path);
}

TEST_CASE("evaluate reports one row per slice with dataset stems") {
  auto slices = phantom_slices(321, 1, 3);
  PVTFormer<float> model(fast_config());
  model.init(17);
  MetricsReport r = evaluate(model, slices);
  REQUIRE(r.slices.size() == 3);
  CHECK(r.slices[0].slice_id == slice_stem(slices[0]));
  CHECK(r.slices[2].slice_id == slice_stem(slices[2]));
  for (const auto& s : r.slices) {
    CHECK(s.overlap.dice >= 0.0);
    CHECK(s.overlap.dice <= 1.0);
  }

  MetricsReport no_hd = evaluate(model, slices, 0.5, 8, false);
  CHECK(!no_hd.mean_hd.has_value());
  CHECK(no_hd.slices.size() == 3);
  CHECK(std::abs(no_hd.mean_dice - r.mean_dice) < 1e-12);
}

TEST_CASE("empty splits are contract violations") {
  std::vector<Slice> empty;
  auto some = phantom_slices(331, 1, 2);
  PVTFormer<float> model(fast_config());
  TrainConfig cfg;
  cfg.max_epochs = 1;
  cfg.patience = 1;
  CHECK_THROWS_AS(train(model, cfg, empty, some), std::invalid_argument);
  CHECK_THROWS_AS(train(model, cfg, some, empty), std::invalid_argument);
  CHECK_THROWS_AS(evaluate(model, empty), std::invalid_argument);
}
