#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <string>

#include "pvtformer/blockcheck.hpp"
#include "pvtformer/encoder.hpp"
#include "pvtformer/gradcheck.hpp"
#include "pvtformer/losses.hpp"

using namespace pvt;

namespace {

// Projection loss over the pyramid with the independent-input trick: the
// input itself is registered so coordinate draws also probe d(loss)/d(x).
GradCheckSummary encoder_check(bool linear_sra, bool with_stage4,
                               std::uint64_t seed) {
  PVTv2Config cfg = PVTv2Config::tiny();
  cfg.linear_sra = linear_sra;
  PvtV2Encoder<double> enc(cfg);
  Rng init_rng(seed);
  enc.init(init_rng);

  Tensor4D<double> x(1, cfg.in_channels, 32, 32);
  Tensor4D<double> dx(1, cfg.in_channels, 32, 32);
  Rng data_rng(seed + 1);
  for (Index i = 0; i < x.size(); ++i) x.flat()[i] = data_rng.normal();

  ParamRegistry<double> reg;
  enc.collect(reg, "enc");
  reg.add("x", {x.n(), x.c(), x.h(), x.w()}, x.data(), dx.data());

  Rng jitter_rng(seed + 2);
  perturb_params(reg, jitter_rng, 0.05);

  FeaturePyramid<double> fp = enc.forward(x, Phase::train);
  Rng proj_rng(seed + 3);
  ArrX<double> r1 = make_projection<double>(fp.f1.size(), proj_rng);
  ArrX<double> r2 = make_projection<double>(fp.f2.size(), proj_rng);
  ArrX<double> r3 = make_projection<double>(fp.f3.size(), proj_rng);
  ArrX<double> r4 = make_projection<double>(fp.f4.size(), proj_rng);

  auto loss = [&]() {
    FeaturePyramid<double> out = enc.forward(x, Phase::train);
    double acc = projection_loss(ArrX<double>(out.f1.flat()), r1) +
                 projection_loss(ArrX<double>(out.f2.flat()), r2) +
                 projection_loss(ArrX<double>(out.f3.flat()), r3);
    if (with_stage4)
      acc += projection_loss(ArrX<double>(out.f4.flat()), r4);
    return acc;
  };

  loss();
  reg.zero_grad();
  FeaturePyramid<double> dfp;
  dfp.f1 = fp.f1;
  dfp.f2 = fp.f2;
  dfp.f3 = fp.f3;
  dfp.f4 = fp.f4;
  dfp.f1.flat() = r1;
  dfp.f2.flat() = r2;
  dfp.f3.flat() = r3;
  if (with_stage4)
    dfp.f4.flat() = r4;
  else
    dfp.f4.flat().setZero();
  dx.flat() = enc.backward(dfp, with_stage4).flat();

  Rng pick_rng(seed + 4);
  return gradcheck_params(reg, loss, pick_rng, 16);
}

}  // namespace

TEST_CASE("every block backward matches finite differences") {
  for (auto& bc : block_gradchecks()) {
    GradCheckSummary s = bc.run(42, 20);
    INFO(bc.name, " worst ", s.worst, " rel ", s.max_rel_err);
    CHECK(s.pass(1e-3));
  }
}

TEST_CASE("tiny encoder gradients check out with conv reduction") {
  GradCheckSummary s = encoder_check(false, true, 64);
  INFO("worst ", s.worst, " rel ", s.max_rel_err);
  CHECK(s.pass(1e-3));
}

TEST_CASE("tiny encoder gradients check out with linear reduction") {
  GradCheckSummary s = encoder_check(true, true, 65);
  INFO("worst ", s.worst, " rel ", s.max_rel_err);
  CHECK(s.pass(1e-3));
}

TEST_CASE("skipping stage four zeroes its contribution consistently") {
  GradCheckSummary s = encoder_check(false, false, 66);
  INFO("worst ", s.worst, " rel ", s.max_rel_err);
  CHECK(s.pass(1e-3));
}

TEST_CASE("combined loss gradient agrees with finite differences densely") {
  Rng rng(71);
  Tensor4D<double> z(2, 1, 4, 4), y(2, 1, 4, 4), dz;
  for (Index i = 0; i < z.size(); ++i) {
    z.flat()[i] = rng.normal();
    y.flat()[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  }
  combined_loss_grad(z, y, dz);
  const double h = 1e-6;
  for (Index i = 0; i < z.size(); ++i) {
    const double saved = z.flat()[i];
    z.flat()[i] = saved + h;
    const double lp = combined_loss(z, y).total;
    z.flat()[i] = saved - h;
    const double lm = combined_loss(z, y).total;
    z.flat()[i] = saved;
    const double fd = (lp - lm) / (2.0 * h);
    const double denom =
        std::max({std::abs(fd), std::abs(dz.flat()[i]), 1e-8});
    CHECK(std::abs(fd - dz.flat()[i]) / denom < 1e-6);
  }
}
