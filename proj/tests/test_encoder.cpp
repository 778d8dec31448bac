#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pvtformer/encoder.hpp"

using namespace pvt;

namespace {

Tensor4D<float> random_input(Index n, Index h, Index w, std::uint64_t seed) {
  Tensor4D<float> x(n, 3, h, w);
  Rng rng(seed);
  for (Index i = 0; i < x.size(); ++i)
    x.flat()[i] = static_cast<float>(rng.normal());
  return x;
}

}  // namespace

TEST_CASE("config validation rejects malformed stage settings") {
  PVTv2Config c = PVTv2Config::tiny();
  c.embed_dims = {8, 16, 16, 32};  // not strictly increasing
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  PVTv2Config d = PVTv2Config::tiny();
  d.heads = {3, 2, 4, 8};  // 8 % 3 != 0
  CHECK_THROWS_AS(d.validate(), std::invalid_argument);

  PVTv2Config e = PVTv2Config::tiny();
  e.depths = {0, 1, 1, 1};
  CHECK_THROWS_AS(e.validate(), std::invalid_argument);
}

TEST_CASE("b3 pyramid strides are 4, 8, 16, 32 with the published widths") {
  PvtV2Encoder<float> enc{PVTv2Config::b3()};
  Rng rng(1);
  enc.init(rng);
  Tensor4D<float> x = random_input(1, 64, 64, 2);
  FeaturePyramid<float> fp = enc.forward(x, Phase::eval);
  CHECK(fp.f1.c() == 64);
  CHECK(fp.f1.h() == 16);
  CHECK(fp.f2.c() == 128);
  CHECK(fp.f2.h() == 8);
  CHECK(fp.f3.c() == 320);
  CHECK(fp.f3.h() == 4);
  CHECK(fp.f4.c() == 512);
  CHECK(fp.f4.h() == 2);
  CHECK(fp.f1.flat().isFinite().all());
  CHECK(fp.f4.flat().isFinite().all());
}

TEST_CASE("pyramid shapes are a pure function of the input shape") {
  PvtV2Encoder<float> enc{PVTv2Config::tiny()};
  Rng rng(3);
  enc.init(rng);
  for (Index n : {Index(1), Index(2)}) {
    FeaturePyramid<float> a = enc.forward(random_input(n, 32, 64, 4), Phase::eval);
    FeaturePyramid<float> b = enc.forward(random_input(n, 32, 64, 5), Phase::eval);
    CHECK(a.f1.n() == n);
    CHECK(a.f4.n() == n);
    CHECK(a.f1.h() == b.f1.h());
    CHECK(a.f1.w() == 16);
    CHECK(a.f1.h() == 8);
    CHECK(a.f4.w() == 2);
    CHECK(a.f4.h() == 1);
  }
}

TEST_CASE("doubling the input doubles every stage extent") {
  PvtV2Encoder<float> enc{PVTv2Config::tiny()};
  Rng rng(6);
  enc.init(rng);
  FeaturePyramid<float> small = enc.forward(random_input(1, 32, 32, 7), Phase::eval);
  FeaturePyramid<float> big = enc.forward(random_input(1, 64, 64, 7), Phase::eval);
  CHECK(big.f1.h() == 2 * small.f1.h());
  CHECK(big.f2.h() == 2 * small.f2.h());
  CHECK(big.f3.w() == 2 * small.f3.w());
  CHECK(big.f4.w() == 2 * small.f4.w());
}

TEST_CASE("encoder rejects wrong channel count and off-grid sizes") {
  PvtV2Encoder<float> enc{PVTv2Config::tiny()};
  Rng rng(8);
  enc.init(rng);
  Tensor4D<float> bad_c(1, 4, 32, 32);
  CHECK_THROWS_AS(enc.forward(bad_c, Phase::eval), std::invalid_argument);
  Tensor4D<float> bad_h(1, 3, 48, 32);
  CHECK_THROWS_AS(enc.forward(bad_h, Phase::eval), std::invalid_argument);
}

TEST_CASE("parameter names follow the stage/block traversal") {
  PvtV2Encoder<float> enc{PVTv2Config::tiny()};
  ParamRegistry<float> reg;
  enc.collect(reg, "enc");
  CHECK(reg.find("enc.stage1.patch.conv.weight") != nullptr);
  CHECK(reg.find("enc.stage1.block0.attn.q.weight") != nullptr);
  CHECK(reg.find("enc.stage4.norm.gamma") != nullptr);
  CHECK(reg.find("enc.stage4.block0.ffn.dwconv.weight") != nullptr);
}

TEST_CASE("linear-sra variant runs every stage through the pooled path") {
  PVTv2Config cfg = PVTv2Config::tiny();
  cfg.linear_sra = true;
  PvtV2Encoder<float> enc{cfg};
  Rng rng(9);
  enc.init(rng);
  FeaturePyramid<float> fp = enc.forward(random_input(2, 32, 32, 10), Phase::train);
  CHECK(fp.f1.n() == 2);
  CHECK(fp.f4.h() == 1);
  CHECK(fp.f1.flat().isFinite().all());
  // Pooled reduction fixes the key/value token count at 49 in each stage.
  CHECK(enc.stages[0].blocks[0].attn.attention_maps()[0].cols() == 49);
  CHECK(enc.stages[3].blocks[0].attn.attention_maps()[0].cols() == 49);
}
