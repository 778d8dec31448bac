#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "pvtformer/analysis.hpp"

using namespace pvt;

namespace {

const ModuleCost& module_row(const ComplexityReport& r, const std::string& name) {
  for (const auto& m : r.modules)
    if (m.name == name) return m;
  REQUIRE_MESSAGE(false, "missing module row: ", name);
  static ModuleCost dummy;
  return dummy;
}

std::int64_t registry_trainable(const PVTFormerConfig& cfg) {
  PVTFormer<float> model(cfg);
  ParamRegistry<float> reg;
  model.collect(reg);
  return reg.trainable_count();
}

}  // namespace

TEST_CASE("a plain conv row counts kernel times channel products") {
  // Conv2d(64, 64, k3, no bias): 64*64*9 weights.
  Conv2d<float> conv(64, 64, 3, 1, 1, false);
  ParamRegistry<float> reg;
  conv.collect(reg, "c");
  CHECK(reg.trainable_count() == 36864);
}

TEST_CASE("closed form equals runtime enumeration for every variant") {
  CHECK(closed_form_params(PVTFormerConfig::base()) ==
        registry_trainable(PVTFormerConfig::base()));
  CHECK(closed_form_params(PVTFormerConfig::tiny()) ==
        registry_trainable(PVTFormerConfig::tiny()));
  PVTFormerConfig lin = PVTFormerConfig::base();
  lin.encoder.linear_sra = true;
  CHECK(closed_form_params(lin) == registry_trainable(lin));
}

TEST_CASE("default model sits within 2 percent of 45.51M parameters") {
  const double params =
      static_cast<double>(closed_form_params(PVTFormerConfig::base()));
  CHECK(std::abs(params - 45.51e6) / 45.51e6 < 0.02);
  CHECK(closed_form_params(PVTFormerConfig::base()) == 45420289);
}

TEST_CASE("default model sits within 15 percent of 43.22 GMac at 256") {
  const double macs = static_cast<double>(
      count_macs(PVTFormerConfig::base(), 1, 256, 256));
  CHECK(std::abs(macs - 43.22e9) / 43.22e9 < 0.15);
}

TEST_CASE("tiny preset stays under a million parameters") {
  CHECK(closed_form_params(PVTFormerConfig::tiny()) == 97209);
  CHECK(closed_form_params(PVTFormerConfig::tiny()) < 1000000);
  CHECK(count_macs(PVTFormerConfig::tiny(), 1, 64, 64) == 112006144);
}

TEST_CASE("parameter counts are independent of the input extent") {
  ComplexityReport at128 = complexity_report(PVTFormerConfig::base(), 1, 128, 128);
  ComplexityReport at256 = complexity_report(PVTFormerConfig::base(), 1, 256, 256);
  CHECK(at128.total_params == at256.total_params);
  REQUIRE(at128.modules.size() == at256.modules.size());
  for (std::size_t i = 0; i < at128.modules.size(); ++i)
    CHECK(at128.modules[i].params == at256.modules[i].params);
}

TEST_CASE("reduce3 costs exactly its 1x1 conv at stride 16") {
  ComplexityReport r = complexity_report(PVTFormerConfig::base(), 1, 256, 256);
  const ModuleCost& reduce3 = module_row(r, "reduce3");
  CHECK(reduce3.params == 20608);
  // 16x16 plane, 320 -> 64 channels: 16*16*64*320.
  CHECK(reduce3.macs == 5242880);
}

TEST_CASE("stride-locked rows scale with input; out-locked rows do not") {
  PVTFormerConfig cfg = PVTFormerConfig::base();
  ComplexityReport small = complexity_report(cfg, 1, 128, 128);
  ComplexityReport big = complexity_report(cfg, 1, 256, 256);
  for (const char* name : {"reduce1", "reduce2", "reduce3", "dec1", "dec2"}) {
    const ModuleCost& a = module_row(small, name);
    const ModuleCost& b = module_row(big, name);
    CHECK(b.macs == 4 * a.macs);
  }
  // The up blocks, fuse and head always run at cfg.out_h x cfg.out_w.
  for (const char* name : {"up1", "up2", "up3", "fuse", "head"}) {
    CHECK(module_row(small, name).macs == module_row(big, name).macs);
  }
}

TEST_CASE("macs scale linearly in the batch size") {
  const std::int64_t one = count_macs(PVTFormerConfig::tiny(), 1, 64, 64);
  CHECK(count_macs(PVTFormerConfig::tiny(), 3, 64, 64) == 3 * one);
}

TEST_CASE("report totals equal the sum of the module rows") {
  for (bool linear : {false, true}) {
    PVTFormerConfig cfg = PVTFormerConfig::tiny();
    cfg.encoder.linear_sra = linear;
    ComplexityReport r = complexity_report(cfg, 2, 64, 64);
    std::int64_t params = 0, macs = 0;
    for (const auto& m : r.modules) {
      params += m.params;
      macs += m.macs;
    }
    CHECK(params == r.total_params);
    CHECK(macs == r.total_macs);
    CHECK(r.total_params == closed_form_params(cfg));
    CHECK(r.total_macs == count_macs(cfg, 2, 64, 64));
  }
}

TEST_CASE("linear attention reduction lowers both params and macs") {
  PVTFormerConfig lin = PVTFormerConfig::base();
  lin.encoder.linear_sra = true;
  CHECK(closed_form_params(lin) == 38924545);
  CHECK(closed_form_params(lin) < closed_form_params(PVTFormerConfig::base()));
  CHECK(count_macs(lin, 1, 256, 256) <
        count_macs(PVTFormerConfig::base(), 1, 256, 256));
}

TEST_CASE("off-grid extents are rejected") {
  CHECK_THROWS_AS(complexity_report(PVTFormerConfig::base(), 1, 100, 256),
                  std::invalid_argument);
  CHECK_THROWS_AS(count_macs(PVTFormerConfig::base(), 0, 256, 256),
                  std::invalid_argument);
}

TEST_CASE("table and json renderings carry the same numbers") {
  ComplexityReport r = complexity_report(PVTFormerConfig::tiny(), 1, 64, 64);
  std::string table = complexity_table(r);
  CHECK(table.find("reduce3") != std::string::npos);
  CHECK(table.find("total") != std::string::npos);

  nlohmann::json j = nlohmann::json::parse(complexity_json(r));
  CHECK(j["total_params"].get<std::int64_t>() == r.total_params);
  CHECK(j["total_macs"].get<std::int64_t>() == r.total_macs);
  CHECK(j["modules"].size() == r.modules.size());
}
