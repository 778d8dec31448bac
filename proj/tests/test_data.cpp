#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "pvtformer/data.hpp"

using namespace pvt;

namespace {

std::string temp_root(const char* tag) {
  auto p = std::filesystem::temp_directory_path() /
           (std::string("pvt_data_") + tag);
  std::filesystem::remove_all(p);
  return p.string();
}

// Connected components of the foreground under 4-adjacency.
int component_count(const Slice& s) {
  std::vector<char> seen(s.mask.size(), 0);
  int components = 0;
  for (Index start = 0; start < static_cast<Index>(s.mask.size()); ++start) {
    if (!s.mask[static_cast<std::size_t>(start)] ||
        seen[static_cast<std::size_t>(start)])
      continue;
    ++components;
    std::queue<Index> q;
    q.push(start);
    seen[static_cast<std::size_t>(start)] = 1;
    while (!q.empty()) {
      const Index cur = q.front();
      q.pop();
      const Index i = cur / s.w, j = cur % s.w;
      const Index ni[4] = {i - 1, i + 1, i, i};
      const Index nj[4] = {j, j, j - 1, j + 1};
      for (int d = 0; d < 4; ++d) {
        if (ni[d] < 0 || ni[d] >= s.h || nj[d] < 0 || nj[d] >= s.w) continue;
        const Index nxt = ni[d] * s.w + nj[d];
        if (s.mask[static_cast<std::size_t>(nxt)] &&
            !seen[static_cast<std::size_t>(nxt)]) {
          seen[static_cast<std::size_t>(nxt)] = 1;
          q.push(nxt);
        }
      }
    }
  }
  return components;
}

Index mask_area(const Slice& s) {
  Index area = 0;
  for (auto v : s.mask) area += v;
  return area;
}

}  // namespace

TEST_CASE("window normalization maps the clamp window onto [0,1]") {
  const std::int16_t hu[5] = {-200, 250, 25, -1000, 3000};
  float out[5];
  window_normalize(hu, 5, kWindowLo, kWindowHi, out);
  CHECK(out[0] == 0.0f);
  CHECK(out[1] == 1.0f);
  CHECK(out[2] == 0.5f);
  CHECK(out[3] == 0.0f);
  CHECK(out[4] == 1.0f);
}

TEST_CASE("windowing an already normalized plane with (0,1) is the identity") {
  const float v[4] = {0.0f, 0.25f, 0.75f, 1.0f};
  float out[4];
  window_normalize(v, 4, 0.0f, 1.0f, out);
  for (int i = 0; i < 4; ++i) CHECK(out[i] == v[i]);
}

TEST_CASE("bilinear resize to the same size is the identity") {
  std::vector<float> plane(7 * 5);
  for (std::size_t i = 0; i < plane.size(); ++i)
    plane[i] = static_cast<float>(i) * 0.013f;
  std::vector<float> out = resize_bilinear_plane(plane.data(), 7, 5, 7, 5);
  CHECK(std::memcmp(out.data(), plane.data(), plane.size() * sizeof(float)) == 0);
}

TEST_CASE("bilinear row doubling follows the half-pixel weights") {
  const float row[2] = {8.0f, 12.0f};
  std::vector<float> out = resize_bilinear_plane(row, 1, 2, 1, 4);
  CHECK(out[0] == doctest::Approx(8.0f));
  CHECK(out[1] == doctest::Approx(0.75f * 8.0f + 0.25f * 12.0f));
  CHECK(out[2] == doctest::Approx(0.25f * 8.0f + 0.75f * 12.0f));
  CHECK(out[3] == doctest::Approx(12.0f));
}

TEST_CASE("nearest mask downsampling keeps a centered square centered") {
  const Index n = 512;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n * n), 0);
  for (Index i = 128; i < 384; ++i)
    for (Index j = 128; j < 384; ++j)
      mask[static_cast<std::size_t>(i * n + j)] = 1;
  std::vector<std::uint8_t> out = resize_nearest_plane(mask.data(), n, n, 256, 256);
  for (Index i = 0; i < 256; ++i)
    for (Index j = 0; j < 256; ++j) {
      const bool inside = i >= 64 && i < 192 && j >= 64 && j < 192;
      CHECK(out[static_cast<std::size_t>(i * 256 + j)] == (inside ? 1 : 0));
    }
}

TEST_CASE("patient split covers 130 ids with disjoint 70/30/30") {
  std::vector<std::string> ids;
  for (int i = 0; i < 130; ++i) ids.push_back("p" + std::to_string(i));
  auto splits = split_by_patient(ids, SplitCounts{70, 30, 30}, 1234);
  CHECK(splits.at("train").size() == 70);
  CHECK(splits.at("val").size() == 30);
  CHECK(splits.at("test").size() == 30);
  std::set<std::string> all;
  for (const auto& [name, v] : splits)
    for (const auto& id : v) CHECK(all.insert(id).second);
  CHECK(all.size() == 130);

  auto again = split_by_patient(ids, SplitCounts{70, 30, 30}, 1234);
  CHECK(again.at("train") == splits.at("train"));
  CHECK(again.at("val") == splits.at("val"));
  CHECK(again.at("test") == splits.at("test"));
}

TEST_CASE("patient split rejects counts that disagree with the roster") {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("p" + std::to_string(i));
  CHECK_THROWS_AS(split_by_patient(ids, SplitCounts{8, 2, 2}, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(split_by_patient(ids, SplitCounts{-1, 9, 2}, 0),
                  std::invalid_argument);
}

TEST_CASE("different seeds reorder patients but preserve the partition") {
  std::vector<std::string> ids;
  for (int i = 0; i < 12; ++i) ids.push_back("p" + std::to_string(i));
  auto a = split_by_patient(ids, SplitCounts{6, 3, 3}, 1);
  auto b = split_by_patient(ids, SplitCounts{6, 3, 3}, 2);
  std::set<std::string> sa, sb;
  for (const auto& [name, v] : a) sa.insert(v.begin(), v.end());
  for (const auto& [name, v] : b) sb.insert(v.begin(), v.end());
  CHECK(sa == sb);
  CHECK(a.at("train") != b.at("train"));
}

TEST_CASE("phantom volumes are deterministic in the seed") {
  auto a = synth_phantom(77, 2, 3, 64);
  auto b = synth_phantom(77, 2, 3, 64);
  REQUIRE(a.size() == 2);
  REQUIRE(b.size() == 2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].patient_id == b[i].patient_id);
    CHECK(a[i].hu == b[i].hu);
    CHECK(a[i].label == b[i].label);
  }
  auto c = synth_phantom(78, 2, 3, 64);
  CHECK(a[0].hu != c[0].hu);
}

TEST_CASE("every phantom slice holds one solid liver component") {
  auto vols = synth_phantom(5, 2, 4, 64);
  for (const auto& v : vols) {
    auto slices = volume_to_slices(v, 64);
    REQUIRE(slices.size() == 4);
    Index lo = slices[0].h * slices[0].w, hi = 0;
    for (const auto& s : slices) {
      const Index area = mask_area(s);
      CHECK(area > 0);
      CHECK(component_count(s) == 1);
      CHECK(static_cast<double>(area) <
            0.5 * static_cast<double>(s.h * s.w));
      lo = std::min(lo, area);
      hi = std::max(hi, area);
    }
    CHECK(hi > lo);
  }
}

TEST_CASE("the liver reads brighter than its surroundings after windowing") {
  auto vols = synth_phantom(9, 1, 3, 64);
  auto slices = volume_to_slices(vols[0], 64);
  for (const auto& s : slices) {
    double fg = 0.0, bg = 0.0;
    Index nfg = 0, nbg = 0;
    for (std::size_t i = 0; i < s.mask.size(); ++i) {
      if (s.mask[i]) {
        fg += s.image[i];
        ++nfg;
      } else {
        bg += s.image[i];
        ++nbg;
      }
    }
    REQUIRE(nfg > 0);
    REQUIRE(nbg > 0);
    CHECK(fg / static_cast<double>(nfg) >
          1.2 * (bg / static_cast<double>(nbg)));
  }
}

TEST_CASE("excluding the tumor strictly shrinks the mask on tumor slices") {
  auto vols = synth_phantom(21, 1, 6, 64);
  auto with_tumor = volume_to_slices(vols[0], 64, kWindowLo, kWindowHi, false);
  auto without = volume_to_slices(vols[0], 64, kWindowLo, kWindowHi, true);
  REQUIRE(with_tumor.size() == without.size());
  bool any_smaller = false;
  for (std::size_t i = 0; i < with_tumor.size(); ++i) {
    const Index a = mask_area(with_tumor[i]);
    const Index b = mask_area(without[i]);
    CHECK(b <= a);
    if (b < a) any_smaller = true;
  }
  CHECK(any_smaller);
}

TEST_CASE("resize_slice at the native size is bitwise identity") {
  auto vols = synth_phantom(3, 1, 2, 64);
  auto slices = volume_to_slices(vols[0], 64);
  Slice same = resize_slice(slices[0], 64);
  CHECK(same.image == slices[0].image);
  CHECK(same.mask == slices[0].mask);
  Slice smaller = resize_slice(slices[0], 32);
  CHECK(smaller.h == 32);
  CHECK(smaller.w == 32);
  CHECK(smaller.image.size() == 32u * 32u);
}

TEST_CASE("save, manifest load and slice load round-trip bit-exactly") {
  const std::string root = temp_root("roundtrip");
  auto vols = synth_phantom(42, 3, 2, 32);
  std::vector<Slice> slices;
  std::vector<std::string> ids;
  for (const auto& v : vols) {
    ids.push_back(v.patient_id);
    auto s = volume_to_slices(v, 32);
    slices.insert(slices.end(), s.begin(), s.end());
  }
  auto split_ids = split_by_patient(ids, SplitCounts{1, 1, 1}, 9);
  DatasetManifest manifest = build_manifest(slices, split_ids, 42, 32);
  CHECK(manifest.split("train").size() == 2);
  CHECK(manifest.split("val").size() == 2);
  CHECK(manifest.split("test").size() == 2);
  save_dataset(root, manifest, slices);

  DatasetManifest loaded = load_manifest(root);
  CHECK(loaded.seed == 42);
  CHECK(loaded.target == 32);
  CHECK(loaded.version == manifest.version);
  for (const auto& split : {"train", "val", "test"}) {
    const auto& recs = loaded.split(split);
    for (const auto& rec : recs) {
      Slice got = load_slice(root, rec, 32);
      const Slice* want = nullptr;
      for (const auto& s : slices)
        if (s.patient_id == rec.patient_id && s.slice_index == rec.slice_index)
          want = &s;
      REQUIRE(want != nullptr);
      CHECK(got.image == want->image);
      CHECK(got.mask == want->mask);
    }
  }
  std::filesystem::remove_all(root);
}

TEST_CASE("missing manifest and unknown split fail loudly") {
  const std::string root = temp_root("missing");
  CHECK_THROWS_AS(load_manifest(root), std::runtime_error);

  DatasetManifest m;
  CHECK_THROWS_AS(m.split("nope"), std::invalid_argument);
}

TEST_CASE("slice stems use the zero-padded patient_index form") {
  CHECK(slice_stem("synth003", 7) == "synth003_0007");
  Slice s;
  s.patient_id = "abc";
  s.slice_index = 12;
  CHECK(slice_stem(s) == "abc_0012");
}

TEST_CASE("batch assembly replicates grayscale across three channels") {
  auto vols = synth_phantom(8, 1, 2, 32);
  auto slices = volume_to_slices(vols[0], 32);
  Tensor4D<float> x = slices_to_input(slices, {0, 1});
  CHECK(x.n() == 2);
  CHECK(x.c() == 3);
  CHECK(x.h() == 32);
  CHECK(x.w() == 32);
  const Index plane = 32 * 32;
  for (Index n = 0; n < 2; ++n)
    for (Index i = 0; i < plane; ++i) {
      const float v0 = x.data()[n * 3 * plane + i];
      CHECK(x.data()[n * 3 * plane + plane + i] == v0);
      CHECK(x.data()[n * 3 * plane + 2 * plane + i] == v0);
      CHECK(v0 == slices[static_cast<std::size_t>(n)].image[static_cast<std::size_t>(i)]);
    }

  Tensor4D<float> t = slices_to_target(slices, {1});
  CHECK(t.n() == 1);
  CHECK(t.c() == 1);
  for (Index i = 0; i < plane; ++i)
    CHECK(t.data()[i] ==
          static_cast<float>(slices[1].mask[static_cast<std::size_t>(i)]));
}
