#include "pvtformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace pvt {

namespace fs = std::filesystem;
using nlohmann::json;

void Volume::validate() const {
  require(nz > 0 && ny > 0 && nx > 0, "volume: dims must be positive");
  require(spacing[0] > 0 && spacing[1] > 0 && spacing[2] > 0,
          "volume: spacing must be positive");
  require(static_cast<Index>(hu.size()) == nz * ny * nx,
          "volume: HU buffer does not match dims");
  require(label.size() == hu.size(), "volume: label dims differ from HU dims");
}

const std::vector<DatasetRecord>& DatasetManifest::split(
    const std::string& name) const {
  auto it = splits.find(name);
  require(it != splits.end(), "manifest: no split named '" + name + "'");
  return it->second;
}

void window_normalize(const std::int16_t* hu, Index count, float lo, float hi,
                      float* out) {
  require(lo < hi, "window_normalize: lo must be below hi");
  const float scale = 1.0f / (hi - lo);
  for (Index i = 0; i < count; ++i) {
    const float v = std::clamp(static_cast<float>(hu[i]), lo, hi);
    out[i] = (v - lo) * scale;
  }
}

void window_normalize(const float* v, Index count, float lo, float hi,
                      float* out) {
  require(lo < hi, "window_normalize: lo must be below hi");
  const float scale = 1.0f / (hi - lo);
  for (Index i = 0; i < count; ++i)
    out[i] = (std::clamp(v[i], lo, hi) - lo) * scale;
}

namespace {

struct Tap {
  Index lo = 0, hi = 0;
  float t = 0.0f;
};

std::vector<Tap> plane_taps(Index in, Index out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const Index lo = static_cast<Index>(src);
    taps[static_cast<std::size_t>(i)] = {
        lo, std::min(lo + 1, in - 1), static_cast<float>(src - static_cast<double>(lo))};
  }
  return taps;
}

}  // namespace

std::vector<float> resize_bilinear_plane(const float* in, Index h, Index w,
                                         Index out_h, Index out_w) {
  require(h > 0 && w > 0 && out_h > 0 && out_w > 0,
          "resize: dims must be positive");
  const auto rows = plane_taps(h, out_h);
  const auto cols = plane_taps(w, out_w);
  std::vector<float> out(static_cast<std::size_t>(out_h * out_w));
  for (Index i = 0; i < out_h; ++i) {
    const Tap& r = rows[static_cast<std::size_t>(i)];
    for (Index j = 0; j < out_w; ++j) {
      const Tap& c = cols[static_cast<std::size_t>(j)];
      const float v00 = in[r.lo * w + c.lo];
      const float v01 = in[r.lo * w + c.hi];
      const float v10 = in[r.hi * w + c.lo];
      const float v11 = in[r.hi * w + c.hi];
      const float top = v00 + c.t * (v01 - v00);
      const float bot = v10 + c.t * (v11 - v10);
      out[static_cast<std::size_t>(i * out_w + j)] = top + r.t * (bot - top);
    }
  }
  return out;
}

std::vector<std::uint8_t> resize_nearest_plane(const std::uint8_t* in, Index h,
                                               Index w, Index out_h,
                                               Index out_w) {
  require(h > 0 && w > 0 && out_h > 0 && out_w > 0,
          "resize: dims must be positive");
  std::vector<std::uint8_t> out(static_cast<std::size_t>(out_h * out_w));
  const double sh = static_cast<double>(h) / static_cast<double>(out_h);
  const double sw = static_cast<double>(w) / static_cast<double>(out_w);
  for (Index i = 0; i < out_h; ++i) {
    const Index si = std::min<Index>(
        h - 1, static_cast<Index>((static_cast<double>(i) + 0.5) * sh));
    for (Index j = 0; j < out_w; ++j) {
      const Index sj = std::min<Index>(
          w - 1, static_cast<Index>((static_cast<double>(j) + 0.5) * sw));
      out[static_cast<std::size_t>(i * out_w + j)] = in[si * w + sj];
    }
  }
  return out;
}

std::vector<Slice> volume_to_slices(const Volume& v, Index target, float lo,
                                    float hi, bool exclude_tumor) {
  v.validate();
  require(target > 0, "volume_to_slices: target must be positive");
  std::vector<Slice> out;
  out.reserve(static_cast<std::size_t>(v.nz));
  const Index plane = v.plane_size();
  std::vector<float> windowed(static_cast<std::size_t>(plane));
  std::vector<std::uint8_t> bin(static_cast<std::size_t>(plane));
  for (Index z = 0; z < v.nz; ++z) {
    const std::int16_t* hu = v.hu.data() + z * plane;
    const std::uint8_t* lab = v.label.data() + z * plane;
    window_normalize(hu, plane, lo, hi, windowed.data());
    for (Index i = 0; i < plane; ++i)
      bin[static_cast<std::size_t>(i)] =
          (exclude_tumor ? lab[i] == 1 : lab[i] >= 1) ? 1 : 0;
    Slice s;
    s.patient_id = v.patient_id;
    s.slice_index = static_cast<int>(z);
    s.h = target;
    s.w = target;
    s.image = resize_bilinear_plane(windowed.data(), v.ny, v.nx, target, target);
    s.mask = resize_nearest_plane(bin.data(), v.ny, v.nx, target, target);
    out.push_back(std::move(s));
  }
  return out;
}

std::map<std::string, std::vector<std::string>> split_by_patient(
    std::vector<std::string> patient_ids, SplitCounts counts,
    std::uint64_t seed) {
  require(counts.train > 0 && counts.val > 0 && counts.test > 0,
          "split_by_patient: counts must be positive");
  const std::size_t need = static_cast<std::size_t>(counts.train) +
                           static_cast<std::size_t>(counts.val) +
                           static_cast<std::size_t>(counts.test);
  require(patient_ids.size() >= need,
          "split_by_patient: " + std::to_string(patient_ids.size()) +
              " patients cannot fill " + std::to_string(need) + " slots");
  Rng rng(seed);
  rng.shuffle(patient_ids);
  std::map<std::string, std::vector<std::string>> out;
  auto it = patient_ids.begin();
  out["train"] = {it, it + counts.train};
  it += counts.train;
  out["val"] = {it, it + counts.val};
  it += counts.val;
  out["test"] = {it, it + counts.test};
  return out;
}

DatasetManifest build_manifest(
    const std::vector<Slice>& slices,
    const std::map<std::string, std::vector<std::string>>& split_ids,
    std::uint64_t seed, Index target, float lo, float hi, bool exclude_tumor) {
  DatasetManifest m;
  m.seed = seed;
  m.target = target;
  m.window_lo = lo;
  m.window_hi = hi;
  m.exclude_tumor = exclude_tumor;
  std::map<std::string, std::vector<const Slice*>> by_patient;
  for (const auto& s : slices) by_patient[s.patient_id].push_back(&s);
  for (const auto& [name, ids] : split_ids) {
    auto& records = m.splits[name];
    for (const auto& id : ids) {
      auto it = by_patient.find(id);
      require(it != by_patient.end(),
              "build_manifest: no slices for patient " + id);
      for (const Slice* s : it->second) {
        const std::string stem = slice_stem(*s);
        records.push_back(DatasetRecord{s->patient_id, s->slice_index,
                                        "slices/" + stem + ".img",
                                        "slices/" + stem + ".msk"});
      }
    }
  }
  return m;
}

Slice resize_slice(const Slice& s, Index target) {
  require(target > 0, "resize_slice: target must be positive");
  if (s.h == target && s.w == target) return s;
  Slice out;
  out.patient_id = s.patient_id;
  out.slice_index = s.slice_index;
  out.h = target;
  out.w = target;
  out.image = resize_bilinear_plane(s.image.data(), s.h, s.w, target, target);
  out.mask = resize_nearest_plane(s.mask.data(), s.h, s.w, target, target);
  return out;
}

namespace {

// Smooth periodic texture: a small sum of random 3-D cosines.
struct CosineField {
  struct Wave {
    double fx, fy, fz, phase, amp;
  };
  std::vector<Wave> waves;
  double base = 0.0;

  static CosineField draw(Rng& rng, double base_lo, double base_hi,
                          double amp_lo, double amp_hi, int n_waves) {
    CosineField f;
    f.base = rng.uniform(base_lo, base_hi);
    for (int k = 0; k < n_waves; ++k) {
      Wave w;
      w.fx = rng.uniform(0.5, 3.0);
      w.fy = rng.uniform(0.5, 3.0);
      w.fz = rng.uniform(0.5, 2.0);
      w.phase = rng.uniform(0.0, 6.283185307179586);
      w.amp = rng.uniform(amp_lo, amp_hi);
      f.waves.push_back(w);
    }
    return f;
  }

  double at(double x, double y, double z) const {
    double v = base;
    for (const Wave& w : waves)
      v += w.amp * std::cos(6.283185307179586 * (w.fx * x + w.fy * y + w.fz * z) +
                            w.phase);
    return v;
  }
};

}  // namespace

std::vector<Volume> synth_phantom(std::uint64_t seed, int n_patients,
                                  int slices_per_patient, Index size) {
  require(n_patients > 0 && slices_per_patient > 0 && size > 0,
          "synth_phantom: counts must be positive");
  Rng rng(seed);
  std::vector<Volume> out;
  out.reserve(static_cast<std::size_t>(n_patients));
  for (int p = 0; p < n_patients; ++p) {
    Volume v;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%03d", p);
    v.patient_id = buf;
    v.nz = slices_per_patient;
    v.ny = size;
    v.nx = size;
    v.spacing = {2.5, 0.8, 0.8};
    v.hu.resize(static_cast<std::size_t>(v.nz * v.ny * v.nx));
    v.label.assign(v.hu.size(), 0);

    const CosineField bg = CosineField::draw(rng, -90.0, -40.0, 5.0, 15.0, 5);
    const CosineField liver_tex = CosineField::draw(rng, 55.0, 65.0, 2.0, 5.0, 4);
    const CosineField tumor_tex = CosineField::draw(rng, 25.0, 35.0, 2.0, 5.0, 3);

    // Liver ellipsoid. rz exceeds the z half-extent so every slice cuts it,
    // and cross-section area still varies by > 1.2x across slices.
    const double cx = size * rng.uniform(0.45, 0.55);
    const double cy = size * rng.uniform(0.45, 0.55);
    const double cz = (v.nz - 1) / 2.0;
    const double rx = size * rng.uniform(0.22, 0.32);
    const double ry = size * rng.uniform(0.22, 0.32);
    const double rz = v.nz * rng.uniform(0.85, 1.0);

    // Tumor strictly inside: offsets <= 0.3 and radii <= 0.4 of the liver's.
    const double tox = rx * rng.uniform(-0.3, 0.3);
    const double toy = ry * rng.uniform(-0.3, 0.3);
    const double toz = rz * rng.uniform(-0.15, 0.15);
    const double trx = rx * rng.uniform(0.25, 0.4);
    const double try_ = ry * rng.uniform(0.25, 0.4);
    const double trz = rz * rng.uniform(0.25, 0.4);

    for (Index z = 0; z < v.nz; ++z)
      for (Index y = 0; y < v.ny; ++y)
        for (Index x = 0; x < v.nx; ++x) {
          const double ex = (x - cx) / rx;
          const double ey = (y - cy) / ry;
          const double ez = (z - cz) / rz;
          const double u = static_cast<double>(x) / size;
          const double w = static_cast<double>(y) / size;
          const double q = static_cast<double>(z) / v.nz;
          double hu;
          std::uint8_t lab = 0;
          if (ex * ex + ey * ey + ez * ez < 1.0) {
            const double tx = (x - (cx + tox)) / trx;
            const double ty = (y - (cy + toy)) / try_;
            const double tz = (z - (cz + toz)) / trz;
            if (tx * tx + ty * ty + tz * tz < 1.0) {
              hu = tumor_tex.at(u, w, q);
              lab = 2;
            } else {
              hu = liver_tex.at(u, w, q);
              lab = 1;
            }
          } else {
            hu = bg.at(u, w, q);
          }
          const Index i = (z * v.ny + y) * v.nx + x;
          v.hu[static_cast<std::size_t>(i)] =
              static_cast<std::int16_t>(std::lround(hu));
          v.label[static_cast<std::size_t>(i)] = lab;
        }
    out.push_back(std::move(v));
  }
  return out;
}

std::string slice_stem(const std::string& patient_id, int slice_index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04d", patient_id.c_str(), slice_index);
  return buf;
}

std::string slice_stem(const Slice& s) {
  return slice_stem(s.patient_id, s.slice_index);
}

namespace {

void write_blob(const fs::path& path, const void* data, std::size_t bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!f) throw std::runtime_error("short write: " + path.string());
}

void read_blob(const fs::path& path, void* data, std::size_t bytes) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for reading: " + path.string());
  f.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (f.gcount() != static_cast<std::streamsize>(bytes))
    throw std::runtime_error("short read: " + path.string());
}

}  // namespace

void save_dataset(const std::string& root, const DatasetManifest& manifest,
                  const std::vector<Slice>& slices) {
  const fs::path base(root);
  fs::create_directories(base / "slices");

  std::map<std::string, const Slice*> by_stem;
  for (const auto& s : slices) by_stem[slice_stem(s)] = &s;

  json j;
  j["version"] = manifest.version;
  j["seed"] = manifest.seed;
  j["window"] = {{"lo", manifest.window_lo}, {"hi", manifest.window_hi}};
  j["target"] = manifest.target;
  j["exclude_tumor"] = manifest.exclude_tumor;
  j["splits"] = json::object();
  for (const auto& [name, records] : manifest.splits) {
    json arr = json::array();
    for (const auto& rec : records) {
      arr.push_back({{"patient_id", rec.patient_id},
                     {"slice_index", rec.slice_index},
                     {"image", rec.image_path},
                     {"mask", rec.mask_path}});
      const std::string stem = slice_stem(rec.patient_id, rec.slice_index);
      auto it = by_stem.find(stem);
      require(it != by_stem.end(),
              "save_dataset: manifest references missing slice " + stem);
      const Slice& s = *it->second;
      write_blob(base / rec.image_path, s.image.data(),
                 s.image.size() * sizeof(float));
      write_blob(base / rec.mask_path, s.mask.data(), s.mask.size());
    }
    j["splits"][name] = std::move(arr);
  }
  std::ofstream f(base / "dataset.json");
  if (!f) throw std::runtime_error("cannot write manifest in " + root);
  f << j.dump(2) << '\n';
}

DatasetManifest load_manifest(const std::string& root) {
  const fs::path path = fs::path(root) / "dataset.json";
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest: " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed manifest " + path.string() + ": " +
                             e.what());
  }
  DatasetManifest m;
  m.version = j.at("version").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.window_lo = j.at("window").at("lo").get<float>();
  m.window_hi = j.at("window").at("hi").get<float>();
  m.target = j.at("target").get<Index>();
  m.exclude_tumor = j.value("exclude_tumor", false);
  for (const auto& [name, arr] : j.at("splits").items()) {
    std::vector<DatasetRecord> records;
    for (const auto& rj : arr) {
      DatasetRecord rec;
      rec.patient_id = rj.at("patient_id").get<std::string>();
      rec.slice_index = rj.at("slice_index").get<int>();
      rec.image_path = rj.at("image").get<std::string>();
      rec.mask_path = rj.at("mask").get<std::string>();
      records.push_back(std::move(rec));
    }
    m.splits[name] = std::move(records);
  }
  return m;
}

Slice load_slice(const std::string& root, const DatasetRecord& rec,
                 Index target) {
  Slice s;
  s.patient_id = rec.patient_id;
  s.slice_index = rec.slice_index;
  s.h = target;
  s.w = target;
  s.image.resize(static_cast<std::size_t>(target * target));
  s.mask.resize(static_cast<std::size_t>(target * target));
  read_blob(fs::path(root) / rec.image_path, s.image.data(),
            s.image.size() * sizeof(float));
  read_blob(fs::path(root) / rec.mask_path, s.mask.data(), s.mask.size());
  return s;
}

std::vector<Slice> load_split(const std::string& root,
                              const DatasetManifest& manifest,
                              const std::string& split_name) {
  const auto& records = manifest.split(split_name);
  std::vector<Slice> out;
  out.reserve(records.size());
  for (const auto& rec : records)
    out.push_back(load_slice(root, rec, manifest.target));
  return out;
}

Tensor4D<float> slices_to_input(const std::vector<Slice>& slices,
                                const std::vector<int>& idx) {
  require(!idx.empty(), "slices_to_input: empty batch");
  const Slice& first = slices.at(static_cast<std::size_t>(idx[0]));
  Tensor4D<float> x(static_cast<Index>(idx.size()), 3, first.h, first.w);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Slice& s = slices.at(static_cast<std::size_t>(idx[b]));
    require(s.h == first.h && s.w == first.w,
            "slices_to_input: inconsistent slice sizes");
    for (Index c = 0; c < 3; ++c)
      std::copy(s.image.begin(), s.image.end(),
                x.data() + (static_cast<Index>(b) * 3 + c) * s.h * s.w);
  }
  return x;
}

Tensor4D<float> slices_to_target(const std::vector<Slice>& slices,
                                 const std::vector<int>& idx) {
  require(!idx.empty(), "slices_to_target: empty batch");
  const Slice& first = slices.at(static_cast<std::size_t>(idx[0]));
  Tensor4D<float> y(static_cast<Index>(idx.size()), 1, first.h, first.w);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Slice& s = slices.at(static_cast<std::size_t>(idx[b]));
    float* dst = y.data() + static_cast<Index>(b) * s.h * s.w;
    for (std::size_t i = 0; i < s.mask.size(); ++i)
      dst[i] = s.mask[i] ? 1.0f : 0.0f;
  }
  return y;
}

Tensor4D<std::uint8_t> slices_to_masks(const std::vector<Slice>& slices,
                                       const std::vector<int>& idx) {
  require(!idx.empty(), "slices_to_masks: empty batch");
  const Slice& first = slices.at(static_cast<std::size_t>(idx[0]));
  Tensor4D<std::uint8_t> m(static_cast<Index>(idx.size()), 1, first.h, first.w);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const Slice& s = slices.at(static_cast<std::size_t>(idx[b]));
    std::copy(s.mask.begin(), s.mask.end(),
              m.data() + static_cast<Index>(b) * s.h * s.w);
  }
  return m;
}

}  // namespace pvt
