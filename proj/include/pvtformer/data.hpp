#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pvtformer/rng.hpp"
#include "pvtformer/tensor.hpp"

namespace pvt {

inline constexpr float kWindowLo = -200.0f;
inline constexpr float kWindowHi = 250.0f;
inline constexpr Index kSliceTarget = 256;

// Axial CT volume in HU with a voxel label map, z-major row-major storage.
// Labels: 0 background, 1 liver, 2 tumor (inside the liver).
struct Volume {
  std::string patient_id;
  Index nz = 0, ny = 0, nx = 0;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<std::int16_t> hu;
  std::vector<std::uint8_t> label;

  Index plane_size() const { return ny * nx; }
  void validate() const;
};

struct Slice {
  std::string patient_id;
  int slice_index = 0;
  Index h = 0, w = 0;
  std::vector<float> image;         // [0,1]
  std::vector<std::uint8_t> mask;   // {0,1}
};

struct DatasetRecord {
  std::string patient_id;
  int slice_index = 0;
  std::string image_path;  // relative to the dataset root
  std::string mask_path;
};

struct DatasetManifest {
  int version = 1;
  std::uint64_t seed = 0;
  float window_lo = kWindowLo;
  float window_hi = kWindowHi;
  Index target = kSliceTarget;
  bool exclude_tumor = false;
  std::map<std::string, std::vector<DatasetRecord>> splits;

  const std::vector<DatasetRecord>& split(const std::string& name) const;
};

// Clamp to [lo,hi] then scale to [0,1].
void window_normalize(const std::int16_t* hu, Index count, float lo, float hi,
                      float* out);
void window_normalize(const float* v, Index count, float lo, float hi,
                      float* out);

// Half-pixel sampling (src = (dst+0.5)*in/out - 0.5, clamped), up or down.
std::vector<float> resize_bilinear_plane(const float* in, Index h, Index w,
                                         Index out_h, Index out_w);
std::vector<std::uint8_t> resize_nearest_plane(const std::uint8_t* in, Index h,
                                               Index w, Index out_h,
                                               Index out_w);

// Per axial plane: window, bilinear resize; mask = (label >= 1), or
// (label == 1) with exclude_tumor, nearest resize.
std::vector<Slice> volume_to_slices(const Volume& v, Index target = kSliceTarget,
                                    float lo = kWindowLo, float hi = kWindowHi,
                                    bool exclude_tumor = false);

// Deterministic shuffle of the ids by seed, then consecutive take.
struct SplitCounts {
  int train = 0, val = 0, test = 0;
};
std::map<std::string, std::vector<std::string>> split_by_patient(
    std::vector<std::string> patient_ids, SplitCounts counts,
    std::uint64_t seed);

// Records for every slice of every listed patient, grouped by split.
DatasetManifest build_manifest(
    const std::vector<Slice>& slices,
    const std::map<std::string, std::vector<std::string>>& split_ids,
    std::uint64_t seed, Index target = kSliceTarget, float lo = kWindowLo,
    float hi = kWindowHi, bool exclude_tumor = false);

// Bilinear image, nearest mask.
Slice resize_slice(const Slice& s, Index target);

// Synthetic phantom: smooth soft-tissue background, one liver ellipsoid
// (HU ~ 60 +/- 10) spanning every slice, one tumor ellipsoid strictly inside.
std::vector<Volume> synth_phantom(std::uint64_t seed, int n_patients,
                                  int slices_per_patient,
                                  Index size = kSliceTarget);

// On-disk layout: <root>/dataset.json plus per-slice blobs
// <root>/slices/<patient>_<index>.img (f32 LE row-major) and .msk (u8 {0,1}).
void save_dataset(const std::string& root, const DatasetManifest& manifest,
                  const std::vector<Slice>& slices);
DatasetManifest load_manifest(const std::string& root);
Slice load_slice(const std::string& root, const DatasetRecord& rec,
                 Index target);

// Model input: grayscale replicated to 3 channels. Targets: float {0,1} for
// the loss, u8 masks for metrics.
Tensor4D<float> slices_to_input(const std::vector<Slice>& slices,
                                const std::vector<int>& idx);
Tensor4D<float> slices_to_target(const std::vector<Slice>& slices,
                                 const std::vector<int>& idx);
Tensor4D<std::uint8_t> slices_to_masks(const std::vector<Slice>& slices,
                                       const std::vector<int>& idx);

std::vector<Slice> load_split(const std::string& root,
                              const DatasetManifest& manifest,
                              const std::string& split_name);

// Blob stem, also used as the per-slice id in metric reports.
std::string slice_stem(const std::string& patient_id, int slice_index);
std::string slice_stem(const Slice& s);

}  // namespace pvt
