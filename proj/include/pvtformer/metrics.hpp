#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pvtformer/model.hpp"
#include "pvtformer/tensor.hpp"

namespace pvt {

struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct OverlapMetrics {
  double dice = 0.0, iou = 0.0, recall = 0.0, precision = 0.0, f2 = 0.0;
};

struct SliceMetrics {
  std::string slice_id;
  OverlapMetrics overlap;
  std::optional<double> hd;
};

struct MetricsReport {
  std::vector<SliceMetrics> slices;
  double mean_dice = 0.0, mean_miou = 0.0, mean_recall = 0.0;
  double mean_precision = 0.0, mean_f2 = 0.0;
  std::optional<double> mean_hd;
  int hd_skipped = 0;
};

// Non-owning view of one binary h x w mask, values in {0,1}.
struct MaskView {
  const std::uint8_t* data = nullptr;
  Index h = 0, w = 0;

  std::uint8_t operator()(Index i, Index j) const { return data[i * w + j]; }
  Index size() const { return h * w; }
};

// View of sample n of a (n,1,h,w) mask tensor.
MaskView slice_view(const MaskTensor& m, Index n);

ConfusionCounts confusion(MaskView pred, MaskView gt);

// Empty-vs-empty convention: a 0/0 ratio is 1 when the slice pair is truly
// empty (tp=fp=fn=0), otherwise 0.
OverlapMetrics overlap_metrics(const ConfusionCounts& c);

// Boundary pixels: foreground with at least one 4-neighbor background pixel,
// the image border counting as background.
std::vector<std::pair<Index, Index>> boundary_points(MaskView m);

// Symmetric Hausdorff distance between boundary point sets, in pixels.
// Undefined (nullopt) when either mask is empty. Early-break scan; exact,
// integer squared distances with a single final sqrt.
std::optional<double> hausdorff(MaskView pred, MaskView gt);

// All-pairs reference implementation, identical results by construction of
// the distance arithmetic.
std::optional<double> hausdorff_oracle(MaskView pred, MaskView gt);

SliceMetrics evaluate_pair(const std::string& slice_id, MaskView pred,
                           MaskView gt);

// Unweighted means over slices where each metric is defined.
MetricsReport aggregate(std::vector<SliceMetrics> slices);

std::string report_to_csv(const MetricsReport& r);
std::string report_to_json(const MetricsReport& r);

}  // namespace pvt
