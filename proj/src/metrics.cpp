#include "pvtformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace pvt {

MaskView slice_view(const MaskTensor& m, Index n) {
  require(m.c() == 1, "slice_view: expected a single-channel mask tensor");
  require(n >= 0 && n < m.n(), "slice_view: sample index out of range");
  return MaskView{m.data() + n * m.h() * m.w(), m.h(), m.w()};
}

ConfusionCounts confusion(MaskView pred, MaskView gt) {
  require(pred.h == gt.h && pred.w == gt.w, "confusion: shape mismatch");
  ConfusionCounts c;
  for (Index i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[i] != 0;
    const bool g = gt.data[i] != 0;
    if (p && g)
      ++c.tp;
    else if (p && !g)
      ++c.fp;
    else if (!p && g)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

namespace {

double ratio(std::int64_t num, std::int64_t den, const ConfusionCounts& c) {
  if (den > 0) return static_cast<double>(num) / static_cast<double>(den);
  return (c.tp == 0 && c.fp == 0 && c.fn == 0) ? 1.0 : 0.0;
}

}  // namespace

OverlapMetrics overlap_metrics(const ConfusionCounts& c) {
  OverlapMetrics m;
  m.dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, c);
  m.iou = ratio(c.tp, c.tp + c.fp + c.fn, c);
  m.recall = ratio(c.tp, c.tp + c.fn, c);
  m.precision = ratio(c.tp, c.tp + c.fp, c);
  const double den = 4.0 * m.precision + m.recall;
  m.f2 = den > 0.0 ? 5.0 * m.precision * m.recall / den : 0.0;
  return m;
}

std::vector<std::pair<Index, Index>> boundary_points(MaskView m) {
  std::vector<std::pair<Index, Index>> pts;
  for (Index i = 0; i < m.h; ++i)
    for (Index j = 0; j < m.w; ++j) {
      if (m(i, j) == 0) continue;
      const bool edge = i == 0 || i == m.h - 1 || j == 0 || j == m.w - 1;
      if (edge || m(i - 1, j) == 0 || m(i + 1, j) == 0 || m(i, j - 1) == 0 ||
          m(i, j + 1) == 0)
        pts.emplace_back(i, j);
    }
  return pts;
}

namespace {

using Point = std::pair<Index, Index>;

std::int64_t sq_dist(const Point& a, const Point& b) {
  const std::int64_t di = a.first - b.first;
  const std::int64_t dj = a.second - b.second;
  return di * di + dj * dj;
}

// Directed Hausdorff max_a min_b d(a,b), squared. The inner scan breaks as
// soon as the running min cannot raise the outer max, which never changes
// the exact result.
std::int64_t directed_sq(const std::vector<Point>& a,
                         const std::vector<Point>& b) {
  std::int64_t cmax = 0;
  for (const Point& pa : a) {
    std::int64_t cmin = std::numeric_limits<std::int64_t>::max();
    for (const Point& pb : b) {
      const std::int64_t d = sq_dist(pa, pb);
      if (d < cmin) cmin = d;
      if (cmin <= cmax) break;
    }
    if (cmin > cmax) cmax = cmin;
  }
  return cmax;
}

std::int64_t directed_sq_oracle(const std::vector<Point>& a,
                                const std::vector<Point>& b) {
  std::int64_t cmax = 0;
  for (const Point& pa : a) {
    std::int64_t cmin = std::numeric_limits<std::int64_t>::max();
    for (const Point& pb : b) cmin = std::min(cmin, sq_dist(pa, pb));
    cmax = std::max(cmax, cmin);
  }
  return cmax;
}

}  // namespace

std::optional<double> hausdorff(MaskView pred, MaskView gt) {
  require(pred.h == gt.h && pred.w == gt.w, "hausdorff: shape mismatch");
  const auto a = boundary_points(pred);
  const auto b = boundary_points(gt);
  if (a.empty() || b.empty()) return std::nullopt;
  return std::sqrt(static_cast<double>(
      std::max(directed_sq(a, b), directed_sq(b, a))));
}

std::optional<double> hausdorff_oracle(MaskView pred, MaskView gt) {
  require(pred.h == gt.h && pred.w == gt.w, "hausdorff: shape mismatch");
  const auto a = boundary_points(pred);
  const auto b = boundary_points(gt);
  if (a.empty() || b.empty()) return std::nullopt;
  return std::sqrt(static_cast<double>(
      std::max(directed_sq_oracle(a, b), directed_sq_oracle(b, a))));
}

SliceMetrics evaluate_pair(const std::string& slice_id, MaskView pred,
                           MaskView gt) {
  SliceMetrics s;
  s.slice_id = slice_id;
  s.overlap = overlap_metrics(confusion(pred, gt));
  s.hd = hausdorff(pred, gt);
  return s;
}

MetricsReport aggregate(std::vector<SliceMetrics> slices) {
  require(!slices.empty(), "aggregate: no slices");
  MetricsReport r;
  double hd_sum = 0.0;
  int hd_n = 0;
  for (const auto& s : slices) {
    r.mean_dice += s.overlap.dice;
    r.mean_miou += s.overlap.iou;
    r.mean_recall += s.overlap.recall;
    r.mean_precision += s.overlap.precision;
    r.mean_f2 += s.overlap.f2;
    if (s.hd) {
      hd_sum += *s.hd;
      ++hd_n;
    } else {
      ++r.hd_skipped;
    }
  }
  const double n = static_cast<double>(slices.size());
  r.mean_dice /= n;
  r.mean_miou /= n;
  r.mean_recall /= n;
  r.mean_precision /= n;
  r.mean_f2 /= n;
  if (hd_n > 0) r.mean_hd = hd_sum / hd_n;
  r.slices = std::move(slices);
  return r;
}

std::string report_to_csv(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(9);
  os << "slice_id,dice,miou,recall,precision,f2,hd\n";
  for (const auto& s : r.slices) {
    os << s.slice_id << ',' << s.overlap.dice << ',' << s.overlap.iou << ','
       << s.overlap.recall << ',' << s.overlap.precision << ',' << s.overlap.f2
       << ',';
    if (s.hd) os << *s.hd;
    os << '\n';
  }
  return os.str();
}

std::string report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["mean"] = {{"dice", r.mean_dice},       {"miou", r.mean_miou},
               {"recall", r.mean_recall},   {"precision", r.mean_precision},
               {"f2", r.mean_f2}};
  if (r.mean_hd)
    j["mean"]["hd"] = *r.mean_hd;
  else
    j["mean"]["hd"] = nullptr;
  j["hd_skipped"] = r.hd_skipped;
  j["slices"] = nlohmann::json::array();
  for (const auto& s : r.slices) {
    nlohmann::json js = {{"slice_id", s.slice_id},
                         {"dice", s.overlap.dice},
                         {"miou", s.overlap.iou},
                         {"recall", s.overlap.recall},
                         {"precision", s.overlap.precision},
                         {"f2", s.overlap.f2}};
    if (s.hd)
      js["hd"] = *s.hd;
    else
      js["hd"] = nullptr;
    j["slices"].push_back(std::move(js));
  }
  return j.dump(2);
}

}  // namespace pvt
