#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pvtformer/model.hpp"

namespace pvt {

// MAC counting convention (multiply-accumulates, not FLOPs):
//   conv            out_h * out_w * out_c * in_c * k^2 / groups, per sample
//   linear          tokens * in * out
//   attention       QK^T and AV each count n_heads * l_q * l_kv * d_head
//   excluded        norms, activations, softmax, pooling, upsampling, biases
// Published GMac figures vary by tool precisely because of the excluded set;
// this table freezes ours.
struct ModuleCost {
  std::string name;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

struct ComplexityReport {
  Index batch = 0, in_h = 0, in_w = 0;
  std::int64_t total_params = 0;  // trainable only
  std::int64_t total_macs = 0;
  std::vector<ModuleCost> modules;
};

// Closed-form trainable parameter count derived from the config alone; tested
// to equal runtime registry enumeration exactly.
std::int64_t closed_form_params(const PVTFormerConfig& cfg);

std::int64_t count_macs(const PVTFormerConfig& cfg, Index batch, Index h,
                        Index w);

// Per-module breakdown; totals equal the sum of the rows.
ComplexityReport complexity_report(const PVTFormerConfig& cfg, Index batch,
                                   Index h, Index w);

std::string complexity_table(const ComplexityReport& r);
std::string complexity_json(const ComplexityReport& r);

}  // namespace pvt
