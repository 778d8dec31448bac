#include "pvtformer/analysis.hpp"

#include <array>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace pvt {
namespace {

std::int64_t conv_out(std::int64_t in, std::int64_t k, std::int64_t s,
                      std::int64_t p) {
  return (in + 2 * p - k) / s + 1;
}

std::int64_t conv_params(std::int64_t in_c, std::int64_t out_c, std::int64_t k,
                         bool bias, std::int64_t groups = 1) {
  return out_c * (in_c / groups) * k * k + (bias ? out_c : 0);
}

std::int64_t conv_macs(std::int64_t out_h, std::int64_t out_w,
                       std::int64_t in_c, std::int64_t out_c, std::int64_t k,
                       std::int64_t groups = 1) {
  return out_h * out_w * out_c * in_c * k * k / groups;
}

std::int64_t linear_params(std::int64_t in, std::int64_t out) {
  return in * out + out;
}

// Residual block: two 3x3 convs with BN, plus a 1x1 projection shortcut when
// the width changes.
std::int64_t residual_params(std::int64_t in_c, std::int64_t out_c) {
  std::int64_t p = conv_params(in_c, out_c, 3, false) + 2 * out_c +
                   conv_params(out_c, out_c, 3, false) + 2 * out_c;
  if (in_c != out_c) p += conv_params(in_c, out_c, 1, false) + 2 * out_c;
  return p;
}

std::int64_t residual_macs(std::int64_t h, std::int64_t w, std::int64_t in_c,
                           std::int64_t out_c) {
  std::int64_t m = conv_macs(h, w, in_c, out_c, 3) +
                   conv_macs(h, w, out_c, out_c, 3);
  if (in_c != out_c) m += conv_macs(h, w, in_c, out_c, 1);
  return m;
}

struct StageCost {
  std::int64_t params = 0;
  std::int64_t macs = 0;  // per sample
  std::int64_t out_h = 0, out_w = 0;
};

StageCost stage_cost(const PVTv2Config& e, int s, std::int64_t in_c,
                     std::int64_t in_h, std::int64_t in_w) {
  const std::int64_t d = e.embed_dims[static_cast<std::size_t>(s)];
  const std::int64_t depth = e.depths[static_cast<std::size_t>(s)];
  const std::int64_t heads = e.heads[static_cast<std::size_t>(s)];
  const std::int64_t mlp = e.mlp_ratios[static_cast<std::size_t>(s)];
  const std::int64_t sr = e.sr_ratios[static_cast<std::size_t>(s)];
  const std::int64_t k = s == 0 ? 7 : 3;
  const std::int64_t stride = s == 0 ? 4 : 2;
  const std::int64_t pad = s == 0 ? 3 : 1;
  const std::int64_t dm = d * mlp;

  StageCost c;
  c.out_h = conv_out(in_h, k, stride, pad);
  c.out_w = conv_out(in_w, k, stride, pad);
  const std::int64_t tokens = c.out_h * c.out_w;

  c.params = conv_params(in_c, d, k, true) + 2 * d;  // patch conv + LN
  c.macs = conv_macs(c.out_h, c.out_w, in_c, d, k);

  std::int64_t reduced;  // key/value token count
  std::int64_t block_p = 2 * d + 2 * d;           // norm1 + norm2
  block_p += 4 * linear_params(d, d);             // q, k, v, proj
  std::int64_t block_m = 2 * tokens * d * d;      // q + proj
  if (e.linear_sra) {
    reduced = kLinearSraPoolSize * kLinearSraPoolSize;
    block_p += conv_params(d, d, 1, true) + 2 * d;
    block_m += conv_macs(kLinearSraPoolSize, kLinearSraPoolSize, d, d, 1);
  } else if (sr > 1) {
    reduced = (c.out_h / sr) * (c.out_w / sr);
    block_p += conv_params(d, d, sr, true) + 2 * d;
    block_m += conv_macs(c.out_h / sr, c.out_w / sr, d, d, sr);
  } else {
    reduced = tokens;
  }
  block_m += 2 * reduced * d * d;  // k + v
  // QK^T and AV: heads * l_q * l_kv * d_head each, d_head = d / heads.
  block_m += 2 * heads * tokens * reduced * (d / heads);
  block_p += linear_params(d, dm) + conv_params(dm, dm, 3, true, dm) +
             linear_params(dm, d);
  block_m += tokens * d * dm + conv_macs(c.out_h, c.out_w, dm, dm, 3, dm) +
             tokens * dm * d;

  c.params += depth * block_p + 2 * d;  // blocks + stage norm
  c.macs += depth * block_m;
  return c;
}

}  // namespace

std::int64_t closed_form_params(const PVTFormerConfig& cfg) {
  std::int64_t total = 0;
  for (const auto& m : complexity_report(cfg, 1, 256, 256).modules)
    total += m.params;
  return total;
}

std::int64_t count_macs(const PVTFormerConfig& cfg, Index batch, Index h,
                        Index w) {
  return complexity_report(cfg, batch, h, w).total_macs;
}

ComplexityReport complexity_report(const PVTFormerConfig& cfg, Index batch,
                                   Index h, Index w) {
  cfg.validate();
  require(batch > 0, "complexity: batch must be positive");
  require(h > 0 && w > 0 && h % 32 == 0 && w % 32 == 0,
          "complexity: input size must be a positive multiple of 32");

  ComplexityReport r;
  r.batch = batch;
  r.in_h = h;
  r.in_w = w;
  const std::int64_t n = batch;
  const std::int64_t rc = cfg.reduce_c;
  const std::int64_t hc = cfg.head_channels;

  std::int64_t in_c = cfg.encoder.in_channels;
  std::int64_t sh = h, sw = w;
  std::array<StageCost, 4> st;
  for (int s = 0; s < 4; ++s) {
    st[static_cast<std::size_t>(s)] = stage_cost(cfg.encoder, s, in_c, sh, sw);
    const auto& c = st[static_cast<std::size_t>(s)];
    r.modules.push_back({"encoder.stage" + std::to_string(s + 1), c.params,
                         n * c.macs});
    in_c = cfg.encoder.embed_dims[static_cast<std::size_t>(s)];
    sh = c.out_h;
    sw = c.out_w;
  }

  const std::int64_t e1 = cfg.encoder.embed_dims[0];
  const std::int64_t e2 = cfg.encoder.embed_dims[1];
  const std::int64_t e3 = cfg.encoder.embed_dims[2];
  const std::int64_t h1 = st[0].out_h, w1 = st[0].out_w;
  const std::int64_t h2 = st[1].out_h, w2 = st[1].out_w;
  const std::int64_t h3 = st[2].out_h, w3 = st[2].out_w;
  const std::int64_t oh = cfg.out_h, ow = cfg.out_w;

  auto push = [&](std::string name, std::int64_t p, std::int64_t m) {
    r.modules.push_back({std::move(name), p, n * m});
  };
  push("reduce1", conv_params(e1, rc, 1, false) + 2 * rc,
       conv_macs(h1, w1, e1, rc, 1));
  push("reduce2", conv_params(e2, rc, 1, false) + 2 * rc,
       conv_macs(h2, w2, e2, rc, 1));
  push("reduce3", conv_params(e3, rc, 1, false) + 2 * rc,
       conv_macs(h3, w3, e3, rc, 1));
  push("up1", residual_params(rc, rc), residual_macs(oh, ow, rc, rc));
  push("up2", residual_params(rc, rc), residual_macs(oh, ow, rc, rc));
  push("up3", residual_params(rc, rc), residual_macs(oh, ow, rc, rc));
  push("dec1", residual_params(2 * rc, rc), residual_macs(h2, w2, 2 * rc, rc));
  push("dec2", residual_params(2 * rc, rc), residual_macs(h1, w1, 2 * rc, rc));
  push("fuse", residual_params(4 * rc, hc), residual_macs(oh, ow, 4 * rc, hc));
  push("head", conv_params(hc, 1, 1, true), conv_macs(oh, ow, hc, 1, 1));

  for (const auto& m : r.modules) {
    r.total_params += m.params;
    r.total_macs += m.macs;
  }
  return r;
}

std::string complexity_table(const ComplexityReport& r) {
  std::ostringstream os;
  os << "input (" << r.batch << ",3," << r.in_h << "," << r.in_w << ")\n";
  os << std::left << std::setw(18) << "module" << std::right << std::setw(14)
     << "params" << std::setw(16) << "macs" << '\n';
  for (const auto& m : r.modules)
    os << std::left << std::setw(18) << m.name << std::right << std::setw(14)
       << m.params << std::setw(16) << m.macs << '\n';
  os << std::left << std::setw(18) << "total" << std::right << std::setw(14)
     << r.total_params << std::setw(16) << r.total_macs << '\n';
  os << std::fixed << std::setprecision(2) << "params "
     << static_cast<double>(r.total_params) / 1e6 << " M, macs "
     << static_cast<double>(r.total_macs) / 1e9 << " G\n";
  return os.str();
}

std::string complexity_json(const ComplexityReport& r) {
  nlohmann::json j;
  j["input"] = {{"batch", r.batch}, {"channels", 3}, {"h", r.in_h},
                {"w", r.in_w}};
  j["total_params"] = r.total_params;
  j["total_macs"] = r.total_macs;
  j["modules"] = nlohmann::json::array();
  for (const auto& m : r.modules)
    j["modules"].push_back(
        {{"name", m.name}, {"params", m.params}, {"macs", m.macs}});
  return j.dump(2);
}

}  // namespace pvt
