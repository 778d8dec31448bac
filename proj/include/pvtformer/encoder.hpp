#pragma once

#include <array>
#include <string>
#include <vector>

#include "pvtformer/blocks.hpp"

namespace pvt {

// Stage hyperparameters of the PVT v2 hierarchical encoder. Defaults are the
// b3 row; patch kernels/strides are fixed (stage 1: 7/4/3, stages 2-4: 3/2/1).
struct PVTv2Config {
  std::array<Index, 4> embed_dims{64, 128, 320, 512};
  std::array<Index, 4> depths{3, 4, 18, 3};
  std::array<Index, 4> heads{1, 2, 5, 8};
  std::array<Index, 4> mlp_ratios{8, 8, 4, 4};
  std::array<Index, 4> sr_ratios{8, 4, 2, 1};
  Index in_channels = 3;
  bool linear_sra = false;

  static PVTv2Config b3() { return PVTv2Config{}; }

  // Small config for gradient checks and fast tests. Heads chosen so every
  // stage dim stays divisible.
  static PVTv2Config tiny() {
    PVTv2Config c;
    c.embed_dims = {8, 16, 24, 32};
    c.depths = {1, 1, 1, 1};
    c.heads = {1, 2, 4, 8};
    return c;
  }

  void validate() const {
    require(in_channels > 0, "pvtv2 config: in_channels must be positive");
    for (int s = 0; s < 4; ++s) {
      require(embed_dims[s] > 0 && depths[s] > 0 && heads[s] > 0 &&
                  mlp_ratios[s] > 0 && sr_ratios[s] > 0,
              "pvtv2 config: stage hyperparameters must be positive");
      require(embed_dims[s] % heads[s] == 0,
              "pvtv2 config: embed dim must be divisible by head count");
    }
    for (int s = 1; s < 4; ++s)
      require(embed_dims[s] > embed_dims[s - 1],
              "pvtv2 config: embed dims must be strictly increasing");
  }
};

template <class S>
struct FeaturePyramid {
  Tensor4D<S> f1, f2, f3, f4;  // strides 4, 8, 16, 32 w.r.t. the input
};

template <class S>
struct EncoderStage {
  OverlapPatchEmbed<S> patch;
  std::vector<TransformerBlock<S>> blocks;
  LayerNorm<S> norm;

  EncoderStage() = default;
  EncoderStage(Index in_c, Index dim, Index kernel, Index stride, Index pad,
               Index depth, Index n_heads, Index sr_ratio, Index mlp_ratio,
               bool linear_sra)
      : patch(in_c, dim, kernel, stride, pad), norm(dim) {
    blocks.reserve(static_cast<std::size_t>(depth));
    for (Index i = 0; i < depth; ++i)
      blocks.emplace_back(dim, n_heads, sr_ratio, mlp_ratio, linear_sra);
  }

  void init(Rng& rng) {
    patch.init(rng);
    for (auto& b : blocks) b.init(rng);
    norm.init(rng);
  }

  void collect(ParamRegistry<S>& reg, const std::string& prefix) {
    patch.collect(reg, prefix + ".patch");
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(reg, prefix + ".block" + std::to_string(i));
    norm.collect(reg, prefix + ".norm");
  }

  Tensor4D<S> forward(const Tensor4D<S>& x, Phase ph) {
    TokenTensor<S> t = patch.forward(x, ph);
    for (auto& b : blocks) t = b.forward(std::move(t), ph);
    return to_feature_map(norm.forward(t, ph));
  }

  Tensor4D<S> backward(const Tensor4D<S>& dy) {
    TokenTensor<S> dt = norm.backward(to_tokens(dy));
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it)
      dt = it->backward(dt);
    return patch.backward(dt);
  }
};

template <class S>
struct PvtV2Encoder {
  PVTv2Config cfg;
  std::vector<EncoderStage<S>> stages;

  PvtV2Encoder() = default;
  explicit PvtV2Encoder(const PVTv2Config& c) : cfg(c) {
    cfg.validate();
    Index in_c = cfg.in_channels;
    for (int s = 0; s < 4; ++s) {
      const Index kernel = s == 0 ? 7 : 3;
      const Index stride = s == 0 ? 4 : 2;
      const Index pad = s == 0 ? 3 : 1;
      stages.emplace_back(in_c, cfg.embed_dims[s], kernel, stride, pad,
                          cfg.depths[s], cfg.heads[s], cfg.sr_ratios[s],
                          cfg.mlp_ratios[s], cfg.linear_sra);
      in_c = cfg.embed_dims[s];
    }
  }

  void init(Rng& rng) {
    for (auto& s : stages) s.init(rng);
  }

  void collect(ParamRegistry<S>& reg, const std::string& prefix) {
    for (std::size_t s = 0; s < stages.size(); ++s)
      stages[s].collect(reg, prefix + ".stage" + std::to_string(s + 1));
  }

  FeaturePyramid<S> forward(const Tensor4D<S>& x, Phase ph) {
    require(x.c() == cfg.in_channels,
            "encoder: input has " + std::to_string(x.c()) +
                " channels, config expects " + std::to_string(cfg.in_channels));
    require(x.h() > 0 && x.w() > 0 && x.h() % 32 == 0 && x.w() % 32 == 0,
            "encoder: input spatial dims must be positive multiples of 32, got " +
                x.shape_str());
    FeaturePyramid<S> fp;
    fp.f1 = stages[0].forward(x, ph);
    fp.f2 = stages[1].forward(fp.f1, ph);
    fp.f3 = stages[2].forward(fp.f2, ph);
    fp.f4 = stages[3].forward(fp.f3, ph);
    return fp;
  }

  // with_stage4=false skips the stage-4 traversal; the decode head never
  // consumes f4, so its gradient is identically zero there.
  Tensor4D<S> backward(const FeaturePyramid<S>& dfp, bool with_stage4 = true) {
    Tensor4D<S> d3 = dfp.f3;
    if (with_stage4) d3.flat() += stages[3].backward(dfp.f4).flat();
    Tensor4D<S> d2 = dfp.f2;
    d2.flat() += stages[2].backward(d3).flat();
    Tensor4D<S> d1 = dfp.f1;
    d1.flat() += stages[1].backward(d2).flat();
    return stages[0].backward(d1);
  }
};

}  // namespace pvt
