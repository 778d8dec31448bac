#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pvtformer/encoder.hpp"

namespace pvt {

using MaskTensor = Tensor4D<std::uint8_t>;

struct PVTFormerConfig {
  PVTv2Config encoder;
  Index reduce_c = 64;
  Index head_channels = 64;
  Index out_h = 256, out_w = 256;

  static PVTFormerConfig base() { return PVTFormerConfig{}; }

  static PVTFormerConfig tiny() {
    PVTFormerConfig c;
    c.encoder = PVTv2Config::tiny();
    c.reduce_c = 16;
    c.head_channels = 16;
    c.out_h = 64;
    c.out_w = 64;
    return c;
  }

  void validate() const {
    encoder.validate();
    require(reduce_c > 0 && head_channels > 0,
            "pvtformer config: channel counts must be positive");
    require(out_h > 0 && out_w > 0 && out_h % 32 == 0 && out_w % 32 == 0,
            "pvtformer config: out size must be a positive multiple of 32");
  }
};

// Bilinear upsample to a fixed output size, then a same-width residual block.
template <class S>
struct UpBlock {
  Index out_h = 0, out_w = 0;
  ResidualBlock<S> block;

  UpBlock() = default;
  UpBlock(Index channels, Index out_h_, Index out_w_)
      : out_h(out_h_), out_w(out_w_), block(channels, channels) {}

  void init(Rng& rng) { block.init(rng); }

  void collect(ParamRegistry<S>& reg, const std::string& prefix) {
    block.collect(reg, prefix + ".block");
  }

  Tensor4D<S> forward(const Tensor4D<S>& x, Phase ph) {
    in_h_ = x.h();
    in_w_ = x.w();
    return block.forward(bilinear_upsample(x, out_h, out_w), ph);
  }

  Tensor4D<S> backward(const Tensor4D<S>& dy) {
    return bilinear_upsample_backward(block.backward(dy), in_h_, in_w_);
  }

 private:
  Index in_h_ = 0, in_w_ = 0;
};

// Upsample the low-resolution input to the skip resolution, concatenate
// (upsampled first, then skip), refine with a residual block 2c -> c.
template <class S>
struct DecoderBlock {
  Index channels = 0;
  ResidualBlock<S> block;

  DecoderBlock() = default;
  explicit DecoderBlock(Index channels_)
      : channels(channels_), block(2 * channels_, channels_) {}

  void init(Rng& rng) { block.init(rng); }

  void collect(ParamRegistry<S>& reg, const std::string& prefix) {
    block.collect(reg, prefix + ".block");
  }

  Tensor4D<S> forward(const Tensor4D<S>& low, const Tensor4D<S>& skip,
                      Phase ph) {
    require(low.c() == channels && skip.c() == channels,
            "decoder_block: channel mismatch");
    require(skip.h() == 2 * low.h() && skip.w() == 2 * low.w(),
            "decoder_block: skip dims must be exactly twice the input dims");
    low_h_ = low.h();
    low_w_ = low.w();
    Tensor4D<S> up = bilinear_upsample(low, skip.h(), skip.w());
    return block.forward(concat_channels<S>({&up, &skip}), ph);
  }

  std::pair<Tensor4D<S>, Tensor4D<S>> backward(const Tensor4D<S>& dy) {
    std::vector<Tensor4D<S>> parts =
        split_channels(block.backward(dy), {channels, channels});
    Tensor4D<S> dlow = bilinear_upsample_backward(parts[0], low_h_, low_w_);
    return {std::move(dlow), std::move(parts[1])};
  }

 private:
  Index low_h_ = 0, low_w_ = 0;
};

// Full segmentation model. Encoder stages 1-3 feed the decode head; stage 4
// is computed but unused by it. Concatenation order is fixed (u1,u2,u3,d3).
template <class S>
struct PVTFormer {
  PVTFormerConfig cfg;
  PvtV2Encoder<S> encoder;
  ConvBnRelu1x1<S> reduce1, reduce2, reduce3;
  UpBlock<S> up1, up2, up3;
  DecoderBlock<S> dec1, dec2;
  ResidualBlock<S> fuse;
  Conv2d<S> head;

  PVTFormer() = default;
  explicit PVTFormer(const PVTFormerConfig& c)
      : cfg(validated(c)), encoder(cfg.encoder),
        reduce1(cfg.encoder.embed_dims[0], cfg.reduce_c),
        reduce2(cfg.encoder.embed_dims[1], cfg.reduce_c),
        reduce3(cfg.encoder.embed_dims[2], cfg.reduce_c),
        up1(cfg.reduce_c, cfg.out_h, cfg.out_w),
        up2(cfg.reduce_c, cfg.out_h, cfg.out_w),
        up3(cfg.reduce_c, cfg.out_h, cfg.out_w),
        dec1(cfg.reduce_c), dec2(cfg.reduce_c),
        fuse(4 * cfg.reduce_c, cfg.head_channels),
        head(cfg.head_channels, 1, 1, 1, 0, /*bias=*/true) {}

  void init(std::uint64_t seed) {
    Rng rng(seed);
    encoder.init(rng);
    reduce1.init(rng);
    reduce2.init(rng);
    reduce3.init(rng);
    up1.init(rng);
    up2.init(rng);
    up3.init(rng);
    dec1.init(rng);
    dec2.init(rng);
    fuse.init(rng);
    head.init(rng);
  }

  void collect(ParamRegistry<S>& reg) {
    encoder.collect(reg, "encoder");
    reduce1.collect(reg, "reduce1");
    reduce2.collect(reg, "reduce2");
    reduce3.collect(reg, "reduce3");
    up1.collect(reg, "up1");
    up2.collect(reg, "up2");
    up3.collect(reg, "up3");
    dec1.collect(reg, "dec1");
    dec2.collect(reg, "dec2");
    fuse.collect(reg, "fuse");
    head.collect(reg, "head");
  }

  Tensor4D<S> forward_logits(const Tensor4D<S>& x, Phase ph) {
    FeaturePyramid<S> fp = encoder.forward(x, ph);
    Tensor4D<S> c1 = reduce1.forward(fp.f1, ph);
    Tensor4D<S> c2 = reduce2.forward(fp.f2, ph);
    Tensor4D<S> c3 = reduce3.forward(fp.f3, ph);
    Tensor4D<S> u1 = up1.forward(c1, ph);
    Tensor4D<S> u2 = up2.forward(c2, ph);
    Tensor4D<S> u3 = up3.forward(c3, ph);
    Tensor4D<S> d1 = dec1.forward(c3, c2, ph);
    Tensor4D<S> d2 = dec2.forward(d1, c1, ph);
    d2_h_ = d2.h();
    d2_w_ = d2.w();
    Tensor4D<S> d3 = bilinear_upsample(d2, cfg.out_h, cfg.out_w);
    Tensor4D<S> fused = concat_channels<S>({&u1, &u2, &u3, &d3});
    return head.forward(fuse.forward(fused, ph), ph);
  }

  Tensor4D<S> forward(const Tensor4D<S>& x, Phase ph) {
    Tensor4D<S> y = forward_logits(x, ph);
    sigmoid_inplace(y.flat());
    return y;
  }

  // Gradient w.r.t. the logits in, gradient w.r.t. the input out.
  Tensor4D<S> backward(const Tensor4D<S>& dlogits) {
    Tensor4D<S> dfused = fuse.backward(head.backward(dlogits));
    const Index r = cfg.reduce_c;
    std::vector<Tensor4D<S>> parts = split_channels(dfused, {r, r, r, r});
    Tensor4D<S> dd2 = bilinear_upsample_backward(parts[3], d2_h_, d2_w_);
    auto [dd1, dc1_dec] = dec2.backward(dd2);
    auto [dc3_dec, dc2_dec] = dec1.backward(dd1);
    Tensor4D<S> dc1 = up1.backward(parts[0]);
    dc1.flat() += dc1_dec.flat();
    Tensor4D<S> dc2 = up2.backward(parts[1]);
    dc2.flat() += dc2_dec.flat();
    Tensor4D<S> dc3 = up3.backward(parts[2]);
    dc3.flat() += dc3_dec.flat();
    FeaturePyramid<S> dfp;
    dfp.f1 = reduce1.backward(dc1);
    dfp.f2 = reduce2.backward(dc2);
    dfp.f3 = reduce3.backward(dc3);
    return encoder.backward(dfp, /*with_stage4=*/false);
  }

  MaskTensor predict_mask(const Tensor4D<S>& x, double threshold = 0.5) {
    require(threshold > 0.0 && threshold < 1.0,
            "predict_mask: threshold must lie in (0,1)");
    Tensor4D<S> p = forward(x, Phase::eval);
    MaskTensor m(p.n(), p.c(), p.h(), p.w());
    const S t = static_cast<S>(threshold);
    for (Index i = 0; i < p.size(); ++i)
      m.data()[i] = p.data()[i] >= t ? 1 : 0;
    return m;
  }

 private:
  static PVTFormerConfig validated(PVTFormerConfig c) {
    c.validate();
    return c;
  }

  Index d2_h_ = 0, d2_w_ = 0;
};

}  // namespace pvt
