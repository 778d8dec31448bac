#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pvtformer/blocks.hpp"
#include "pvtformer/gradcheck.hpp"

namespace pvt {

// Named finite-difference check over one block at tiny dims, double
// precision. Shared by the diagnostics subcommand and the test suite.
struct BlockCheck {
  std::string name;
  std::function<GradCheckSummary(std::uint64_t seed, int n_coords)> run;
};

namespace detail {

// Checks d(loss)/d(param) for every trainable tensor of the block and
// d(loss)/d(input) via a registered input slot, against a fixed random
// projection loss. Forward runs in train phase so the cached-activation
// backward path is the one being validated.
template <class Block, class In>
GradCheckSummary check_block(Block& block, In& x, std::uint64_t seed,
                             int n_coords) {
  Rng rng(seed);
  ParamRegistry<double> reg;
  if constexpr (requires { block.collect(reg, "b"); })
    block.collect(reg, "b");
  if constexpr (requires(Rng& r) { block.init(r); }) {
    Rng init_rng(seed + 1);
    block.init(init_rng);
  }
  for (Index i = 0; i < x.size(); ++i)
    x.flat()[i] = rng.normal();
  ArrX<double> dx_buf = ArrX<double>::Zero(x.size());
  reg.add("x", {x.size()}, x.data(), dx_buf.data());
  Rng jitter_rng(seed + 2);
  perturb_params(reg, jitter_rng, 0.05);

  auto probe = block.forward(x, Phase::train);
  ArrX<double> r = make_projection<double>(probe.size(), rng);
  auto loss_fn = [&] {
    auto out = block.forward(x, Phase::train);
    return projection_loss(out.flat(), r);
  };

  reg.zero_grad();
  auto out = block.forward(x, Phase::train);
  auto dy = out;
  dy.flat() = r;
  dx_buf = block.backward(dy).flat();

  Rng pick_rng(seed + 3);
  return gradcheck_params(reg, loss_fn, pick_rng, n_coords);
}

inline GradCheckSummary check_bilinear_upsample(std::uint64_t seed,
                                                int n_coords) {
  Rng rng(seed);
  Tensor4D<double> x(2, 3, 4, 5);
  for (Index i = 0; i < x.size(); ++i) x.flat()[i] = rng.normal();
  ArrX<double> dx_buf = ArrX<double>::Zero(x.size());
  ParamRegistry<double> reg;
  reg.add("x", {x.size()}, x.data(), dx_buf.data());

  const Index oh = 9, ow = 10;
  ArrX<double> r = make_projection<double>(2 * 3 * oh * ow, rng);
  auto loss_fn = [&] {
    return projection_loss(bilinear_upsample(x, oh, ow).flat(), r);
  };
  Tensor4D<double> dy(2, 3, oh, ow);
  dy.flat() = r;
  dx_buf = bilinear_upsample_backward(dy, 4, 5).flat();

  Rng pick_rng(seed + 3);
  return gradcheck_params(reg, loss_fn, pick_rng, n_coords);
}

}  // namespace detail

// One entry per differentiable op, at shapes small enough for exhaustive
// probing yet exercising every code path (stride, padding, groups, heads,
// spatial reduction, projection shortcut).
inline std::vector<BlockCheck> block_gradchecks() {
  std::vector<BlockCheck> list;
  auto add = [&](const char* name, auto fn) {
    list.push_back(BlockCheck{name, fn});
  };

  add("conv2d", [](std::uint64_t seed, int n) {
    Conv2d<double> b(3, 4, 3, 2, 1, true);
    Tensor4D<double> x(2, 3, 6, 7);
    return detail::check_block(b, x, seed, n);
  });
  add("conv2d_depthwise", [](std::uint64_t seed, int n) {
    Conv2d<double> b(6, 6, 3, 1, 1, true, 6);
    Tensor4D<double> x(2, 6, 5, 5);
    return detail::check_block(b, x, seed, n);
  });
  add("batchnorm2d", [](std::uint64_t seed, int n) {
    BatchNorm2d<double> b(4);
    Tensor4D<double> x(2, 4, 5, 5);
    return detail::check_block(b, x, seed, n);
  });
  add("layernorm", [](std::uint64_t seed, int n) {
    LayerNorm<double> b(8);
    TokenTensor<double> x(2, 3, 4, 8);
    return detail::check_block(b, x, seed, n);
  });
  add("linear", [](std::uint64_t seed, int n) {
    Linear<double> b(6, 10);
    TokenTensor<double> x(2, 3, 3, 6);
    return detail::check_block(b, x, seed, n);
  });
  add("relu", [](std::uint64_t seed, int n) {
    ReluOp<double> b;
    Tensor4D<double> x(2, 3, 5, 5);
    return detail::check_block(b, x, seed, n);
  });
  add("bilinear_upsample", [](std::uint64_t seed, int n) {
    return detail::check_bilinear_upsample(seed, n);
  });
  add("conv_bn_relu_1x1", [](std::uint64_t seed, int n) {
    ConvBnRelu1x1<double> b(5, 4);
    Tensor4D<double> x(2, 5, 6, 6);
    return detail::check_block(b, x, seed, n);
  });
  add("residual_block", [](std::uint64_t seed, int n) {
    ResidualBlock<double> b(5, 7);
    Tensor4D<double> x(2, 5, 6, 6);
    return detail::check_block(b, x, seed, n);
  });
  add("overlap_patch_embed", [](std::uint64_t seed, int n) {
    OverlapPatchEmbed<double> b(3, 8, 7, 4, 3);
    Tensor4D<double> x(2, 3, 8, 8);
    return detail::check_block(b, x, seed, n);
  });
  add("sra_attention_conv", [](std::uint64_t seed, int n) {
    SraAttention<double> b(8, 2, 2, false);
    TokenTensor<double> x(2, 4, 4, 8);
    return detail::check_block(b, x, seed, n);
  });
  add("sra_attention_sr1", [](std::uint64_t seed, int n) {
    SraAttention<double> b(8, 2, 1, false);
    TokenTensor<double> x(2, 4, 4, 8);
    return detail::check_block(b, x, seed, n);
  });
  add("sra_attention_linear", [](std::uint64_t seed, int n) {
    SraAttention<double> b(8, 2, 2, true);
    TokenTensor<double> x(2, 8, 8, 8);
    return detail::check_block(b, x, seed, n);
  });
  add("conv_ffn", [](std::uint64_t seed, int n) {
    ConvFfn<double> b(8, 16);
    TokenTensor<double> x(2, 4, 4, 8);
    return detail::check_block(b, x, seed, n);
  });
  add("transformer_block", [](std::uint64_t seed, int n) {
    TransformerBlock<double> b(8, 2, 2, 2, false);
    TokenTensor<double> x(2, 4, 4, 8);
    return detail::check_block(b, x, seed, n);
  });
  return list;
}

}  // namespace pvt
