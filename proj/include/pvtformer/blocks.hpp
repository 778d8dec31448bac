#pragma once

#include <string>
#include <vector>

#include "pvtformer/functional.hpp"
#include "pvtformer/param.hpp"
#include "pvtformer/rng.hpp"
#include "pvtformer/tensor.hpp"

namespace pvt {

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;
inline constexpr double kLnEps = 1e-5;
inline constexpr double kInitStd = 0.02;

// ---------------------------------------------------------------------------
// Primitive layers.
// ---------------------------------------------------------------------------

template <class S>
struct Conv2d {
  Index in_c = 0, out_c = 0, k = 1, stride = 1, pad = 0, groups = 1;
  bool has_bias = false;
  Tensor4D<S> weight, wgrad;  // (out_c, in_c/groups, k, k)
  VecX<S> bias, bgrad;

  Conv2d() = default;
  Conv2d(Index in_c_, Index out_c_, Index k_, Index stride_, Index pad_,
         bool bias_, Index groups_ = 1)
      : in_c(in_c_), out_c(out_c_), k(k_), stride(stride_), pad(pad_),
        groups(groups_), has_bias(bias_) {
    weight = Tensor4D<S>(out_c, in_c / groups, k, k);
    wgrad = Tensor4D<S>(out_c, in_c / groups, k, k);
    if (has_bias) {
      bias = VecX<S>::Zero(out_c);
      bgrad = VecX<S>::Zero(out_c);
    }
  }

  void init(Rng& rng) {
    for (Index i = 0; i < weight.size(); ++i)
      weight.data()[i] = static_cast<S>(rng.trunc_normal(kInitStd));
    if (has_bias) bias.setZero();
  }

  void collect(ParamRegistry<S>& reg, const std::string& prefix) {
    reg.add(prefix + ".weight", {weight.n(), weight.c(), weight.h(), weight.w()},
            weight.data(), wgrad.data());
    if (has_bias)
      reg.add(prefix + ".bias", {out_c}, bias.data(), bgrad.data());
  }

  Tensor4D<S> forward(const Tensor4D<S>& x, Phase ph) {
    require(x.c() == in_c, "conv: input has " + std::to_string(x.c()) +
                               " channels, layer expects " + std::to_string(in_c));
    if (ph == Phase::train) x_ = x;
    return conv2d_forward(x, weight, has_bias ? &bias : nullptr, stride, pad,
                          groups);
  }

  Tensor4D<S> backward(const Tensor4D<S>& dy) {
    return conv2d_backward(dy, x_, weight, wgrad, has_bias ? &bgrad : nullptr,
                           stride, pad, groups);
  }

 private:
  Tensor4D<S> x_;
};

template <class S>
struct BatchNorm2d {
  Index c = 0;
  VecX<S> gamma, beta, ggrad, bgrad;
  VecX<S> running_mean, running_var;

  BatchNorm2d() = default;
  explicit BatchNorm2d(Index c_) : c(c_) {
    gamma = VecX<S>::Ones(c);
    beta = VecX<S>::Zero(c);
    ggrad = VecX<S>::Zero(c);
    bgrad = VecX<S>::Zero(c);
    running_mean = VecX<S>::Zero(c);
    running_var = VecX<S>::Ones(c);
  }

  void init(Rng&) {
    gamma.setOnes();
    beta.setZero();
    running_mean.setZero();
    running_var.setOnes();
  }

  void collect(ParamRegistry<S>& reg, const std::string& prefix) {
    reg.add(prefix + ".gamma", {c}, gamma.data(), ggrad.data());
    reg.add(prefix + ".beta", {c}, beta.data(), bgrad.data());
    reg.add(prefix + ".running_mean", {c}, running_mean.data(), nullptr, false);
    reg.add(prefix + ".running_var", {c}, running_var.data(), nullptr, false);
  }

  Tensor4D<S> forward(const Tensor4D<S>& x, Phase ph) {
    require(x.c() == c, "batchnorm: channel mismatch");
    if (ph == Phase::train) {
      x_ = x;
      return batchnorm_forward_train(x, gamma, beta, running_mean, running_var,
                                     kBnMomentum, kBnEps, cache_);
    }
    return batchnorm_forward_eval(x, gamma, beta, running_mean, running_var,
                                  kBnEps);
  }

  Tensor4D<S> backward(const Tensor4D<S>& dy) {
    return batchnorm_backward(dy, x_, gamma, cache_, ggrad, bgrad);
  }

 private:
  Tensor4D<S> x_;
  BatchNormCache<S> cache_;
};

template <class S>
struct LayerNorm {
  Index d = 0;
  VecX<S> gamma, beta, ggrad, bgrad;

  LayerNorm() = default;
  explicit LayerNorm(Index d_) : d(d_) {
    gamma = VecX<S>::Ones(d);
    beta = VecX<S>::Zero(d);
    ggrad = VecX<S>::Zero(d);
    bgrad = VecX<S>::Zero(d);
  }

  void init(Rng&) {
    gamma.setOnes();
    beta.setZero();
  }

  void collect(ParamRegistry<S>& reg, const std::string& prefix) {
    reg.add(prefix + ".gamma", {d}, gamma.data(), ggrad.data());
    reg.add(prefix + ".beta", {d}, beta.data(), bgrad.data());
  }

  TokenTensor<S> forward(const TokenTensor<S>& x, Phase ph) {
    if (ph == Phase::train) {
      x_ = x;
      return layernorm_forward(x, gamma, beta, kLnEps, &cache_);
    }
    return layernorm_forward<S>(x, gamma, beta, kLnEps, nullptr);
  }

  TokenTensor<S> backward(const TokenTensor<S>& dy) {
    return layernorm_backward(dy, x_, gamma, cache_, ggrad, bgrad);
  }

 private:
  TokenTensor<S> x_;
  LayerNormCache<S> cache_;
};

template <class S>
struct Linear {
  Index in = 0, out = 0;
  MatX<S> weight, wgrad;  // (out, in)
  VecX<S> bias, bgrad;

  Linear() = default;
  Linear(Index in_, Index out_) : in(in_), out(out_) {
    weight = MatX<S>::Zero(out, in);
    wgrad = MatX<S>::Zero(out, in);
    bias = VecX<S>::Zero(out);
    bgrad = VecX<S>::Zero(out);
  }

  void init(Rng& rng) {
    for (Index i = 0; i < weight.size(); ++i)
      weight.data()[i] = static_cast<S>(rng.trunc_normal(kInitStd));
    bias.setZero();
  }

  void collect(ParamRegistry<S>& reg, const std::string& prefix) {
    reg.add(prefix + ".weight", {out, in}, weight.data(), wgrad.data());
    reg.add(prefix + ".bias", {out}, bias.data(), bgrad.data());
  }

  TokenTensor<S> forward(const TokenTensor<S>& x, Phase ph) {
    require(x.d() == in, "linear: embed dim mismatch");
    if (ph == Phase::train) x_ = x;
    TokenTensor<S> y(x.n(), x.h(), x.w(), out);
    y.rows().noalias() = x.rows() * weight.transpose();
    y.rows().rowwise() += bias.transpose();
    return y;
  }

  TokenTensor<S> backward(const TokenTensor<S>& dy) {
    wgrad.noalias() += dy.rows().transpose() * x_.rows();
    bgrad += dy.rows().colwise().sum().transpose();
    TokenTensor<S> dx(dy.n(), dy.h(), dy.w(), in);
    dx.rows().noalias() = dy.rows() * weight;
    return dx;
  }

 private:
  TokenTensor<S> x_;
};

// Activation helpers that remember their pre-activation in training.
template <class S>
struct ReluOp {
  Tensor4D<S> forward(Tensor4D<S> x, Phase ph) {
    if (ph == Phase::train) pre_ = x.flat();
    relu_inplace(x.flat());
    return x;
  }
  Tensor4D<S> backward(const Tensor4D<S>& dy) {
    Tensor4D<S> dx(dy.n(), dy.c(), dy.h(), dy.w());
    dx.flat() = relu_backward(dy.flat(), pre_);
    return dx;
  }

 private:
  ArrX<S> pre_;
};

// ---------------------------------------------------------------------------
// 1x1 Conv + BN + ReLU channel reducer.
// ---------------------------------------------------------------------------

template <class S>
struct ConvBnRelu1x1 {
  Conv2d<S> conv;
  BatchNorm2d<S> bn;
  ReluOp<S> relu;

  ConvBnRelu1x1() = default;
  ConvBnRelu1x1(Index in_c, Index out_c)
      : conv(in_c, out_c, 1, 1, 0, /*bias=*/false), bn(out_c) {}

  void init(Rng& rng) {
    conv.init(rng);
    bn.init(rng);
  }

  void collect(ParamRegistry<S>& reg, const std::string& prefix) {
    conv.collect(reg, prefix + ".conv");
    bn.collect(reg, prefix + ".bn");
  }

  Tensor4D<S> forward(const Tensor4D<S>& x, Phase ph) {
    return relu.forward(bn.forward(conv.forward(x, ph), ph), ph);
  }

  Tensor4D<S> backward(const Tensor4D<S>& dy) {
    return conv.backward(bn.backward(relu.backward(dy)));
  }
};

// ---------------------------------------------------------------------------
// Residual block: Conv3x3-BN-ReLU-Conv3x3-BN plus identity (1x1 Conv + BN
// projection when channel counts differ), final ReLU on the sum.
// ---------------------------------------------------------------------------

template <class S>
struct ResidualBlock {
  Index in_c = 0, out_c = 0;
  Conv2d<S> conv1, conv2;
  BatchNorm2d<S> bn1, bn2;
  ReluOp<S> relu1, relu_out;
  bool has_projection = false;
  Conv2d<S> proj_conv;
  BatchNorm2d<S> proj_bn;

  ResidualBlock() = default;
  ResidualBlock(Index in_c_, Index out_c_)
      : in_c(in_c_), out_c(out_c_),
        conv1(in_c_, out_c_, 3, 1, 1, /*bias=*/false),
        conv2(out_c_, out_c_, 3, 1, 1, /*bias=*/false),
        bn1(out_c_), bn2(out_c_), has_projection(in_c_ != out_c_) {
    if (has_projection) {
      proj_conv = Conv2d<S>(in_c_, out_c_, 1, 1, 0, /*bias=*/false);
      proj_bn = BatchNorm2d<S>(out_c_);
    }
  }

  void init(Rng& rng) {
    conv1.init(rng);
    bn1.init(rng);
    conv2.init(rng);
    bn2.init(rng);
    if (has_projection) {
      proj_conv.init(rng);
      proj_bn.init(rng);
    }
  }

  void collect(ParamRegistry<S>& reg, const std::string& prefix) {
    conv1.collect(reg, prefix + ".conv1");
    bn1.collect(reg, prefix + ".bn1");
    conv2.collect(reg, prefix + ".conv2");
    bn2.collect(reg, prefix + ".bn2");
    if (has_projection) {
      proj_conv.collect(reg, prefix + ".proj.conv");
      proj_bn.collect(reg, prefix + ".proj.bn");
    }
  }

  Tensor4D<S> forward(const Tensor4D<S>& x, Phase ph) {
    Tensor4D<S> main = relu1.forward(bn1.forward(conv1.forward(x, ph), ph), ph);
    main = bn2.forward(conv2.forward(main, ph), ph);
    Tensor4D<S> shortcut =
        has_projection ? proj_bn.forward(proj_conv.forward(x, ph), ph) : x;
    main.flat() += shortcut.flat();
    return relu_out.forward(std::move(main), ph);
  }

  Tensor4D<S> backward(const Tensor4D<S>& dy) {
    const Tensor4D<S> dsum = relu_out.backward(dy);
    Tensor4D<S> dx = conv1.backward(
        bn1.backward(relu1.backward(conv2.backward(bn2.backward(dsum)))));
    if (has_projection) {
      dx.flat() += proj_conv.backward(proj_bn.backward(dsum)).flat();
    } else {
      dx.flat() += dsum.flat();
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// Overlapping patch embedding: strided conv (kernel > stride) + LayerNorm in
// token space.
// ---------------------------------------------------------------------------

template <class S>
struct OverlapPatchEmbed {
  Conv2d<S> conv;
  LayerNorm<S> norm;

  OverlapPatchEmbed() = default;
  OverlapPatchEmbed(Index in_c, Index embed_dim, Index kernel, Index stride,
                    Index pad)
      : conv(in_c, embed_dim, kernel, stride, pad, /*bias=*/true),
        norm(embed_dim) {
    require(kernel > stride,
            "overlap_patch_embed: kernel must exceed stride (overlap)");
  }

  void init(Rng& rng) {
    conv.init(rng);
    norm.init(rng);
  }

  void collect(ParamRegistry<S>& reg, const std::string& prefix) {
    conv.collect(reg, prefix + ".conv");
    norm.collect(reg, prefix + ".norm");
  }

  TokenTensor<S> forward(const Tensor4D<S>& x, Phase ph) {
    return norm.forward(to_tokens(conv.forward(x, ph)), ph);
  }

  Tensor4D<S> backward(const TokenTensor<S>& dy) {
    return conv.backward(to_feature_map(norm.backward(dy)));
  }
};

// ---------------------------------------------------------------------------
// Spatial-reduction multi-head attention. Keys/values come from the input
// tokens spatially reduced either by a (kernel=sr, stride=sr) convolution
// (default) or, with linear_sra, by 7x7 average pooling + 1x1 conv + GELU.
// ---------------------------------------------------------------------------

inline constexpr Index kLinearSraPoolSize = 7;

template <class S>
struct SraAttention {
  Index d = 0, heads = 1, sr_ratio = 1;
  bool linear_sra = false;
  bool has_reduction = false;
  Linear<S> q, k, v, proj;
  Conv2d<S> sr_conv;
  LayerNorm<S> sr_norm;

  SraAttention() = default;
  SraAttention(Index d_, Index heads_, Index sr_ratio_, bool linear_sra_ = false)
      : d(d_), heads(heads_), sr_ratio(sr_ratio_), linear_sra(linear_sra_),
        q(d_, d_), k(d_, d_), v(d_, d_), proj(d_, d_) {
    require(heads_ >= 1 && d_ % heads_ == 0,
            "sra_attention: embed dim must be divisible by head count");
    require(sr_ratio_ >= 1, "sra_attention: sr_ratio must be >= 1");
    if (linear_sra) {
      sr_conv = Conv2d<S>(d_, d_, 1, 1, 0, /*bias=*/true);
      sr_norm = LayerNorm<S>(d_);
      has_reduction = true;
    } else if (sr_ratio_ > 1) {
      sr_conv = Conv2d<S>(d_, d_, sr_ratio_, sr_ratio_, 0, /*bias=*/true);
      sr_norm = LayerNorm<S>(d_);
      has_reduction = true;
    }
  }

  void init(Rng& rng) {
    q.init(rng);
    k.init(rng);
    v.init(rng);
    proj.init(rng);
    if (has_reduction) {
      sr_conv.init(rng);
      sr_norm.init(rng);
    }
  }

  void collect(ParamRegistry<S>& reg, const std::string& prefix) {
    q.collect(reg, prefix + ".q");
    k.collect(reg, prefix + ".k");
    v.collect(reg, prefix + ".v");
    proj.collect(reg, prefix + ".proj");
    if (has_reduction) {
      sr_conv.collect(reg, prefix + ".sr_conv");
      sr_norm.collect(reg, prefix + ".sr_norm");
    }
  }

  // Train-phase softmax maps, one (l_q, l_kv) matrix per sample and head.
  const std::vector<MatX<S>>& attention_maps() const { return attn_; }

  TokenTensor<S> forward(const TokenTensor<S>& x, Phase ph) {
    require(x.d() == d, "sra_attention: embed dim mismatch");
    if (!linear_sra && sr_ratio > 1)
      require(x.h() % sr_ratio == 0 && x.w() % sr_ratio == 0,
              "sra_attention: spatial dims must be divisible by sr_ratio");

    TokenTensor<S> Q = q.forward(x, ph);
    TokenTensor<S> kv_src = reduce_tokens(x, ph);
    TokenTensor<S> K = k.forward(kv_src, ph);
    TokenTensor<S> V = v.forward(kv_src, ph);

    const Index dh = d / heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    TokenTensor<S> cat(x.n(), x.h(), x.w(), d);
    if (ph == Phase::train) attn_.assign(static_cast<std::size_t>(x.n() * heads), MatX<S>());
    for (Index n = 0; n < x.n(); ++n) {
      auto Qm = Q.sample(n);
      auto Km = K.sample(n);
      auto Vm = V.sample(n);
      auto Om = cat.sample(n);
      for (Index hd = 0; hd < heads; ++hd) {
        MatX<S> A = Qm.middleCols(hd * dh, dh) *
                    Km.middleCols(hd * dh, dh).transpose() * scale;
        softmax_rows_inplace(A);
        Om.middleCols(hd * dh, dh).noalias() = A * Vm.middleCols(hd * dh, dh);
        if (ph == Phase::train)
          attn_[static_cast<std::size_t>(n * heads + hd)] = std::move(A);
      }
    }
    if (ph == Phase::train) {
      Q_ = std::move(Q);
      K_ = std::move(K);
      V_ = std::move(V);
    }
    return proj.forward(cat, ph);
  }

  TokenTensor<S> backward(const TokenTensor<S>& dy) {
    TokenTensor<S> dcat = proj.backward(dy);
    const Index dh = d / heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    TokenTensor<S> dQ(Q_.n(), Q_.h(), Q_.w(), d);
    TokenTensor<S> dK(K_.n(), K_.h(), K_.w(), d);
    TokenTensor<S> dV(V_.n(), V_.h(), V_.w(), d);
    for (Index n = 0; n < dQ.n(); ++n) {
      auto Qm = Q_.sample(n);
      auto Km = K_.sample(n);
      auto Vm = V_.sample(n);
      auto dOm = dcat.sample(n);
      for (Index hd = 0; hd < heads; ++hd) {
        const MatX<S>& A = attn_[static_cast<std::size_t>(n * heads + hd)];
        MatX<S> dO = dOm.middleCols(hd * dh, dh);
        MatX<S> dA = dO * Vm.middleCols(hd * dh, dh).transpose();
        dV.sample(n).middleCols(hd * dh, dh).noalias() = A.transpose() * dO;
        MatX<S> dS = softmax_rows_backward(A, dA);
        dQ.sample(n).middleCols(hd * dh, dh).noalias() =
            dS * Km.middleCols(hd * dh, dh) * scale;
        dK.sample(n).middleCols(hd * dh, dh).noalias() =
            dS.transpose() * Qm.middleCols(hd * dh, dh) * scale;
      }
    }
    TokenTensor<S> dx = q.backward(dQ);
    TokenTensor<S> dkv = k.backward(dK);
    dkv.flat() += v.backward(dV).flat();
    dkv = reduce_backward(std::move(dkv), dx.h(), dx.w());
    dx.flat() += dkv.flat();
    return dx;
  }

 private:
  TokenTensor<S> reduce_tokens(const TokenTensor<S>& x, Phase ph) {
    if (!has_reduction) return x;
    Tensor4D<S> fm = to_feature_map(x);
    if (linear_sra) {
      Tensor4D<S> pooled =
          adaptive_avg_pool(fm, kLinearSraPoolSize, kLinearSraPoolSize);
      pool_in_h_ = fm.h();
      pool_in_w_ = fm.w();
      TokenTensor<S> t = sr_norm.forward(to_tokens(sr_conv.forward(pooled, ph)), ph);
      if (ph == Phase::train) pre_gelu_ = t.flat();
      gelu_inplace(t.flat());
      return t;
    }
    return sr_norm.forward(to_tokens(sr_conv.forward(fm, ph)), ph);
  }

  TokenTensor<S> reduce_backward(TokenTensor<S> dkv, Index in_h, Index in_w) {
    if (!has_reduction) return dkv;
    if (linear_sra) {
      dkv.flat() = gelu_backward(dkv.flat(), pre_gelu_);
      Tensor4D<S> dpool = sr_conv.backward(to_feature_map(sr_norm.backward(dkv)));
      return to_tokens(adaptive_avg_pool_backward(dpool, pool_in_h_, pool_in_w_));
    }
    Tensor4D<S> dfm = sr_conv.backward(to_feature_map(sr_norm.backward(dkv)));
    require(dfm.h() == in_h && dfm.w() == in_w,
            "sra_attention: reduction backward shape mismatch");
    return to_tokens(dfm);
  }

  TokenTensor<S> Q_, K_, V_;
  std::vector<MatX<S>> attn_;
  ArrX<S> pre_gelu_;
  Index pool_in_h_ = 0, pool_in_w_ = 0;
};

// ---------------------------------------------------------------------------
// Convolutional feed-forward: linear d->hidden, 3x3 depthwise conv over the
// spatial view, GELU, linear hidden->d.
// ---------------------------------------------------------------------------

template <class S>
struct ConvFfn {
  Index d = 0, hidden = 0;
  Linear<S> fc1, fc2;
  Conv2d<S> dwconv;

  ConvFfn() = default;
  ConvFfn(Index d_, Index hidden_)
      : d(d_), hidden(hidden_), fc1(d_, hidden_), fc2(hidden_, d_),
        dwconv(hidden_, hidden_, 3, 1, 1, /*bias=*/true, /*groups=*/hidden_) {}

  void init(Rng& rng) {
    fc1.init(rng);
    fc2.init(rng);
    dwconv.init(rng);
  }

  void collect(ParamRegistry<S>& reg, const std::string& prefix) {
    fc1.collect(reg, prefix + ".fc1");
    dwconv.collect(reg, prefix + ".dwconv");
    fc2.collect(reg, prefix + ".fc2");
  }

  TokenTensor<S> forward(const TokenTensor<S>& x, Phase ph) {
    TokenTensor<S> t = to_tokens(dwconv.forward(to_feature_map(fc1.forward(x, ph)), ph));
    if (ph == Phase::train) pre_gelu_ = t.flat();
    gelu_inplace(t.flat());
    return fc2.forward(t, ph);
  }

  TokenTensor<S> backward(const TokenTensor<S>& dy) {
    TokenTensor<S> dt = fc2.backward(dy);
    dt.flat() = gelu_backward(dt.flat(), pre_gelu_);
    return fc1.backward(to_tokens(dwconv.backward(to_feature_map(dt))));
  }

 private:
  ArrX<S> pre_gelu_;
};

// ---------------------------------------------------------------------------
// Pre-norm transformer block: x + attn(LN(x)), then + ffn(LN(.)).
// ---------------------------------------------------------------------------

template <class S>
struct TransformerBlock {
  LayerNorm<S> norm1, norm2;
  SraAttention<S> attn;
  ConvFfn<S> ffn;

  TransformerBlock() = default;
  TransformerBlock(Index d, Index heads, Index sr_ratio, Index mlp_ratio,
                   bool linear_sra = false)
      : norm1(d), norm2(d), attn(d, heads, sr_ratio, linear_sra),
        ffn(d, d * mlp_ratio) {}

  void init(Rng& rng) {
    norm1.init(rng);
    attn.init(rng);
    norm2.init(rng);
    ffn.init(rng);
  }

  void collect(ParamRegistry<S>& reg, const std::string& prefix) {
    norm1.collect(reg, prefix + ".norm1");
    attn.collect(reg, prefix + ".attn");
    norm2.collect(reg, prefix + ".norm2");
    ffn.collect(reg, prefix + ".ffn");
  }

  TokenTensor<S> forward(TokenTensor<S> x, Phase ph) {
    x.flat() += attn.forward(norm1.forward(x, ph), ph).flat();
    x.flat() += ffn.forward(norm2.forward(x, ph), ph).flat();
    return x;
  }

  TokenTensor<S> backward(const TokenTensor<S>& dy) {
    TokenTensor<S> dz = dy;
    dz.flat() += norm2.backward(ffn.backward(dy)).flat();
    TokenTensor<S> dx = dz;
    dx.flat() += norm1.backward(attn.backward(dz)).flat();
    return dx;
  }
};

}  // namespace pvt
