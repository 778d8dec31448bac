#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pvtformer/tensor.hpp"

namespace pvt {

// ---------------------------------------------------------------------------
// Bilinear sampling, half-pixel-center convention (align-corners false):
//   src = (dst + 0.5) * in/out - 0.5, clamped to [0, in-1].
// ---------------------------------------------------------------------------

struct AxisTap {
  Index lo = 0;
  Index hi = 0;
  double t = 0.0;  // blend toward hi; value = v_lo + t * (v_hi - v_lo)
};

inline std::vector<AxisTap> bilinear_axis_taps(Index in, Index out) {
  require(in >= 1 && out >= 1, "bilinear taps: dimensions must be positive");
  std::vector<AxisTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::min(std::max(src, 0.0), static_cast<double>(in - 1));
    const Index lo = static_cast<Index>(std::floor(src));
    taps[static_cast<std::size_t>(i)] = {lo, std::min(lo + 1, in - 1),
                                         src - static_cast<double>(lo)};
  }
  return taps;
}

template <class S>
Tensor4D<S> bilinear_upsample(const Tensor4D<S>& x, Index out_h, Index out_w) {
  require(out_h >= 1 && out_w >= 1,
          "bilinear_upsample: target dims must be positive");
  require(out_h >= x.h() && out_w >= x.w(),
          "bilinear_upsample: target dims must not shrink the input");
  const auto ty = bilinear_axis_taps(x.h(), out_h);
  const auto tx = bilinear_axis_taps(x.w(), out_w);
  Tensor4D<S> y(x.n(), x.c(), out_h, out_w);
  for (Index n = 0; n < x.n(); ++n) {
    for (Index c = 0; c < x.c(); ++c) {
      for (Index i = 0; i < out_h; ++i) {
        const AxisTap& ay = ty[static_cast<std::size_t>(i)];
        for (Index j = 0; j < out_w; ++j) {
          const AxisTap& ax = tx[static_cast<std::size_t>(j)];
          const double v00 = x(n, c, ay.lo, ax.lo);
          const double v01 = x(n, c, ay.lo, ax.hi);
          const double v10 = x(n, c, ay.hi, ax.lo);
          const double v11 = x(n, c, ay.hi, ax.hi);
          const double top = v00 + ax.t * (v01 - v00);
          const double bot = v10 + ax.t * (v11 - v10);
          y(n, c, i, j) = static_cast<S>(top + ay.t * (bot - top));
        }
      }
    }
  }
  return y;
}

/// Adjoint of bilinear_upsample: scatters output gradients back through the
/// same taps.
template <class S>
Tensor4D<S> bilinear_upsample_backward(const Tensor4D<S>& dy, Index in_h,
                                       Index in_w) {
  const auto ty = bilinear_axis_taps(in_h, dy.h());
  const auto tx = bilinear_axis_taps(in_w, dy.w());
  Tensor4D<S> dx(dy.n(), dy.c(), in_h, in_w);
  for (Index n = 0; n < dy.n(); ++n) {
    for (Index c = 0; c < dy.c(); ++c) {
      for (Index i = 0; i < dy.h(); ++i) {
        const AxisTap& ay = ty[static_cast<std::size_t>(i)];
        for (Index j = 0; j < dy.w(); ++j) {
          const AxisTap& ax = tx[static_cast<std::size_t>(j)];
          const double g = dy(n, c, i, j);
          dx(n, c, ay.lo, ax.lo) += static_cast<S>(g * (1.0 - ay.t) * (1.0 - ax.t));
          dx(n, c, ay.lo, ax.hi) += static_cast<S>(g * (1.0 - ay.t) * ax.t);
          dx(n, c, ay.hi, ax.lo) += static_cast<S>(g * ay.t * (1.0 - ax.t));
          dx(n, c, ay.hi, ax.hi) += static_cast<S>(g * ay.t * ax.t);
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Grouped 2-D convolution via strip-mined im2col + GEMM. Square kernels,
// symmetric stride/padding; weight layout (out_c, in_c/groups, k, k).
// ---------------------------------------------------------------------------

inline Index conv_out_dim(Index in, Index k, Index stride, Index pad) {
  return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

// Fills cols (cg*k*k, rows*out_w) for output rows [r0, r0+rows) of sample n,
// channel group g.
template <class S>
void im2col_strip(const Tensor4D<S>& x, Index n, Index g, Index cg, Index k,
                  Index stride, Index pad, Index out_w, Index r0, Index rows,
                  MatX<S>& cols) {
  cols.resize(cg * k * k, rows * out_w);
  for (Index c = 0; c < cg; ++c) {
    const Index cin = g * cg + c;
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        const Index row = (c * k + ki) * k + kj;
        S* dst = cols.data() + row * cols.cols();
        for (Index r = 0; r < rows; ++r) {
          const Index ih = (r0 + r) * stride + ki - pad;
          if (ih < 0 || ih >= x.h()) {
            for (Index ow = 0; ow < out_w; ++ow) dst[r * out_w + ow] = S(0);
            continue;
          }
          for (Index ow = 0; ow < out_w; ++ow) {
            const Index iw = ow * stride + kj - pad;
            dst[r * out_w + ow] =
                (iw >= 0 && iw < x.w()) ? x(n, cin, ih, iw) : S(0);
          }
        }
      }
    }
  }
}

// Scatter-add of a column strip back into dx.
template <class S>
void col2im_strip(const MatX<S>& cols, Index n, Index g, Index cg, Index k,
                  Index stride, Index pad, Index out_w, Index r0, Index rows,
                  Tensor4D<S>& dx) {
  for (Index c = 0; c < cg; ++c) {
    const Index cin = g * cg + c;
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        const Index row = (c * k + ki) * k + kj;
        const S* src = cols.data() + row * cols.cols();
        for (Index r = 0; r < rows; ++r) {
          const Index ih = (r0 + r) * stride + ki - pad;
          if (ih < 0 || ih >= dx.h()) continue;
          for (Index ow = 0; ow < out_w; ++ow) {
            const Index iw = ow * stride + kj - pad;
            if (iw >= 0 && iw < dx.w()) dx(n, cin, ih, iw) += src[r * out_w + ow];
          }
        }
      }
    }
  }
}

inline Index conv_strip_rows(Index cg, Index k, Index out_w, Index out_h,
                             std::size_t elem_size) {
  const std::size_t budget = std::size_t(8) << 20;  // ~8 MB im2col working set
  const std::size_t per_row =
      static_cast<std::size_t>(cg * k * k * out_w) * elem_size;
  Index rows = static_cast<Index>(std::max<std::size_t>(1, budget / std::max<std::size_t>(per_row, 1)));
  return std::min(rows, out_h);
}

}  // namespace detail

template <class S>
Tensor4D<S> conv2d_forward(const Tensor4D<S>& x, const Tensor4D<S>& weight,
                           const VecX<S>* bias, Index stride, Index pad,
                           Index groups) {
  const Index k = weight.h();
  require(weight.w() == k, "conv2d: kernels must be square");
  require(x.c() % groups == 0 && weight.n() % groups == 0,
          "conv2d: channels not divisible by groups");
  require(weight.c() == x.c() / groups,
          "conv2d: weight input channels do not match input (" +
              weight.shape_str() + " vs x " + x.shape_str() + ")");
  const Index out_c = weight.n();
  const Index out_h = conv_out_dim(x.h(), k, stride, pad);
  const Index out_w = conv_out_dim(x.w(), k, stride, pad);
  require(out_h >= 1 && out_w >= 1, "conv2d: kernel larger than padded input");
  require(!bias || bias->size() == out_c, "conv2d: bias size mismatch");

  const Index cg = x.c() / groups;
  const Index ocg = out_c / groups;
  Tensor4D<S> y(x.n(), out_c, out_h, out_w);

  // 1x1 stride-1 convolutions reduce to a plain channel-mixing GEMM.
  if (k == 1 && stride == 1 && pad == 0) {
    ConstMatMap<S> wmat(weight.data(), out_c, cg);
    for (Index n = 0; n < x.n(); ++n) {
      for (Index g = 0; g < groups; ++g) {
        auto xg = x.sample(n).middleRows(g * cg, cg);
        auto yg = y.sample(n).middleRows(g * ocg, ocg);
        yg.noalias() = wmat.middleRows(g * ocg, ocg) * xg;
      }
    }
  } else {
    const Index strip = detail::conv_strip_rows(cg, k, out_w, out_h, sizeof(S));
    MatX<S> cols, ybuf;
    for (Index n = 0; n < x.n(); ++n) {
      for (Index g = 0; g < groups; ++g) {
        ConstMatMap<S> wg(weight.data() + g * ocg * cg * k * k, ocg, cg * k * k);
        for (Index r0 = 0; r0 < out_h; r0 += strip) {
          const Index rows = std::min(strip, out_h - r0);
          detail::im2col_strip(x, n, g, cg, k, stride, pad, out_w, r0, rows, cols);
          ybuf.resize(ocg, rows * out_w);
          ybuf.noalias() = wg * cols;
          // Output rows of one strip are strided per channel; copy back.
          for (Index oc = 0; oc < ocg; ++oc) {
            S* dst = y.data() + ((n * out_c + g * ocg + oc) * out_h + r0) * out_w;
            const S* src = ybuf.data() + oc * ybuf.cols();
            std::copy(src, src + rows * out_w, dst);
          }
        }
      }
    }
  }
  if (bias) {
    for (Index n = 0; n < x.n(); ++n)
      y.sample(n).colwise() += *bias;
  }
  return y;
}

/// Gradients of conv2d. Accumulates into wgrad/bgrad; returns dx.
template <class S>
Tensor4D<S> conv2d_backward(const Tensor4D<S>& dy, const Tensor4D<S>& x,
                            const Tensor4D<S>& weight, Tensor4D<S>& wgrad,
                            VecX<S>* bgrad, Index stride, Index pad,
                            Index groups) {
  const Index k = weight.h();
  const Index out_c = weight.n();
  const Index cg = x.c() / groups;
  const Index ocg = out_c / groups;
  const Index out_h = dy.h();
  const Index out_w = dy.w();
  Tensor4D<S> dx(x.n(), x.c(), x.h(), x.w());

  if (bgrad) {
    for (Index n = 0; n < dy.n(); ++n)
      *bgrad += dy.sample(n).rowwise().sum();
  }

  if (k == 1 && stride == 1 && pad == 0) {
    ConstMatMap<S> wmat(weight.data(), out_c, cg);
    MatMap<S> gmat(wgrad.data(), out_c, cg);
    for (Index n = 0; n < x.n(); ++n) {
      for (Index g = 0; g < groups; ++g) {
        auto xg = x.sample(n).middleRows(g * cg, cg);
        auto dyg = dy.sample(n).middleRows(g * ocg, ocg);
        gmat.middleRows(g * ocg, ocg).noalias() += dyg * xg.transpose();
        dx.sample(n).middleRows(g * cg, cg).noalias() +=
            wmat.middleRows(g * ocg, ocg).transpose() * dyg;
      }
    }
    return dx;
  }

  const Index strip = detail::conv_strip_rows(cg, k, out_w, out_h, sizeof(S));
  MatX<S> cols, dcols, dybuf;
  for (Index n = 0; n < x.n(); ++n) {
    for (Index g = 0; g < groups; ++g) {
      ConstMatMap<S> wg(weight.data() + g * ocg * cg * k * k, ocg, cg * k * k);
      MatMap<S> wgg(wgrad.data() + g * ocg * cg * k * k, ocg, cg * k * k);
      for (Index r0 = 0; r0 < out_h; r0 += strip) {
        const Index rows = std::min(strip, out_h - r0);
        detail::im2col_strip(x, n, g, cg, k, stride, pad, out_w, r0, rows, cols);
        dybuf.resize(ocg, rows * out_w);
        for (Index oc = 0; oc < ocg; ++oc) {
          const S* src = dy.data() + ((n * out_c + g * ocg + oc) * out_h + r0) * out_w;
          std::copy(src, src + rows * out_w, dybuf.data() + oc * dybuf.cols());
        }
        wgg.noalias() += dybuf * cols.transpose();
        dcols.resize(cg * k * k, rows * out_w);
        dcols.noalias() = wg.transpose() * dybuf;
        detail::col2im_strip(dcols, n, g, cg, k, stride, pad, out_w, r0, rows, dx);
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Batch normalization over (n, h, w) per channel. Training uses biased batch
// variance for normalization and updates running stats (unbiased variance,
// momentum blending); evaluation uses the running statistics.
// ---------------------------------------------------------------------------

template <class S>
struct BatchNormCache {
  VecX<S> mean;
  VecX<S> istd;
};

template <class S>
Tensor4D<S> batchnorm_forward_train(const Tensor4D<S>& x, const VecX<S>& gamma,
                                    const VecX<S>& beta, VecX<S>& running_mean,
                                    VecX<S>& running_var, double momentum,
                                    double eps, BatchNormCache<S>& cache) {
  const Index C = x.c();
  const Index hw = x.h() * x.w();
  const double m = static_cast<double>(x.n() * hw);
  cache.mean.resize(C);
  cache.istd.resize(C);
  Tensor4D<S> y(x.n(), x.c(), x.h(), x.w());
  for (Index c = 0; c < C; ++c) {
    double sum = 0.0, sq = 0.0;
    for (Index n = 0; n < x.n(); ++n) {
      const S* p = x.data() + (n * C + c) * hw;
      for (Index i = 0; i < hw; ++i) {
        sum += p[i];
        sq += static_cast<double>(p[i]) * p[i];
      }
    }
    const double mu = sum / m;
    const double var = std::max(0.0, sq / m - mu * mu);
    const double istd = 1.0 / std::sqrt(var + eps);
    cache.mean[c] = static_cast<S>(mu);
    cache.istd[c] = static_cast<S>(istd);
    const double g = gamma[c], b = beta[c];
    for (Index n = 0; n < x.n(); ++n) {
      const S* p = x.data() + (n * C + c) * hw;
      S* q = y.data() + (n * C + c) * hw;
      for (Index i = 0; i < hw; ++i)
        q[i] = static_cast<S>(g * (p[i] - mu) * istd + b);
    }
    const double unbiased = (m > 1.0) ? var * m / (m - 1.0) : var;
    running_mean[c] = static_cast<S>((1.0 - momentum) * running_mean[c] + momentum * mu);
    running_var[c] = static_cast<S>((1.0 - momentum) * running_var[c] + momentum * unbiased);
  }
  return y;
}

template <class S>
Tensor4D<S> batchnorm_forward_eval(const Tensor4D<S>& x, const VecX<S>& gamma,
                                   const VecX<S>& beta,
                                   const VecX<S>& running_mean,
                                   const VecX<S>& running_var, double eps) {
  const Index C = x.c();
  const Index hw = x.h() * x.w();
  Tensor4D<S> y(x.n(), x.c(), x.h(), x.w());
  for (Index c = 0; c < C; ++c) {
    const double istd = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps);
    const double mu = running_mean[c];
    const double g = gamma[c], b = beta[c];
    for (Index n = 0; n < x.n(); ++n) {
      const S* p = x.data() + (n * C + c) * hw;
      S* q = y.data() + (n * C + c) * hw;
      for (Index i = 0; i < hw; ++i)
        q[i] = static_cast<S>(g * (p[i] - mu) * istd + b);
    }
  }
  return y;
}

/// Backward through training-mode BN (gradients flow through the batch
/// statistics). Accumulates dgamma/dbeta; returns dx.
template <class S>
Tensor4D<S> batchnorm_backward(const Tensor4D<S>& dy, const Tensor4D<S>& x,
                               const VecX<S>& gamma,
                               const BatchNormCache<S>& cache, VecX<S>& dgamma,
                               VecX<S>& dbeta) {
  const Index C = x.c();
  const Index hw = x.h() * x.w();
  const double m = static_cast<double>(x.n() * hw);
  Tensor4D<S> dx(x.n(), x.c(), x.h(), x.w());
  for (Index c = 0; c < C; ++c) {
    const double mu = cache.mean[c];
    const double istd = cache.istd[c];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (Index n = 0; n < x.n(); ++n) {
      const S* px = x.data() + (n * C + c) * hw;
      const S* pd = dy.data() + (n * C + c) * hw;
      for (Index i = 0; i < hw; ++i) {
        const double xhat = (px[i] - mu) * istd;
        sum_dy += pd[i];
        sum_dy_xhat += pd[i] * xhat;
      }
    }
    dgamma[c] += static_cast<S>(sum_dy_xhat);
    dbeta[c] += static_cast<S>(sum_dy);
    const double g = gamma[c];
    const double mean_dy = sum_dy / m;
    const double mean_dy_xhat = sum_dy_xhat / m;
    for (Index n = 0; n < x.n(); ++n) {
      const S* px = x.data() + (n * C + c) * hw;
      const S* pd = dy.data() + (n * C + c) * hw;
      S* pq = dx.data() + (n * C + c) * hw;
      for (Index i = 0; i < hw; ++i) {
        const double xhat = (px[i] - mu) * istd;
        pq[i] = static_cast<S>(g * istd * (pd[i] - mean_dy - xhat * mean_dy_xhat));
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Layer normalization over the embedding axis of token tensors.
// ---------------------------------------------------------------------------

template <class S>
struct LayerNormCache {
  VecX<S> mean;  // per token row
  VecX<S> istd;
};

template <class S>
TokenTensor<S> layernorm_forward(const TokenTensor<S>& x, const VecX<S>& gamma,
                                 const VecX<S>& beta, double eps,
                                 LayerNormCache<S>* cache) {
  const Index rows = x.n() * x.l();
  const Index d = x.d();
  require(gamma.size() == d && beta.size() == d, "layernorm: affine size mismatch");
  TokenTensor<S> y(x.n(), x.h(), x.w(), d);
  if (cache) {
    cache->mean.resize(rows);
    cache->istd.resize(rows);
  }
  for (Index r = 0; r < rows; ++r) {
    const S* p = x.data() + r * d;
    S* q = y.data() + r * d;
    double sum = 0.0, sq = 0.0;
    for (Index j = 0; j < d; ++j) {
      sum += p[j];
      sq += static_cast<double>(p[j]) * p[j];
    }
    const double mu = sum / static_cast<double>(d);
    const double var = std::max(0.0, sq / static_cast<double>(d) - mu * mu);
    const double istd = 1.0 / std::sqrt(var + eps);
    if (cache) {
      cache->mean[r] = static_cast<S>(mu);
      cache->istd[r] = static_cast<S>(istd);
    }
    for (Index j = 0; j < d; ++j)
      q[j] = static_cast<S>(gamma[j] * (p[j] - mu) * istd + beta[j]);
  }
  return y;
}

template <class S>
TokenTensor<S> layernorm_backward(const TokenTensor<S>& dy,
                                  const TokenTensor<S>& x, const VecX<S>& gamma,
                                  const LayerNormCache<S>& cache,
                                  VecX<S>& dgamma, VecX<S>& dbeta) {
  const Index rows = x.n() * x.l();
  const Index d = x.d();
  TokenTensor<S> dx(x.n(), x.h(), x.w(), d);
  for (Index r = 0; r < rows; ++r) {
    const S* px = x.data() + r * d;
    const S* pd = dy.data() + r * d;
    S* pq = dx.data() + r * d;
    const double mu = cache.mean[r];
    const double istd = cache.istd[r];
    double sum_dh = 0.0, sum_dh_xhat = 0.0;
    for (Index j = 0; j < d; ++j) {
      const double xhat = (px[j] - mu) * istd;
      const double dh = pd[j] * gamma[j];
      sum_dh += dh;
      sum_dh_xhat += dh * xhat;
      dgamma[j] += static_cast<S>(pd[j] * xhat);
      dbeta[j] += pd[j];
    }
    const double mean_dh = sum_dh / static_cast<double>(d);
    const double mean_dh_xhat = sum_dh_xhat / static_cast<double>(d);
    for (Index j = 0; j < d; ++j) {
      const double xhat = (px[j] - mu) * istd;
      const double dh = pd[j] * gamma[j];
      pq[j] = static_cast<S>(istd * (dh - mean_dh - xhat * mean_dh_xhat));
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Elementwise activations (flat arrays; callers keep whatever shape wrapper).
// ---------------------------------------------------------------------------

template <class S>
void relu_inplace(ArrX<S>& a) {
  a = a.max(S(0));
}

template <class S>
ArrX<S> relu_backward(const ArrX<S>& dy, const ArrX<S>& x_pre) {
  return (x_pre > S(0)).select(dy, ArrX<S>::Zero(dy.size()));
}

template <class S>
S gelu_scalar(S x) {
  return static_cast<S>(0.5 * static_cast<double>(x) *
                        (1.0 + std::erf(static_cast<double>(x) / std::sqrt(2.0))));
}

template <class S>
void gelu_inplace(ArrX<S>& a) {
  for (Index i = 0; i < a.size(); ++i) a[i] = gelu_scalar(a[i]);
}

template <class S>
ArrX<S> gelu_backward(const ArrX<S>& dy, const ArrX<S>& x_pre) {
  ArrX<S> dx(dy.size());
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  for (Index i = 0; i < dy.size(); ++i) {
    const double x = x_pre[i];
    const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
    const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
    dx[i] = static_cast<S>(dy[i] * (cdf + x * pdf));
  }
  return dx;
}

template <class S>
S sigmoid_scalar(S x) {
  const double v = x;
  if (v >= 0.0) {
    const double e = std::exp(-v);
    return static_cast<S>(1.0 / (1.0 + e));
  }
  const double e = std::exp(v);
  return static_cast<S>(e / (1.0 + e));
}

template <class S>
void sigmoid_inplace(ArrX<S>& a) {
  for (Index i = 0; i < a.size(); ++i) a[i] = sigmoid_scalar(a[i]);
}

// ---------------------------------------------------------------------------
// Row-wise softmax on an (rows, cols) matrix view.
// ---------------------------------------------------------------------------

template <class Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& m) {
  using S = typename Derived::Scalar;
  for (Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const S mx = row.maxCoeff();
    double sum = 0.0;
    for (Index j = 0; j < row.size(); ++j) {
      const double e = std::exp(static_cast<double>(row[j] - mx));
      row[j] = static_cast<S>(e);
      sum += e;
    }
    row /= static_cast<S>(sum);
  }
}

/// dS from dY given Y = softmax(S) row-wise: dS = Y .* (dY - rowdot(dY, Y)).
template <class S>
MatX<S> softmax_rows_backward(const MatX<S>& y, const MatX<S>& dy) {
  MatX<S> ds(y.rows(), y.cols());
  for (Index r = 0; r < y.rows(); ++r) {
    const S dot = y.row(r).dot(dy.row(r));
    ds.row(r) = y.row(r).array() * (dy.row(r).array() - dot);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Adaptive average pooling (for the pooled-attention variant).
// Region for output cell i: [floor(i*in/out), ceil((i+1)*in/out)).
// ---------------------------------------------------------------------------

inline std::pair<Index, Index> adaptive_span(Index i, Index in, Index out) {
  const Index lo = (i * in) / out;
  const Index hi = ((i + 1) * in + out - 1) / out;
  return {lo, hi};
}

template <class S>
Tensor4D<S> adaptive_avg_pool(const Tensor4D<S>& x, Index out_h, Index out_w) {
  Tensor4D<S> y(x.n(), x.c(), out_h, out_w);
  for (Index n = 0; n < x.n(); ++n)
    for (Index c = 0; c < x.c(); ++c)
      for (Index i = 0; i < out_h; ++i) {
        const auto [h0, h1] = adaptive_span(i, x.h(), out_h);
        for (Index j = 0; j < out_w; ++j) {
          const auto [w0, w1] = adaptive_span(j, x.w(), out_w);
          double acc = 0.0;
          for (Index a = h0; a < h1; ++a)
            for (Index b = w0; b < w1; ++b) acc += x(n, c, a, b);
          y(n, c, i, j) = static_cast<S>(acc / static_cast<double>((h1 - h0) * (w1 - w0)));
        }
      }
  return y;
}

template <class S>
Tensor4D<S> adaptive_avg_pool_backward(const Tensor4D<S>& dy, Index in_h,
                                       Index in_w) {
  Tensor4D<S> dx(dy.n(), dy.c(), in_h, in_w);
  for (Index n = 0; n < dy.n(); ++n)
    for (Index c = 0; c < dy.c(); ++c)
      for (Index i = 0; i < dy.h(); ++i) {
        const auto [h0, h1] = adaptive_span(i, in_h, dy.h());
        for (Index j = 0; j < dy.w(); ++j) {
          const auto [w0, w1] = adaptive_span(j, in_w, dy.w());
          const S g = static_cast<S>(static_cast<double>(dy(n, c, i, j)) /
                                     static_cast<double>((h1 - h0) * (w1 - w0)));
          for (Index a = h0; a < h1; ++a)
            for (Index b = w0; b < w1; ++b) dx(n, c, a, b) += g;
        }
      }
  return dx;
}

// ---------------------------------------------------------------------------
// Channel concatenation / split.
// ---------------------------------------------------------------------------

template <class S>
Tensor4D<S> concat_channels(const std::vector<const Tensor4D<S>*>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  Index c_total = 0;
  for (const auto* p : parts) {
    require(p->n() == parts[0]->n() && p->h() == parts[0]->h() &&
                p->w() == parts[0]->w(),
            "concat_channels: spatial/batch dims must match");
    c_total += p->c();
  }
  Tensor4D<S> y(parts[0]->n(), c_total, parts[0]->h(), parts[0]->w());
  for (Index n = 0; n < y.n(); ++n) {
    Index off = 0;
    for (const auto* p : parts) {
      y.sample(n).middleRows(off, p->c()) = p->sample(n);
      off += p->c();
    }
  }
  return y;
}

template <class S>
std::vector<Tensor4D<S>> split_channels(const Tensor4D<S>& x,
                                        const std::vector<Index>& sizes) {
  std::vector<Tensor4D<S>> parts;
  Index off = 0;
  for (Index sz : sizes) {
    Tensor4D<S> p(x.n(), sz, x.h(), x.w());
    for (Index n = 0; n < x.n(); ++n)
      p.sample(n) = x.sample(n).middleRows(off, sz);
    off += sz;
    parts.push_back(std::move(p));
  }
  require(off == x.c(), "split_channels: sizes do not sum to channel count");
  return parts;
}

}  // namespace pvt
