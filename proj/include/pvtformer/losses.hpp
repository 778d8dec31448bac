#pragma once

#include <cmath>
#include <string>

#include "pvtformer/functional.hpp"
#include "pvtformer/tensor.hpp"

namespace pvt {

inline constexpr double kDiceSmooth = 1.0;

struct LossValue {
  double total = 0.0;
  double bce = 0.0;
  double dice = 0.0;
};

template <class S>
void require_same_shape(const Tensor4D<S>& a, const Tensor4D<S>& b,
                        const char* who) {
  require(a.n() == b.n() && a.c() == b.c() && a.h() == b.h() && a.w() == b.w(),
          std::string(who) + ": shape mismatch, " + a.shape_str() + " vs " +
              b.shape_str());
}

// Mean over all elements of log(1+exp(-|z|)) + max(z,0) - z*y. Targets are
// assumed binary.
template <class S>
double bce_loss(const Tensor4D<S>& logits, const Tensor4D<S>& target) {
  require_same_shape(logits, target, "bce_loss");
  require(logits.size() > 0, "bce_loss: empty input");
  double acc = 0.0;
  for (Index i = 0; i < logits.size(); ++i) {
    const double z = static_cast<double>(logits.data()[i]);
    const double y = static_cast<double>(target.data()[i]);
    acc += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - z * y;
  }
  return acc / static_cast<double>(logits.size());
}

// Per-sample soft Dice 1 - (2*sum(p*y)+smooth)/(sum(p)+sum(y)+smooth),
// averaged over the batch.
template <class S>
double soft_dice_loss(const Tensor4D<S>& probs, const Tensor4D<S>& target,
                      double smooth = kDiceSmooth) {
  require_same_shape(probs, target, "soft_dice_loss");
  require(probs.n() > 0 && probs.size() > 0, "soft_dice_loss: empty input");
  const Index per = probs.c() * probs.h() * probs.w();
  double acc = 0.0;
  for (Index n = 0; n < probs.n(); ++n) {
    const S* p = probs.data() + n * per;
    const S* y = target.data() + n * per;
    double inter = 0.0, psum = 0.0, ysum = 0.0;
    for (Index i = 0; i < per; ++i) {
      inter += static_cast<double>(p[i]) * static_cast<double>(y[i]);
      psum += static_cast<double>(p[i]);
      ysum += static_cast<double>(y[i]);
    }
    acc += 1.0 - (2.0 * inter + smooth) / (psum + ysum + smooth);
  }
  return acc / static_cast<double>(probs.n());
}

template <class S>
LossValue combined_loss(const Tensor4D<S>& logits, const Tensor4D<S>& target) {
  LossValue v;
  v.bce = bce_loss(logits, target);
  Tensor4D<S> probs = logits;
  sigmoid_inplace(probs.flat());
  v.dice = soft_dice_loss(probs, target);
  v.total = v.bce + v.dice;
  return v;
}

// Combined loss plus its analytic gradient w.r.t. the logits.
template <class S>
LossValue combined_loss_grad(const Tensor4D<S>& logits,
                             const Tensor4D<S>& target, Tensor4D<S>& dlogits) {
  require_same_shape(logits, target, "combined_loss_grad");
  require(logits.n() > 0 && logits.size() > 0, "combined_loss_grad: empty input");
  const Index total_count = logits.size();
  const Index per = logits.c() * logits.h() * logits.w();
  const double batch = static_cast<double>(logits.n());
  const double smooth = kDiceSmooth;

  dlogits = Tensor4D<S>(logits.n(), logits.c(), logits.h(), logits.w());
  Tensor4D<S> probs = logits;
  sigmoid_inplace(probs.flat());

  LossValue v;
  v.bce = bce_loss(logits, target);
  double dice_acc = 0.0;
  for (Index n = 0; n < logits.n(); ++n) {
    const S* p = probs.data() + n * per;
    const S* y = target.data() + n * per;
    S* g = dlogits.data() + n * per;
    double inter = 0.0, psum = 0.0, ysum = 0.0;
    for (Index i = 0; i < per; ++i) {
      inter += static_cast<double>(p[i]) * static_cast<double>(y[i]);
      psum += static_cast<double>(p[i]);
      ysum += static_cast<double>(y[i]);
    }
    const double denom = psum + ysum + smooth;
    dice_acc += 1.0 - (2.0 * inter + smooth) / denom;
    for (Index i = 0; i < per; ++i) {
      const double pd = static_cast<double>(p[i]);
      const double yd = static_cast<double>(y[i]);
      const double dbce = (pd - yd) / static_cast<double>(total_count);
      const double ddice = ((2.0 * inter + smooth) - 2.0 * yd * denom) /
                           (denom * denom) / batch;
      g[i] = static_cast<S>(dbce + ddice * pd * (1.0 - pd));
    }
  }
  v.dice = dice_acc / batch;
  v.total = v.bce + v.dice;
  return v;
}

}  // namespace pvt
