#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pvtformer/param.hpp"
#include "pvtformer/rng.hpp"
#include "pvtformer/tensor.hpp"

namespace pvt {

inline constexpr double kGradCheckH = 1e-6;
// Coordinates whose gradient sits below the floor are compared absolutely at
// floor scale (the rel-err denominator is clamped), the usual atol/rtol
// split: difference noise lives at ~1e-9 while a genuinely wrong formula is
// off by the gradient's own magnitude.
inline constexpr double kGradCheckFloor = 1e-5;
inline constexpr double kGradCheckKinkTol = 1e-3;

struct CoordCheck {
  std::string name;
  std::int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckSummary {
  std::vector<CoordCheck> coords;
  double max_rel_err = 0.0;
  std::string worst;
  int skipped_kinks = 0;

  bool pass(double tol) const {
    return !coords.empty() && max_rel_err < tol;
  }
};

// Central-difference check of already-populated analytic gradients against a
// forward-only loss functional. The caller runs its forward+backward first so
// the registry grads hold d(loss)/d(param); loss_fn must re-run the forward
// and return the same scalar loss without touching grads.
//
// Each coordinate is probed at steps h and 2h. When the two estimates
// disagree the loss is not locally smooth there (a ReLU pre-activation
// crosses zero inside the probe interval), finite differences say nothing,
// and the coordinate is re-drawn. A wrong analytic gradient still fails: the
// two probes then agree with each other and jointly disagree with it. The
// accepted value is the Richardson combination, cancelling the O(h^2) term.
template <class S, class LossFn>
GradCheckSummary gradcheck_params(ParamRegistry<S>& reg, LossFn&& loss_fn,
                                  Rng& rng, int n_coords,
                                  double h = kGradCheckH) {
  std::vector<ParamRef<S>*> trainables;
  std::int64_t total = 0;
  for (auto& e : reg.entries())
    if (e.trainable) {
      trainables.push_back(&e);
      total += e.count();
    }
  require(total > 0, "gradcheck: no trainable parameters");

  GradCheckSummary out;
  const int max_attempts = 4 * n_coords;
  for (int attempt = 0;
       attempt < max_attempts && static_cast<int>(out.coords.size()) < n_coords;
       ++attempt) {
    std::int64_t flat = rng.uniform_int(0, total - 1);
    ParamRef<S>* e = nullptr;
    for (auto* t : trainables) {
      if (flat < t->count()) {
        e = t;
        break;
      }
      flat -= t->count();
    }
    S* slot = e->value + flat;
    const S saved = *slot;
    auto central = [&](double step) {
      *slot = saved + static_cast<S>(step);
      const double lp = loss_fn();
      *slot = saved - static_cast<S>(step);
      const double lm = loss_fn();
      *slot = saved;
      return (lp - lm) / (2.0 * step);
    };
    const double d1 = central(h);
    const double d2 = central(2.0 * h);
    const double agree = std::abs(d1 - d2) /
                         std::max({std::abs(d1), std::abs(d2), kGradCheckFloor});
    if (agree > kGradCheckKinkTol) {
      ++out.skipped_kinks;
      continue;
    }

    CoordCheck c;
    c.name = e->name;
    c.index = flat;
    c.analytic = static_cast<double>(e->grad[flat]);
    c.numeric = (4.0 * d1 - d2) / 3.0;
    const double denom = std::max(
        {std::abs(c.analytic), std::abs(c.numeric), kGradCheckFloor});
    c.rel_err = std::abs(c.analytic - c.numeric) / denom;
    if (c.rel_err > out.max_rel_err) {
      out.max_rel_err = c.rel_err;
      out.worst = c.name + "[" + std::to_string(c.index) + "]";
    }
    out.coords.push_back(std::move(c));
  }
  return out;
}

// Finite differences need a generic parameter point: freshly initialized
// nets have zero biases/shifts, which parks whole flat regions of
// activations exactly on ReLU kinks. Jittering every trainable parameter
// moves the check to a point where the loss is locally smooth almost surely.
template <class S>
void perturb_params(ParamRegistry<S>& reg, Rng& rng, double scale) {
  for (auto& e : reg.entries()) {
    if (!e.trainable) continue;
    const std::int64_t c = e.count();
    for (std::int64_t i = 0; i < c; ++i)
      e.value[i] += static_cast<S>(rng.uniform(-scale, scale));
  }
}

// Fixed random projection turning a tensor output into a scalar so every
// output coordinate contributes to the checked gradient.
template <class S>
ArrX<S> make_projection(Index size, Rng& rng) {
  ArrX<S> r(size);
  for (Index i = 0; i < size; ++i) r[i] = static_cast<S>(rng.normal());
  return r;
}

template <class S>
double projection_loss(const ArrX<S>& out, const ArrX<S>& r) {
  require(out.size() == r.size(), "projection_loss: size mismatch");
  double acc = 0.0;
  for (Index i = 0; i < out.size(); ++i)
    acc += static_cast<double>(out[i]) * static_cast<double>(r[i]);
  return acc;
}

}  // namespace pvt
