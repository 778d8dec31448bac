#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pvtformer/param.hpp"
#include "pvtformer/tensor.hpp"

namespace pvt {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over the trainable entries of a registry. Moment
// buffers are kept in the model scalar type so checkpoints round-trip
// exactly.
template <class S>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(ParamRegistry<S>& reg) {
    ensure_state(reg);
    ++t_;
    const S bc1 = static_cast<S>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const S bc2 = static_cast<S>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    const S b1 = static_cast<S>(cfg_.beta1);
    const S b2 = static_cast<S>(cfg_.beta2);
    const S lr = static_cast<S>(cfg_.lr);
    const S eps = static_cast<S>(cfg_.eps);
    std::size_t slot = 0;
    for (auto& e : reg.entries()) {
      if (!e.trainable) continue;
      ArrX<S>& m = m_[slot];
      ArrX<S>& v = v_[slot];
      ++slot;
      const std::int64_t c = e.count();
      for (std::int64_t i = 0; i < c; ++i) {
        const S g = e.grad[i];
        m[i] = b1 * m[i] + (S(1) - b1) * g;
        v[i] = b2 * v[i] + (S(1) - b2) * g * g;
        const S mhat = m[i] / bc1;
        const S vhat = v[i] / bc2;
        e.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  const AdamConfig& config() const { return cfg_; }
  std::int64_t t() const { return t_; }
  void set_t(std::int64_t t) { t_ = t; }

  // Moment buffers, one per trainable registry entry in traversal order.
  // ensure_state must run first when loading from a checkpoint.
  void ensure_state(const ParamRegistry<S>& reg) {
    if (!m_.empty()) return;
    for (const auto& e : reg.entries()) {
      if (!e.trainable) continue;
      m_.emplace_back(ArrX<S>::Zero(e.count()));
      v_.emplace_back(ArrX<S>::Zero(e.count()));
    }
  }

  std::vector<ArrX<S>>& m() { return m_; }
  std::vector<ArrX<S>>& v() { return v_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<ArrX<S>> m_, v_;
};

}  // namespace pvt
