#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "pvtformer/tensor.hpp"

namespace pvt {

/// Non-owning handle to one named tensor (plus its gradient buffer, when the
/// tensor is trainable). The registry is the single traversal order used by
/// the optimizer, the checkpoint writer, the parameter counter and the
/// finite-difference harness.
template <class S>
struct ParamRef {
  std::string name;
  std::vector<std::int64_t> shape;
  S* value = nullptr;
  S* grad = nullptr;  // null for non-trainable state (e.g. BN running stats)
  bool trainable = true;

  std::int64_t count() const {
    std::int64_t c = 1;
    for (auto d : shape) c *= d;
    return c;
  }
};

template <class S>
class ParamRegistry {
 public:
  void add(std::string name, std::vector<std::int64_t> shape, S* value,
           S* grad, bool trainable = true) {
    entries_.push_back(
        ParamRef<S>{std::move(name), std::move(shape), value, grad, trainable});
  }

  template <class Derived, class GDerived>
  void add(const std::string& name, std::vector<std::int64_t> shape,
           Eigen::DenseBase<Derived>& value, Eigen::DenseBase<GDerived>& grad,
           bool trainable = true) {
    add(name, std::move(shape), value.derived().data(), grad.derived().data(),
        trainable);
  }

  const std::vector<ParamRef<S>>& entries() const { return entries_; }
  std::vector<ParamRef<S>>& entries() { return entries_; }

  std::int64_t trainable_count() const {
    std::int64_t total = 0;
    for (const auto& e : entries_)
      if (e.trainable) total += e.count();
    return total;
  }

  std::int64_t total_count() const {
    std::int64_t total = 0;
    for (const auto& e : entries_) total += e.count();
    return total;
  }

  void zero_grad() {
    for (auto& e : entries_) {
      if (!e.grad) continue;
      const std::int64_t c = e.count();
      for (std::int64_t i = 0; i < c; ++i) e.grad[i] = S(0);
    }
  }

  const ParamRef<S>* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

 private:
  std::vector<ParamRef<S>> entries_;
};

/// Forward/backward phase. Training caches activations and (for BN) uses
/// batch statistics; evaluation is stateless and uses running statistics.
enum class Phase { train, eval };

}  // namespace pvt
