#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace pvt {

using Index = Eigen::Index;

template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class S>
using ArrX = Eigen::Array<S, Eigen::Dynamic, 1>;

// Row-major matrix: flat storage matches the tensors' (row, col) walk order.
template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using MatMap = Eigen::Map<MatX<S>>;

template <class S>
using ConstMatMap = Eigen::Map<const MatX<S>>;

[[noreturn]] inline void fail_invalid(const std::string& what) {
  throw std::invalid_argument(what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) fail_invalid(what);
}

/// Dense (batch, channel, height, width) tensor, row-major flat storage.
template <class S>
class Tensor4D {
 public:
  Tensor4D() = default;

  Tensor4D(Index n, Index c, Index h, Index w) : dims_{n, c, h, w} {
    require(n >= 1 && c >= 1 && h >= 1 && w >= 1,
            "Tensor4D: all dimensions must be >= 1");
    data_.setZero(n * c * h * w);
  }

  static Tensor4D zeros(Index n, Index c, Index h, Index w) {
    return Tensor4D(n, c, h, w);
  }

  Index n() const { return dims_[0]; }
  Index c() const { return dims_[1]; }
  Index h() const { return dims_[2]; }
  Index w() const { return dims_[3]; }
  const std::array<Index, 4>& dims() const { return dims_; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  ArrX<S>& flat() { return data_; }
  const ArrX<S>& flat() const { return data_; }

  S& operator()(Index n, Index c, Index h, Index w) {
    return data_[((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w];
  }
  S operator()(Index n, Index c, Index h, Index w) const {
    return data_[((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w];
  }

  bool same_shape(const Tensor4D& o) const { return dims_ == o.dims_; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(" << dims_[0] << "," << dims_[1] << "," << dims_[2] << ","
       << dims_[3] << ")";
    return os.str();
  }

  // Whole-tensor view with the given factorization of the flat size.
  MatMap<S> view(Index rows, Index cols) {
    require(rows * cols == size(), "Tensor4D::view: size mismatch");
    return MatMap<S>(data(), rows, cols);
  }
  ConstMatMap<S> view(Index rows, Index cols) const {
    require(rows * cols == size(), "Tensor4D::view: size mismatch");
    return ConstMatMap<S>(data(), rows, cols);
  }

  // (c, h*w) view of one sample.
  MatMap<S> sample(Index i) {
    return MatMap<S>(data() + i * dims_[1] * dims_[2] * dims_[3], dims_[1],
                     dims_[2] * dims_[3]);
  }
  ConstMatMap<S> sample(Index i) const {
    return ConstMatMap<S>(data() + i * dims_[1] * dims_[2] * dims_[3],
                          dims_[1], dims_[2] * dims_[3]);
  }

  bool all_finite() const {
    for (Index i = 0; i < data_.size(); ++i)
      if (!std::isfinite(static_cast<double>(data_[i]))) return false;
    return true;
  }

 private:
  std::array<Index, 4> dims_{0, 0, 0, 0};
  ArrX<S> data_;
};

/// Token-domain view (batch, tokens, embed) carrying the (h, w) spatial grid
/// it was flattened from; l == h*w always.
template <class S>
class TokenTensor {
 public:
  TokenTensor() = default;

  TokenTensor(Index n, Index h, Index w, Index d) : n_(n), h_(h), w_(w), d_(d) {
    require(n >= 1 && h >= 1 && w >= 1 && d >= 1,
            "TokenTensor: all dimensions must be >= 1");
    data_.setZero(n * h * w * d);
  }

  Index n() const { return n_; }
  Index l() const { return h_ * w_; }
  Index d() const { return d_; }
  Index h() const { return h_; }
  Index w() const { return w_; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  ArrX<S>& flat() { return data_; }
  const ArrX<S>& flat() const { return data_; }

  S& operator()(Index n, Index t, Index j) {
    return data_[(n * l() + t) * d_ + j];
  }
  S operator()(Index n, Index t, Index j) const {
    return data_[(n * l() + t) * d_ + j];
  }

  bool same_shape(const TokenTensor& o) const {
    return n_ == o.n_ && h_ == o.h_ && w_ == o.w_ && d_ == o.d_;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(" << n_ << "," << l() << "," << d_ << "; hw=" << h_ << "x" << w_
       << ")";
    return os.str();
  }

  // (l, d) view of one sample.
  MatMap<S> sample(Index i) {
    return MatMap<S>(data() + i * l() * d_, l(), d_);
  }
  ConstMatMap<S> sample(Index i) const {
    return ConstMatMap<S>(data() + i * l() * d_, l(), d_);
  }

  // (n*l, d) view across the whole batch.
  MatMap<S> rows() { return MatMap<S>(data(), n_ * l(), d_); }
  ConstMatMap<S> rows() const { return ConstMatMap<S>(data(), n_ * l(), d_); }

  bool all_finite() const {
    for (Index i = 0; i < data_.size(); ++i)
      if (!std::isfinite(static_cast<double>(data_[i]))) return false;
    return true;
  }

 private:
  Index n_ = 0, h_ = 0, w_ = 0, d_ = 0;
  ArrX<S> data_;
};

/// (n,c,h,w) -> (n, h*w, c). Lossless; to_feature_map inverts it bit-exactly.
template <class S>
TokenTensor<S> to_tokens(const Tensor4D<S>& x) {
  TokenTensor<S> out(x.n(), x.h(), x.w(), x.c());
  const Index hw = x.h() * x.w();
  for (Index i = 0; i < x.n(); ++i) {
    // (c, hw) -> transpose -> (hw, c)
    out.sample(i).noalias() = x.sample(i).transpose();
  }
  (void)hw;
  return out;
}

template <class S>
Tensor4D<S> to_feature_map(const TokenTensor<S>& t) {
  Tensor4D<S> out(t.n(), t.d(), t.h(), t.w());
  for (Index i = 0; i < t.n(); ++i) {
    out.sample(i).noalias() = t.sample(i).transpose();
  }
  return out;
}

}  // namespace pvt
