// tensor.hpp - part of volsynth: dense N-d arrays for the autodiff engine.
#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "common.hpp"

namespace volsynth {

template <class Real>
struct TensorT {
  std::vector<int64_t> shape;
  std::vector<Real> v;

  TensorT() = default;
  explicit TensorT(std::vector<int64_t> sh, Real fill = Real(0))
      : shape(std::move(sh)) {
    v.assign(static_cast<size_t>(numel_of(shape)), fill);
  }

  static TensorT zeros(std::vector<int64_t> sh) { return TensorT(std::move(sh)); }

  static TensorT scalar(Real value) {
    TensorT t({1, 1});
    t.v[0] = value;
    return t;
  }

  static int64_t numel_of(const std::vector<int64_t>& sh) {
    int64_t n = 1;
    for (const int64_t d : sh) {
      require(d > 0, errc::shape, "tensor dims must be positive");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }
};

using Tensor32 = TensorT<float>;
using Tensor64 = TensorT<double>;

inline std::string shape_str(const std::vector<int64_t>& sh) {
  std::string s = "(";
  for (size_t i = 0; i < sh.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(sh[i]);
  }
  return s + ")";
}

template <class A, class B>
TensorT<B> tensor_cast(const TensorT<A>& t) {
  TensorT<B> out;
  out.shape = t.shape;
  out.v.resize(t.v.size());
  for (size_t i = 0; i < t.v.size(); ++i) out.v[i] = static_cast<B>(t.v[i]);
  return out;
}

}  // namespace volsynth
