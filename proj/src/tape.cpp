// tape.cpp - part of volsynth: forward/backward kernels.
#include "tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace volsynth::ad {

namespace {

inline int64_t ceil_div(int64_t a, int64_t b) {
  return a > 0 ? (a + b - 1) / b : a / b;
}

// Lifted convolution geometry: always 3 spatial axes, leading axes of size 1
// for the 2D case (memory layout is unchanged by the lift).
struct ConvDims {
  int64_t N = 0, Ci = 0, Co = 0;
  int64_t in[3], k[3], out[3];
  int64_t pad[3], stride[3];
  int nsp = 0;

  int64_t in_sp() const { return in[0] * in[1] * in[2]; }
  int64_t out_sp() const { return out[0] * out[1] * out[2]; }
  int64_t ksz() const { return k[0] * k[1] * k[2]; }

  void out_range(int a, int64_t kk, int64_t& lo, int64_t& hi) const {
    lo = std::max<int64_t>(0, ceil_div(pad[a] - kk, stride[a]));
    hi = std::min(out[a] - 1, (in[a] - 1 - kk + pad[a]) / stride[a]);
  }
};

ConvDims conv_dims(const std::vector<int64_t>& xs, const std::vector<int64_t>& ws,
                   int stride, int pad) {
  require(xs.size() == ws.size() && (xs.size() == 4 || xs.size() == 5),
          errc::shape, "conv: expected rank 4 or 5, x " + shape_str(xs) + " w " +
                           shape_str(ws));
  require(stride >= 1 && pad >= 0, errc::invalid, "conv: bad stride/pad");
  ConvDims d;
  d.nsp = static_cast<int>(xs.size()) - 2;
  d.N = xs[0];
  d.Ci = xs[1];
  d.Co = ws[0];
  require(ws[1] == d.Ci, errc::shape,
          "conv: input has " + std::to_string(d.Ci) + " channels, kernel expects " +
              std::to_string(ws[1]));
  for (int a = 0; a < 3; ++a) {
    d.in[a] = 1;
    d.k[a] = 1;
    d.out[a] = 1;
    d.pad[a] = 0;
    d.stride[a] = 1;
  }
  for (int a = 0; a < d.nsp; ++a) {
    const int t = 3 - d.nsp + a;
    d.in[t] = xs[2 + a];
    d.k[t] = ws[2 + a];
    d.pad[t] = pad;
    d.stride[t] = stride;
    require(d.in[t] + 2 * pad >= d.k[t], errc::shape,
            "conv: kernel larger than padded input");
    d.out[t] = (d.in[t] + 2 * pad - d.k[t]) / stride + 1;
  }
  return d;
}

// Inner line primitives. The restrict qualifiers are what lets the
// vectorizer work: y, x and w always come from distinct tensors.
template <class Real>
inline void axpy_line_strided(Real* __restrict__ y, const Real* __restrict__ x,
                              Real a, int64_t len, int64_t xstride) {
  for (int64_t t = 0; t < len; ++t) y[t] += a * x[t * xstride];
}

template <class Real>
inline Real dot_line_strided(const Real* __restrict__ a,
                             const Real* __restrict__ b, int64_t len,
                             int64_t bstride) {
  Real acc = Real(0);
  for (int64_t t = 0; t < len; ++t) acc += a[t] * b[t * bstride];
  return acc;
}

// 2D stencil over one output line: y[t] += sum_{j1<K1, j2<K2}
// w[j1*K2+j2] * x[j1*row_stride + t + j2]. Compile-time tap counts keep the
// tap loops fully unrolled.
template <class Real, int K1, int K2>
inline void fir2d_line(Real* __restrict__ y, const Real* __restrict__ x,
                       const Real* __restrict__ w, int64_t len,
                       int64_t row_stride) {
  for (int64_t t = 0; t < len; ++t) {
    Real acc = y[t];
    for (int j1 = 0; j1 < K1; ++j1)
      for (int j2 = 0; j2 < K2; ++j2)
        acc += w[j1 * K2 + j2] * x[j1 * row_stride + t + j2];
    y[t] = acc;
  }
}

template <class Real>
inline void fir2d_line_generic(Real* __restrict__ y, const Real* __restrict__ x,
                               const Real* __restrict__ w, int64_t len,
                               int64_t row_stride, int64_t k1, int64_t k2) {
  for (int64_t t = 0; t < len; ++t) {
    Real acc = y[t];
    for (int64_t j1 = 0; j1 < k1; ++j1)
      for (int64_t j2 = 0; j2 < k2; ++j2)
        acc += w[j1 * k2 + j2] * x[j1 * row_stride + t + j2];
    y[t] = acc;
  }
}

template <class Real>
inline void fir2d_dispatch(Real* __restrict__ y, const Real* __restrict__ x,
                           const Real* __restrict__ w, int64_t len,
                           int64_t row_stride, int64_t k1, int64_t k2) {
  if (k1 == 5 && k2 == 5) return fir2d_line<Real, 5, 5>(y, x, w, len, row_stride);
  if (k1 == 3 && k2 == 3) return fir2d_line<Real, 3, 3>(y, x, w, len, row_stride);
  if (k1 == 1 && k2 == 1) return fir2d_line<Real, 1, 1>(y, x, w, len, row_stride);
  if (k1 == 2 && k2 == 2) return fir2d_line<Real, 2, 2>(y, x, w, len, row_stride);
  if (k1 == 1 && k2 == 3) return fir2d_line<Real, 1, 3>(y, x, w, len, row_stride);
  if (k1 == 1 && k2 == 5) return fir2d_line<Real, 1, 5>(y, x, w, len, row_stride);
  fir2d_line_generic(y, x, w, len, row_stride, k1, k2);
}

// K2 simultaneous tap dots for the weight gradient:
// out[j] += sum_t gy[t] * x[t + j].
template <class Real, int K2>
inline void dot_taps(const Real* __restrict__ gy, const Real* __restrict__ x,
                     Real* __restrict__ out, int64_t len) {
  Real acc[K2] = {};
  for (int64_t t = 0; t < len; ++t)
    for (int j = 0; j < K2; ++j) acc[j] += gy[t] * x[t + j];
  for (int j = 0; j < K2; ++j) out[j] += acc[j];
}

template <class Real>
inline void dot_taps_dispatch(const Real* __restrict__ gy,
                              const Real* __restrict__ x,
                              Real* __restrict__ out, int64_t len, int64_t k2) {
  switch (k2) {
    case 1: return dot_taps<Real, 1>(gy, x, out, len);
    case 2: return dot_taps<Real, 2>(gy, x, out, len);
    case 3: return dot_taps<Real, 3>(gy, x, out, len);
    case 5: return dot_taps<Real, 5>(gy, x, out, len);
    default:
      for (int64_t j = 0; j < k2; ++j) {
        Real acc = Real(0);
        for (int64_t t = 0; t < len; ++t) acc += gy[t] * x[t + j];
        out[j] += acc;
      }
  }
}

// Zero-padded copy of all (N*C) spatial blocks; removes every boundary
// branch from the stride-1 kernels. Buffers are recycled per thread: border
// zeros survive across calls of the same geometry because only the interior
// is rewritten, so the (large) zero-fill happens once per layer shape.
template <class Real>
const Real* pad_blocks(int slot, const Real* x, int64_t nblocks,
                       const int64_t in[3], const int64_t pad[3],
                       int64_t padded[3]) {
  for (int a = 0; a < 3; ++a) padded[a] = in[a] + 2 * pad[a];
  const int64_t in_sp = in[0] * in[1] * in[2];
  const int64_t pad_sp = padded[0] * padded[1] * padded[2];

  struct Entry {
    std::array<int64_t, 8> key;
    std::vector<Real> buf;
  };
  thread_local std::vector<Entry> cache;
  const std::array<int64_t, 8> key{slot,   nblocks, in[0],  in[1],
                                   in[2],  pad[0],  pad[1], pad[2]};
  Entry* entry = nullptr;
  for (auto& e : cache)
    if (e.key == key) entry = &e;
  if (!entry) {
    cache.push_back({key, std::vector<Real>(
                              static_cast<size_t>(nblocks * pad_sp), Real(0))});
    entry = &cache.back();
  }
  Real* out = entry->buf.data();
  const bool no_pad = pad[0] == 0 && pad[1] == 0 && pad[2] == 0;
  WorkerPool::instance().run(nblocks, [&](int64_t blk) {
    const Real* src = x + blk * in_sp;
    Real* dst = out + blk * pad_sp;
    if (no_pad) {
      std::memcpy(dst, src, sizeof(Real) * in_sp);
      return;
    }
    for (int64_t i0 = 0; i0 < in[0]; ++i0)
      for (int64_t i1 = 0; i1 < in[1]; ++i1)
        std::memcpy(dst + ((i0 + pad[0]) * padded[1] + i1 + pad[1]) * padded[2] +
                        pad[2],
                    src + (i0 * in[1] + i1) * in[2], sizeof(Real) * in[2]);
  });
  return out;
}

template <class Real>
void conv_forward_stride1(const ConvDims& d, const Real* x, const Real* w,
                          const Real* b, Real* y) {
  int64_t pin[3];
  const Real* xp = pad_blocks(0, x, d.N * d.Ci, d.in, d.pad, pin);
  const int64_t pad_sp = pin[0] * pin[1] * pin[2];
  const int64_t out_sp = d.out_sp(), ksz = d.ksz();
  WorkerPool::instance().run(d.N * d.Co, [&](int64_t chunk) {
    const int64_t n = chunk / d.Co, co = chunk % d.Co;
    Real* yc = y + (n * d.Co + co) * out_sp;
    std::fill(yc, yc + out_sp, b[co]);
    for (int64_t ci = 0; ci < d.Ci; ++ci) {
      const Real* xc = xp + (n * d.Ci + ci) * pad_sp;
      const Real* wc = w + (co * d.Ci + ci) * ksz;
      for (int64_t k0 = 0; k0 < d.k[0]; ++k0) {
        const Real* wplane = wc + k0 * d.k[1] * d.k[2];
        for (int64_t o0 = 0; o0 < d.out[0]; ++o0) {
          const Real* xplane = xc + (o0 + k0) * pin[1] * pin[2];
          for (int64_t o1 = 0; o1 < d.out[1]; ++o1)
            fir2d_dispatch(yc + (o0 * d.out[1] + o1) * d.out[2],
                           xplane + o1 * pin[2], wplane, d.out[2], pin[2],
                           d.k[1], d.k[2]);
        }
      }
    }
  });
}

template <class Real>
void conv_forward_general(const ConvDims& d, const Real* x, const Real* w,
                          const Real* b, Real* y) {
  const int64_t in_sp = d.in_sp(), out_sp = d.out_sp(), ksz = d.ksz();
  WorkerPool::instance().run(d.N * d.Co, [&](int64_t chunk) {
    const int64_t n = chunk / d.Co, co = chunk % d.Co;
    Real* yc = y + (n * d.Co + co) * out_sp;
    std::fill(yc, yc + out_sp, b[co]);
    for (int64_t ci = 0; ci < d.Ci; ++ci) {
      const Real* xc = x + (n * d.Ci + ci) * in_sp;
      const Real* wc = w + (co * d.Ci + ci) * ksz;
      for (int64_t k0 = 0; k0 < d.k[0]; ++k0)
        for (int64_t k1 = 0; k1 < d.k[1]; ++k1)
          for (int64_t k2 = 0; k2 < d.k[2]; ++k2) {
            const Real wv = wc[(k0 * d.k[1] + k1) * d.k[2] + k2];
            int64_t lo0, hi0, lo1, hi1, lo2, hi2;
            d.out_range(0, k0, lo0, hi0);
            d.out_range(1, k1, lo1, hi1);
            d.out_range(2, k2, lo2, hi2);
            const int64_t len = hi2 - lo2 + 1;
            if (len <= 0) continue;
            for (int64_t o0 = lo0; o0 <= hi0; ++o0) {
              const int64_t i0 = o0 * d.stride[0] - d.pad[0] + k0;
              for (int64_t o1 = lo1; o1 <= hi1; ++o1) {
                const int64_t i1 = o1 * d.stride[1] - d.pad[1] + k1;
                Real* yr = yc + (o0 * d.out[1] + o1) * d.out[2] + lo2;
                const Real* xr = xc + (i0 * d.in[1] + i1) * d.in[2];
                axpy_line_strided(yr, xr + lo2 * d.stride[2] - d.pad[2] + k2,
                                  wv, len, d.stride[2]);
              }
            }
          }
    }
  });
}

template <class Real>
void conv_forward_kernel(const ConvDims& d, const Real* x, const Real* w,
                         const Real* b, Real* y) {
  if (d.stride[0] == 1 && d.stride[1] == 1 && d.stride[2] == 1)
    conv_forward_stride1(d, x, w, b, y);
  else
    conv_forward_general(d, x, w, b, y);
}

// Stride-1 input gradient as a reversed-kernel correlation over a padded
// upstream gradient: gx[i] += sum_j wrev[j] * gyp[i + j].
template <class Real>
void conv_backward_input_stride1(const ConvDims& d, const Real* w,
                                 const Real* gy, Real* gx) {
  int64_t pb[3], pout[3];
  for (int a = 0; a < 3; ++a) pb[a] = d.k[a] - 1 - d.pad[a];
  const Real* gyp = pad_blocks(1, gy, d.N * d.Co, d.out, pb, pout);
  const int64_t pad_sp = pout[0] * pout[1] * pout[2];
  const int64_t in_sp = d.in_sp(), ksz = d.ksz();

  // Reversed kernel copy, indexed [co][ci][j0][j1][j2].
  std::vector<Real> wr(static_cast<size_t>(d.Co * d.Ci * ksz));
  for (int64_t co = 0; co < d.Co; ++co)
    for (int64_t ci = 0; ci < d.Ci; ++ci)
      for (int64_t j0 = 0; j0 < d.k[0]; ++j0)
        for (int64_t j1 = 0; j1 < d.k[1]; ++j1)
          for (int64_t j2 = 0; j2 < d.k[2]; ++j2)
            wr[(co * d.Ci + ci) * ksz + (j0 * d.k[1] + j1) * d.k[2] + j2] =
                w[(co * d.Ci + ci) * ksz +
                  ((d.k[0] - 1 - j0) * d.k[1] + (d.k[1] - 1 - j1)) * d.k[2] +
                  (d.k[2] - 1 - j2)];

  WorkerPool::instance().run(d.N * d.Ci, [&](int64_t chunk) {
    const int64_t n = chunk / d.Ci, ci = chunk % d.Ci;
    Real* gxc = gx + (n * d.Ci + ci) * in_sp;
    for (int64_t co = 0; co < d.Co; ++co) {
      const Real* gc = gyp + (n * d.Co + co) * pad_sp;
      const Real* wc = wr.data() + (co * d.Ci + ci) * ksz;
      for (int64_t j0 = 0; j0 < d.k[0]; ++j0) {
        const Real* wplane = wc + j0 * d.k[1] * d.k[2];
        for (int64_t i0 = 0; i0 < d.in[0]; ++i0) {
          const Real* gplane = gc + (i0 + j0) * pout[1] * pout[2];
          for (int64_t i1 = 0; i1 < d.in[1]; ++i1)
            fir2d_dispatch(gxc + (i0 * d.in[1] + i1) * d.in[2],
                           gplane + i1 * pout[2], wplane, d.in[2], pout[2],
                           d.k[1], d.k[2]);
        }
      }
    }
  });
}

template <class Real>
void conv_backward_input_general(const ConvDims& d, const Real* w,
                                 const Real* gy, Real* gx) {
  const int64_t in_sp = d.in_sp(), out_sp = d.out_sp(), ksz = d.ksz();
  WorkerPool::instance().run(d.N * d.Ci, [&](int64_t chunk) {
    const int64_t n = chunk / d.Ci, ci = chunk % d.Ci;
    Real* gxc = gx + (n * d.Ci + ci) * in_sp;
    for (int64_t co = 0; co < d.Co; ++co) {
      const Real* gyc = gy + (n * d.Co + co) * out_sp;
      const Real* wc = w + (co * d.Ci + ci) * ksz;
      for (int64_t k0 = 0; k0 < d.k[0]; ++k0)
        for (int64_t k1 = 0; k1 < d.k[1]; ++k1)
          for (int64_t k2 = 0; k2 < d.k[2]; ++k2) {
            const Real wv = wc[(k0 * d.k[1] + k1) * d.k[2] + k2];
            int64_t lo0, hi0, lo1, hi1, lo2, hi2;
            d.out_range(0, k0, lo0, hi0);
            d.out_range(1, k1, lo1, hi1);
            d.out_range(2, k2, lo2, hi2);
            const int64_t len = hi2 - lo2 + 1;
            if (len <= 0) continue;
            for (int64_t o0 = lo0; o0 <= hi0; ++o0) {
              const int64_t i0 = o0 * d.stride[0] - d.pad[0] + k0;
              for (int64_t o1 = lo1; o1 <= hi1; ++o1) {
                const int64_t i1 = o1 * d.stride[1] - d.pad[1] + k1;
                const Real* gyr = gyc + (o0 * d.out[1] + o1) * d.out[2] + lo2;
                Real* gxr = gxc + (i0 * d.in[1] + i1) * d.in[2];
                for (int64_t t = 0; t < len; ++t)
                  gxr[(lo2 + t) * d.stride[2] - d.pad[2] + k2] += wv * gyr[t];
              }
            }
          }
    }
  });
}

template <class Real>
void conv_backward_input_kernel(const ConvDims& d, const Real* w, const Real* gy,
                                Real* gx) {
  const bool stride1 = d.stride[0] == 1 && d.stride[1] == 1 && d.stride[2] == 1;
  bool pad_ok = true;
  for (int a = 0; a < 3; ++a) pad_ok = pad_ok && d.pad[a] <= d.k[a] - 1;
  if (stride1 && pad_ok)
    conv_backward_input_stride1(d, w, gy, gx);
  else
    conv_backward_input_general(d, w, gy, gx);
}

template <class Real>
void conv_backward_weights_stride1(const ConvDims& d, const Real* x,
                                   const Real* gy, Real* gw, Real* gb) {
  int64_t pin[3];
  const Real* xp = pad_blocks(2, x, d.N * d.Ci, d.in, d.pad, pin);
  const int64_t pad_sp = pin[0] * pin[1] * pin[2];
  const int64_t out_sp = d.out_sp(), ksz = d.ksz();
  WorkerPool::instance().run(d.Co, [&](int64_t co) {
    if (gw) {
      std::vector<Real> taps(static_cast<size_t>(d.k[2]));
      for (int64_t ci = 0; ci < d.Ci; ++ci)
        for (int64_t k0 = 0; k0 < d.k[0]; ++k0)
          for (int64_t k1 = 0; k1 < d.k[1]; ++k1) {
            std::fill(taps.begin(), taps.end(), Real(0));
            for (int64_t n = 0; n < d.N; ++n) {
              const Real* gyc = gy + (n * d.Co + co) * out_sp;
              const Real* xc = xp + (n * d.Ci + ci) * pad_sp;
              for (int64_t o0 = 0; o0 < d.out[0]; ++o0) {
                const Real* xplane = xc + ((o0 + k0) * pin[1] + k1) * pin[2];
                for (int64_t o1 = 0; o1 < d.out[1]; ++o1)
                  dot_taps_dispatch(gyc + (o0 * d.out[1] + o1) * d.out[2],
                                    xplane + o1 * pin[2], taps.data(),
                                    d.out[2], d.k[2]);
              }
            }
            Real* dst =
                gw + (co * d.Ci + ci) * ksz + (k0 * d.k[1] + k1) * d.k[2];
            for (int64_t k2 = 0; k2 < d.k[2]; ++k2) dst[k2] += taps[k2];
          }
    }
    if (gb) {
      Real acc = Real(0);
      for (int64_t n = 0; n < d.N; ++n) {
        const Real* gyc = gy + (n * d.Co + co) * out_sp;
        for (int64_t o = 0; o < out_sp; ++o) acc += gyc[o];
      }
      gb[co] += acc;
    }
  });
}

template <class Real>
void conv_backward_weights_general(const ConvDims& d, const Real* x,
                                   const Real* gy, Real* gw, Real* gb) {
  const int64_t in_sp = d.in_sp(), out_sp = d.out_sp(), ksz = d.ksz();
  WorkerPool::instance().run(d.Co, [&](int64_t co) {
    if (gw)
      for (int64_t ci = 0; ci < d.Ci; ++ci)
        for (int64_t k0 = 0; k0 < d.k[0]; ++k0)
          for (int64_t k1 = 0; k1 < d.k[1]; ++k1)
            for (int64_t k2 = 0; k2 < d.k[2]; ++k2) {
              int64_t lo0, hi0, lo1, hi1, lo2, hi2;
              d.out_range(0, k0, lo0, hi0);
              d.out_range(1, k1, lo1, hi1);
              d.out_range(2, k2, lo2, hi2);
              const int64_t len = hi2 - lo2 + 1;
              Real acc = Real(0);
              if (len > 0) {
                for (int64_t n = 0; n < d.N; ++n) {
                  const Real* gyc = gy + (n * d.Co + co) * out_sp;
                  const Real* xc = x + (n * d.Ci + ci) * in_sp;
                  for (int64_t o0 = lo0; o0 <= hi0; ++o0) {
                    const int64_t i0 = o0 * d.stride[0] - d.pad[0] + k0;
                    for (int64_t o1 = lo1; o1 <= hi1; ++o1) {
                      const int64_t i1 = o1 * d.stride[1] - d.pad[1] + k1;
                      const Real* gyr =
                          gyc + (o0 * d.out[1] + o1) * d.out[2] + lo2;
                      const Real* xr = xc + (i0 * d.in[1] + i1) * d.in[2];
                      acc += dot_line_strided(
                          gyr, xr + lo2 * d.stride[2] - d.pad[2] + k2, len,
                          d.stride[2]);
                    }
                  }
                }
              }
              gw[(co * d.Ci + ci) * ksz + (k0 * d.k[1] + k1) * d.k[2] + k2] +=
                  acc;
            }
    if (gb) {
      Real acc = Real(0);
      for (int64_t n = 0; n < d.N; ++n) {
        const Real* gyc = gy + (n * d.Co + co) * out_sp;
        for (int64_t o = 0; o < out_sp; ++o) acc += gyc[o];
      }
      gb[co] += acc;
    }
  });
}

template <class Real>
void conv_backward_weights_kernel(const ConvDims& d, const Real* x, const Real* gy,
                                  Real* gw, Real* gb) {
  if (d.stride[0] == 1 && d.stride[1] == 1 && d.stride[2] == 1)
    conv_backward_weights_stride1(d, x, gy, gw, gb);
  else
    conv_backward_weights_general(d, x, gy, gw, gb);
}

int64_t spatial_elems(const std::vector<int64_t>& sh) {
  int64_t s = 1;
  for (size_t i = 2; i < sh.size(); ++i) s *= sh[i];
  return s;
}

// Elementwise work split into fixed-size blocks; blocks are disjoint so the
// result does not depend on the worker count.
constexpr int64_t kEwBlock = 1 << 15;

template <class Fn>
void parallel_blocks(int64_t n, const Fn& fn) {
  const int64_t blocks = (n + kEwBlock - 1) / kEwBlock;
  if (blocks <= 1) {
    fn(0, n);
    return;
  }
  WorkerPool::instance().run(blocks, [&](int64_t b) {
    fn(b * kEwBlock, std::min(n, (b + 1) * kEwBlock));
  });
}

}  // namespace

// ---------------------------------------------------------------------------

template <class Real>
Var Tape<Real>::push(Node n) {
  if (n.op != Op::leaf) {
    n.needs_grad = false;
    for (const int32_t id : n.in) n.needs_grad = n.needs_grad || nodes_[id].needs_grad;
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

template <class Real>
void Tape<Real>::ensure_grad(Node& n) {
  if (!n.grad_alloc) {
    n.grad = Tensor::zeros(n.val.shape);
    n.grad_alloc = true;
  }
}

template <class Real>
Var Tape<Real>::leaf(Tensor value, bool requires_grad) {
  require(!value.shape.empty(), errc::shape, "leaf: empty tensor");
  Node n;
  n.op = Op::leaf;
  n.needs_grad = requires_grad;
  n.val = std::move(value);
  return push(std::move(n));
}

template <class Real>
Var Tape<Real>::conv(Var x, Var w, Var b, int stride, int pad) {
  const auto& xt = node(x).val;
  const auto& wt = node(w).val;
  const auto& bt = node(b).val;
  const ConvDims d = conv_dims(xt.shape, wt.shape, stride, pad);
  require(bt.numel() == d.Co, errc::shape, "conv: bias size mismatch");
  std::vector<int64_t> osh{d.N, d.Co};
  for (int a = 3 - d.nsp; a < 3; ++a) osh.push_back(d.out[a]);
  Node n;
  n.op = Op::conv;
  n.in = {x.id, w.id, b.id};
  n.stride = stride;
  n.pad = pad;
  n.val = Tensor::zeros(osh);
  conv_forward_kernel(d, xt.v.data(), wt.v.data(), bt.v.data(), n.val.v.data());
  return push(std::move(n));
}

template <class Real>
Var Tape<Real>::relu(Var x) {
  Node n;
  n.op = Op::relu;
  n.in = {x.id};
  n.val = node(x).val;
  Real* p = n.val.v.data();
  parallel_blocks(n.val.numel(), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) p[i] = p[i] > Real(0) ? p[i] : Real(0);
  });
  return push(std::move(n));
}

template <class Real>
Var Tape<Real>::leaky_relu(Var x, double alpha) {
  Node n;
  n.op = Op::leaky_relu;
  n.in = {x.id};
  n.alpha = alpha;
  n.val = node(x).val;
  const Real a = static_cast<Real>(alpha);
  Real* p = n.val.v.data();
  parallel_blocks(n.val.numel(), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) p[i] = p[i] > Real(0) ? p[i] : a * p[i];
  });
  return push(std::move(n));
}

template <class Real>
Var Tape<Real>::prelu(Var x, Var slopes) {
  const auto& xt = node(x).val;
  const auto& st = node(slopes).val;
  require(xt.rank() >= 2, errc::shape, "prelu: need (N,C,...) input");
  require(st.numel() == xt.shape[1], errc::shape,
          "prelu: one slope per channel required");
  Node n;
  n.op = Op::prelu;
  n.in = {x.id, slopes.id};
  n.val = xt;
  const int64_t C = xt.shape[1];
  const int64_t sp = spatial_elems(xt.shape);
  const int64_t N = xt.shape[0];
  WorkerPool::instance().run(N * C, [&](int64_t i) {
    const Real a = st.v[i % C];
    Real* p = n.val.v.data() + i * sp;
    for (int64_t j = 0; j < sp; ++j) p[j] = p[j] > Real(0) ? p[j] : a * p[j];
  });
  return push(std::move(n));
}

template <class Real>
Var Tape<Real>::upsample_nn(Var x, int factor) {
  require(factor >= 1, errc::invalid, "upsample_nn: factor must be >= 1");
  const auto& xt = node(x).val;
  require(xt.rank() >= 3, errc::shape, "upsample_nn: need spatial dims");
  Node n;
  n.op = Op::upsample_nn;
  n.in = {x.id};
  n.factor = factor;
  std::vector<int64_t> osh = xt.shape;
  for (size_t a = 2; a < osh.size(); ++a) osh[a] *= factor;
  n.val = Tensor::zeros(osh);

  const int nsp = xt.rank() - 2;
  int64_t in[3] = {1, 1, 1}, f[3] = {1, 1, 1};
  for (int a = 0; a < nsp; ++a) {
    in[3 - nsp + a] = xt.shape[2 + a];
    f[3 - nsp + a] = factor;
  }
  const int64_t out1 = in[1] * f[1], out2 = in[2] * f[2];
  const int64_t in_sp = in[0] * in[1] * in[2];
  const int64_t out_sp = in_sp * f[0] * f[1] * f[2];
  const int64_t NC = xt.shape[0] * xt.shape[1];
  for (int64_t nc = 0; nc < NC; ++nc) {
    const Real* src = xt.v.data() + nc * in_sp;
    Real* dst = n.val.v.data() + nc * out_sp;
    for (int64_t i0 = 0; i0 < in[0]; ++i0)
      for (int64_t i1 = 0; i1 < in[1]; ++i1)
        for (int64_t i2 = 0; i2 < in[2]; ++i2) {
          const Real val = src[(i0 * in[1] + i1) * in[2] + i2];
          for (int64_t b0 = 0; b0 < f[0]; ++b0)
            for (int64_t b1 = 0; b1 < f[1]; ++b1) {
              Real* row =
                  dst + ((i0 * f[0] + b0) * out1 + (i1 * f[1] + b1)) * out2 +
                  i2 * f[2];
              for (int64_t b2 = 0; b2 < f[2]; ++b2) row[b2] = val;
            }
        }
  }
  return push(std::move(n));
}

template <class Real>
Var Tape<Real>::add(Var a, Var b) {
  const auto& at = node(a).val;
  const auto& bt = node(b).val;
  require(at.same_shape(bt), errc::shape,
          "add: shape mismatch " + shape_str(at.shape) + " vs " + shape_str(bt.shape));
  Node n;
  n.op = Op::add;
  n.in = {a.id, b.id};
  n.val = at;
  const Real* q = bt.v.data();
  Real* p = n.val.v.data();
  parallel_blocks(n.val.numel(), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) p[i] += q[i];
  });
  return push(std::move(n));
}

template <class Real>
Var Tape<Real>::sub(Var a, Var b) {
  return add(a, scale(b, -1.0));
}

template <class Real>
Var Tape<Real>::concat_channels(const std::vector<Var>& xs) {
  require(!xs.empty(), errc::invalid, "concat: no inputs");
  const auto& first = node(xs[0]).val;
  std::vector<int64_t> osh = first.shape;
  int64_t C = 0;
  for (const Var v : xs) {
    const auto& t = node(v).val;
    require(t.rank() == first.rank() && t.shape[0] == first.shape[0], errc::shape,
            "concat: batch/rank mismatch");
    for (int a = 2; a < t.rank(); ++a)
      require(t.shape[a] == first.shape[a], errc::shape,
              "concat: spatial dims mismatch");
    C += t.shape[1];
  }
  osh[1] = C;
  Node n;
  n.op = Op::concat_c;
  for (const Var v : xs) n.in.push_back(v.id);
  n.val = Tensor::zeros(osh);
  const int64_t N = osh[0];
  const int64_t sp = spatial_elems(osh);
  for (int64_t b = 0; b < N; ++b) {
    int64_t coff = 0;
    for (const Var v : xs) {
      const auto& t = node(v).val;
      const int64_t ci = t.shape[1];
      std::memcpy(n.val.v.data() + (b * C + coff) * sp,
                  t.v.data() + b * ci * sp, sizeof(Real) * ci * sp);
      coff += ci;
    }
  }
  return push(std::move(n));
}

template <class Real>
Var Tape<Real>::broadcast_channels(Var x, int64_t channels) {
  const auto& xt = node(x).val;
  require(xt.rank() >= 3 && xt.shape[1] == 1, errc::shape,
          "broadcast_channels: need a single-channel input");
  require(channels >= 1, errc::invalid, "broadcast_channels: bad channel count");
  Node n;
  n.op = Op::broadcast_c;
  n.in = {x.id};
  std::vector<int64_t> osh = xt.shape;
  osh[1] = channels;
  n.val = Tensor::zeros(osh);
  const int64_t N = osh[0];
  const int64_t sp = spatial_elems(osh);
  for (int64_t b = 0; b < N; ++b)
    for (int64_t c = 0; c < channels; ++c)
      std::memcpy(n.val.v.data() + (b * channels + c) * sp,
                  xt.v.data() + b * sp, sizeof(Real) * sp);
  return push(std::move(n));
}

template <class Real>
Var Tape<Real>::global_sum_pool(Var x) {
  const auto& xt = node(x).val;
  require(xt.rank() >= 3, errc::shape, "global_sum_pool: need (N,C,spatial...)");
  Node n;
  n.op = Op::gsum_pool;
  n.in = {x.id};
  const int64_t N = xt.shape[0], C = xt.shape[1];
  const int64_t sp = spatial_elems(xt.shape);
  n.val = Tensor::zeros({N, C});
  for (int64_t i = 0; i < N * C; ++i)
    n.val.v[i] = static_cast<Real>(strict_sum(xt.v.data() + i * sp, sp));
  return push(std::move(n));
}

template <class Real>
Var Tape<Real>::linear(Var x, Var w, Var b) {
  const auto& xt = node(x).val;
  const auto& wt = node(w).val;
  const auto& bt = node(b).val;
  require(xt.rank() == 2 && wt.rank() == 2, errc::shape, "linear: need 2-d x and w");
  require(xt.shape[1] == wt.shape[1], errc::shape,
          "linear: inner dims disagree: x " + shape_str(xt.shape) + " w " +
              shape_str(wt.shape));
  const int64_t N = xt.shape[0], K = xt.shape[1], M = wt.shape[0];
  require(bt.numel() == M, errc::shape, "linear: bias size mismatch");
  Node n;
  n.op = Op::linear;
  n.in = {x.id, w.id, b.id};
  n.val = Tensor::zeros({N, M});
  for (int64_t i = 0; i < N; ++i)
    for (int64_t m = 0; m < M; ++m) {
      Real acc = bt.v[m];
      const Real* xr = xt.v.data() + i * K;
      const Real* wr = wt.v.data() + m * K;
      for (int64_t k = 0; k < K; ++k) acc += xr[k] * wr[k];
      n.val.v[i * M + m] = acc;
    }
  return push(std::move(n));
}

template <class Real>
Var Tape<Real>::mean(Var x) {
  const auto& xt = node(x).val;
  Node n;
  n.op = Op::mean;
  n.in = {x.id};
  const double acc = strict_sum(xt.v.data(), xt.numel());
  n.val = Tensor::scalar(static_cast<Real>(acc / static_cast<double>(xt.numel())));
  return push(std::move(n));
}

template <class Real>
Var Tape<Real>::mean_abs_diff(Var x, Var y) {
  const auto& xt = node(x).val;
  const auto& yt = node(y).val;
  require(xt.same_shape(yt), errc::shape,
          "mean_abs_diff: shape mismatch " + shape_str(xt.shape) + " vs " +
              shape_str(yt.shape));
  Node n;
  n.op = Op::mean_abs_diff;
  n.in = {x.id, y.id};
  const int64_t cnt = xt.numel();
  const double acc = strict_abs_diff_sum(xt.v.data(), yt.v.data(), cnt);
  n.val = Tensor::scalar(static_cast<Real>(acc / static_cast<double>(cnt)));
  return push(std::move(n));
}

template <class Real>
Var Tape<Real>::scale(Var x, double s) {
  Node n;
  n.op = Op::scale;
  n.in = {x.id};
  n.alpha = s;
  n.val = node(x).val;
  const Real rs = static_cast<Real>(s);
  Real* p = n.val.v.data();
  parallel_blocks(n.val.numel(), [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) p[i] *= rs;
  });
  return push(std::move(n));
}

// ---------------------------------------------------------------------------

template <class Real>
void Tape<Real>::backward(Var loss) {
  Node& ln = node(loss);
  require(ln.val.numel() == 1, errc::invalid,
          "backward: loss must be scalar, got " + shape_str(ln.val.shape));
  for (auto& n : nodes_) {
    if (n.grad_alloc) {
      std::fill(n.grad.v.begin(), n.grad.v.end(), Real(0));
    }
  }
  ensure_grad(ln);
  ln.grad.v[0] = Real(1);
  for (int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.grad_alloc || n.op == Op::leaf || !n.needs_grad) continue;
    backward_node(n);
  }
}

template <class Real>
const TensorT<Real>& Tape<Real>::grad(Var v) {
  Node& n = node(v);
  ensure_grad(n);
  return n.grad;
}

template <class Real>
void Tape<Real>::backward_node(Node& n) {
  auto need = [&](int slot) {
    return nodes_[n.in[slot]].needs_grad;
  };
  auto in_grad = [&](int slot) -> Tensor& {
    Node& src = nodes_[n.in[slot]];
    ensure_grad(src);
    return src.grad;
  };
  auto in_val = [&](int slot) -> const Tensor& { return nodes_[n.in[slot]].val; };

  switch (n.op) {
    case Op::leaf:
      break;

    case Op::conv: {
      const ConvDims d = conv_dims(in_val(0).shape, in_val(1).shape, n.stride, n.pad);
      if (need(0))
        conv_backward_input_kernel(d, in_val(1).v.data(), n.grad.v.data(),
                                   in_grad(0).v.data());
      if (need(1) || need(2))
        conv_backward_weights_kernel(
            d, in_val(0).v.data(), n.grad.v.data(),
            need(1) ? in_grad(1).v.data() : nullptr,
            need(2) ? in_grad(2).v.data() : nullptr);
      break;
    }

    case Op::relu: {
      if (!need(0)) break;
      const Tensor& x = in_val(0);
      Tensor& gx = in_grad(0);
      parallel_blocks(x.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i)
          if (x.v[i] > Real(0)) gx.v[i] += n.grad.v[i];
      });
      break;
    }

    case Op::leaky_relu: {
      if (!need(0)) break;
      const Tensor& x = in_val(0);
      Tensor& gx = in_grad(0);
      const Real a = static_cast<Real>(n.alpha);
      parallel_blocks(x.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i)
          gx.v[i] += x.v[i] > Real(0) ? n.grad.v[i] : a * n.grad.v[i];
      });
      break;
    }

    case Op::prelu: {
      const Tensor& x = in_val(0);
      const Tensor& s = in_val(1);
      const int64_t C = x.shape[1];
      const int64_t sp = spatial_elems(x.shape);
      const int64_t NC = x.shape[0] * C;
      if (need(0)) {
        Tensor& gx = in_grad(0);
        WorkerPool::instance().run(NC, [&](int64_t i) {
          const Real a = s.v[i % C];
          const Real* xp = x.v.data() + i * sp;
          const Real* gp = n.grad.v.data() + i * sp;
          Real* dp = gx.v.data() + i * sp;
          for (int64_t j = 0; j < sp; ++j)
            dp[j] += xp[j] > Real(0) ? gp[j] : a * gp[j];
        });
      }
      if (need(1)) {
        Tensor& gs = in_grad(1);
        WorkerPool::instance().run(C, [&](int64_t c) {
          double acc = 0.0;
          for (int64_t b = 0; b < x.shape[0]; ++b) {
            const int64_t off = (b * C + c) * sp;
            const Real* xp = x.v.data() + off;
            const Real* gp = n.grad.v.data() + off;
            for (int64_t j = 0; j < sp; ++j)
              if (!(xp[j] > Real(0)))
                acc += static_cast<double>(gp[j]) * static_cast<double>(xp[j]);
          }
          gs.v[c] += static_cast<Real>(acc);
        });
      }
      break;
    }

    case Op::upsample_nn: {
      if (!need(0)) break;
      const Tensor& x = in_val(0);
      Tensor& gx = in_grad(0);
      const int nsp = x.rank() - 2;
      int64_t in[3] = {1, 1, 1}, f[3] = {1, 1, 1};
      for (int a = 0; a < nsp; ++a) {
        in[3 - nsp + a] = x.shape[2 + a];
        f[3 - nsp + a] = n.factor;
      }
      const int64_t out1 = in[1] * f[1], out2 = in[2] * f[2];
      const int64_t in_sp = in[0] * in[1] * in[2];
      const int64_t out_sp = in_sp * f[0] * f[1] * f[2];
      const int64_t NC = x.shape[0] * x.shape[1];
      for (int64_t nc = 0; nc < NC; ++nc) {
        const Real* gp = n.grad.v.data() + nc * out_sp;
        Real* dp = gx.v.data() + nc * in_sp;
        for (int64_t i0 = 0; i0 < in[0]; ++i0)
          for (int64_t i1 = 0; i1 < in[1]; ++i1)
            for (int64_t i2 = 0; i2 < in[2]; ++i2) {
              Real acc = Real(0);
              for (int64_t b0 = 0; b0 < f[0]; ++b0)
                for (int64_t b1 = 0; b1 < f[1]; ++b1) {
                  const Real* row =
                      gp + ((i0 * f[0] + b0) * out1 + (i1 * f[1] + b1)) * out2 +
                      i2 * f[2];
                  for (int64_t b2 = 0; b2 < f[2]; ++b2) acc += row[b2];
                }
              dp[(i0 * in[1] + i1) * in[2] + i2] += acc;
            }
      }
      break;
    }

    case Op::add: {
      for (int slot = 0; slot < 2; ++slot) {
        if (!need(slot)) continue;
        Tensor& g = in_grad(slot);
        parallel_blocks(g.numel(), [&](int64_t lo, int64_t hi) {
          for (int64_t i = lo; i < hi; ++i) g.v[i] += n.grad.v[i];
        });
      }
      break;
    }

    case Op::concat_c: {
      const int64_t N = n.val.shape[0];
      const int64_t C = n.val.shape[1];
      const int64_t sp = spatial_elems(n.val.shape);
      int64_t coff = 0;
      for (size_t slot = 0; slot < n.in.size(); ++slot) {
        const int64_t ci = in_val(static_cast<int>(slot)).shape[1];
        if (need(static_cast<int>(slot))) {
          Tensor& g = in_grad(static_cast<int>(slot));
          for (int64_t b = 0; b < N; ++b) {
            const Real* src = n.grad.v.data() + (b * C + coff) * sp;
            Real* dst = g.v.data() + b * ci * sp;
            for (int64_t i = 0; i < ci * sp; ++i) dst[i] += src[i];
          }
        }
        coff += ci;
      }
      break;
    }

    case Op::broadcast_c: {
      if (!need(0)) break;
      Tensor& gx = in_grad(0);
      const int64_t N = n.val.shape[0];
      const int64_t C = n.val.shape[1];
      const int64_t sp = spatial_elems(n.val.shape);
      for (int64_t b = 0; b < N; ++b) {
        Real* dst = gx.v.data() + b * sp;
        for (int64_t c = 0; c < C; ++c) {
          const Real* src = n.grad.v.data() + (b * C + c) * sp;
          for (int64_t i = 0; i < sp; ++i) dst[i] += src[i];
        }
      }
      break;
    }

    case Op::gsum_pool: {
      if (!need(0)) break;
      const Tensor& x = in_val(0);
      Tensor& gx = in_grad(0);
      const int64_t sp = spatial_elems(x.shape);
      const int64_t NC = x.shape[0] * x.shape[1];
      for (int64_t i = 0; i < NC; ++i) {
        const Real g = n.grad.v[i];
        Real* dp = gx.v.data() + i * sp;
        for (int64_t j = 0; j < sp; ++j) dp[j] += g;
      }
      break;
    }

    case Op::linear: {
      const Tensor& x = in_val(0);
      const Tensor& w = in_val(1);
      const int64_t N = x.shape[0], K = x.shape[1], M = w.shape[0];
      if (need(0)) {
        Tensor& gx = in_grad(0);
        for (int64_t i = 0; i < N; ++i)
          for (int64_t m = 0; m < M; ++m) {
            const Real g = n.grad.v[i * M + m];
            const Real* wr = w.v.data() + m * K;
            Real* dr = gx.v.data() + i * K;
            for (int64_t k = 0; k < K; ++k) dr[k] += g * wr[k];
          }
      }
      if (need(1)) {
        Tensor& gw = in_grad(1);
        for (int64_t m = 0; m < M; ++m)
          for (int64_t k = 0; k < K; ++k) {
            Real acc = Real(0);
            for (int64_t i = 0; i < N; ++i)
              acc += n.grad.v[i * M + m] * x.v[i * K + k];
            gw.v[m * K + k] += acc;
          }
      }
      if (need(2)) {
        Tensor& gb = in_grad(2);
        for (int64_t m = 0; m < M; ++m) {
          Real acc = Real(0);
          for (int64_t i = 0; i < N; ++i) acc += n.grad.v[i * M + m];
          gb.v[m] += acc;
        }
      }
      break;
    }

    case Op::mean: {
      if (!need(0)) break;
      Tensor& gx = in_grad(0);
      const double g =
          static_cast<double>(n.grad.v[0]) / static_cast<double>(gx.numel());
      const Real gr = static_cast<Real>(g);
      for (int64_t i = 0; i < gx.numel(); ++i) gx.v[i] += gr;
      break;
    }

    case Op::mean_abs_diff: {
      const Tensor& x = in_val(0);
      const Tensor& y = in_val(1);
      const double g =
          static_cast<double>(n.grad.v[0]) / static_cast<double>(x.numel());
      const Real gr = static_cast<Real>(g);
      const bool nx = need(0), ny = need(1);
      Tensor* gx = nx ? &in_grad(0) : nullptr;
      Tensor* gy = ny ? &in_grad(1) : nullptr;
      for (int64_t i = 0; i < x.numel(); ++i) {
        Real s = Real(0);
        if (x.v[i] > y.v[i]) s = Real(1);
        else if (x.v[i] < y.v[i]) s = Real(-1);
        if (nx) gx->v[i] += gr * s;
        if (ny) gy->v[i] -= gr * s;
      }
      break;
    }

    case Op::scale: {
      if (!need(0)) break;
      Tensor& gx = in_grad(0);
      const Real a = static_cast<Real>(n.alpha);
      for (int64_t i = 0; i < gx.numel(); ++i) gx.v[i] += a * n.grad.v[i];
      break;
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace volsynth::ad
