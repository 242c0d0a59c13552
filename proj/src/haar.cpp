// haar.cpp - part of volsynth.
#include "haar.hpp"

#include <cmath>

namespace volsynth {

namespace {
const double kInvSqrt2 = 0.70710678118654752440084436210485;

// One separable analysis step: (rows, cols) -> four half-size subbands.
void analyze_once(const std::vector<double>& in, int64_t rows, int64_t cols,
                  std::vector<double>& ll, std::vector<double>& lh,
                  std::vector<double>& hl, std::vector<double>& hh) {
  const int64_t hr = rows / 2, hc = cols / 2;
  std::vector<double> lo(rows * hc), hi(rows * hc);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < hc; ++c) {
      const double a = in[r * cols + 2 * c];
      const double b = in[r * cols + 2 * c + 1];
      lo[r * hc + c] = (a + b) * kInvSqrt2;
      hi[r * hc + c] = (a - b) * kInvSqrt2;
    }
  ll.resize(hr * hc);
  lh.resize(hr * hc);
  hl.resize(hr * hc);
  hh.resize(hr * hc);
  for (int64_t r = 0; r < hr; ++r)
    for (int64_t c = 0; c < hc; ++c) {
      const double la = lo[(2 * r) * hc + c], lb = lo[(2 * r + 1) * hc + c];
      const double ha = hi[(2 * r) * hc + c], hb = hi[(2 * r + 1) * hc + c];
      ll[r * hc + c] = (la + lb) * kInvSqrt2;
      hl[r * hc + c] = (la - lb) * kInvSqrt2;
      lh[r * hc + c] = (ha + hb) * kInvSqrt2;
      hh[r * hc + c] = (ha - hb) * kInvSqrt2;
    }
}

void synthesize_once(const std::vector<double>& ll, const std::vector<double>& lh,
                     const std::vector<double>& hl, const std::vector<double>& hh,
                     int64_t hr, int64_t hc, std::vector<double>& out) {
  const int64_t rows = hr * 2, cols = hc * 2;
  std::vector<double> lo(rows * hc), hi(rows * hc);
  for (int64_t r = 0; r < hr; ++r)
    for (int64_t c = 0; c < hc; ++c) {
      const double l = ll[r * hc + c], v = hl[r * hc + c];
      const double h = lh[r * hc + c], d = hh[r * hc + c];
      lo[(2 * r) * hc + c] = (l + v) * kInvSqrt2;
      lo[(2 * r + 1) * hc + c] = (l - v) * kInvSqrt2;
      hi[(2 * r) * hc + c] = (h + d) * kInvSqrt2;
      hi[(2 * r + 1) * hc + c] = (h - d) * kInvSqrt2;
    }
  out.resize(rows * cols);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < hc; ++c) {
      const double l = lo[r * hc + c], h = hi[r * hc + c];
      out[r * cols + 2 * c] = (l + h) * kInvSqrt2;
      out[r * cols + 2 * c + 1] = (l - h) * kInvSqrt2;
    }
}
}  // namespace

HaarPyramid haar_dwt2d(const std::vector<double>& img, int64_t rows, int64_t cols,
                       int levels) {
  require(levels >= 1, errc::invalid, "haar_dwt2d: levels must be >= 1");
  require(rows > 0 && cols > 0 &&
              static_cast<int64_t>(img.size()) == rows * cols,
          errc::invalid, "haar_dwt2d: bad input dims");
  const int64_t div = int64_t{1} << levels;
  require(rows % div == 0 && cols % div == 0, errc::shape,
          "haar_dwt2d: dims must be divisible by 2^levels");

  HaarPyramid pyr;
  pyr.input_rows = rows;
  pyr.input_cols = cols;
  std::vector<double> cur = img;
  int64_t r = rows, c = cols;
  for (int lvl = 0; lvl < levels; ++lvl) {
    HaarPyramid::Level out;
    std::vector<double> ll;
    analyze_once(cur, r, c, ll, out.lh, out.hl, out.hh);
    r /= 2;
    c /= 2;
    out.rows = r;
    out.cols = c;
    pyr.levels.push_back(std::move(out));
    cur = std::move(ll);
  }
  pyr.ll = std::move(cur);
  return pyr;
}

std::vector<double> haar_idwt2d(const HaarPyramid& pyr) {
  require(!pyr.levels.empty(), errc::invalid, "haar_idwt2d: empty pyramid");
  std::vector<double> cur = pyr.ll;
  for (int lvl = static_cast<int>(pyr.levels.size()) - 1; lvl >= 0; --lvl) {
    const auto& L = pyr.levels[lvl];
    std::vector<double> next;
    synthesize_once(cur, L.lh, L.hl, L.hh, L.rows, L.cols, next);
    cur = std::move(next);
  }
  return cur;
}

}  // namespace volsynth
