// haar.hpp - part of volsynth: multilevel orthonormal 2D Haar transform.
#pragma once

#include <cstdint>
#include <vector>

#include "common.hpp"

namespace volsynth {

// Subband pyramid: detail triples per level (coarsening downwards) plus the
// final approximation band. Level 0 details have shape (h/2, w/2) of the
// input, level 1 half of that, and so on.
struct HaarPyramid {
  struct Level {
    int64_t rows = 0, cols = 0;
    std::vector<double> lh;  // horizontal detail (low rows, high cols)
    std::vector<double> hl;  // vertical detail
    std::vector<double> hh;  // diagonal detail
  };
  int64_t input_rows = 0, input_cols = 0;
  std::vector<Level> levels;
  std::vector<double> ll;  // final approximation, shape of the deepest level
};

// Orthonormal analysis; input dims must be divisible by 2^levels.
HaarPyramid haar_dwt2d(const std::vector<double>& img, int64_t rows, int64_t cols,
                       int levels);

// Exact inverse of haar_dwt2d.
std::vector<double> haar_idwt2d(const HaarPyramid& pyr);

}  // namespace volsynth
