// metrics.hpp - part of volsynth: PSNR, 3D SSIM, proxy segmentation,
// multiclass Dice.
#pragma once

#include <string>
#include <vector>

#include "volume.hpp"

namespace volsynth::metrics {

struct PsnrResult {
  double db = 0.0;
  bool infinite = false;  // MSE == 0
};

// 10*log10(R^2/MSE), R = max(ref) - min(ref), MSE over the whole volume.
PsnrResult psnr(const Volume& pred, const Volume& ref);

struct SsimOptions {
  int window = 7;      // cubic window edge
  double sigma = 1.5;  // Gaussian weighting
  bool slice_2d = false;  // mean of per-axial-slice 2D SSIM instead of full 3D
};

// Mean of the local SSIM map over all fully-inside windows; the data range R
// is taken from the reference volume.
double ssim(const Volume& pred, const Volume& ref, const SsimOptions& opt = {});

// Deterministic k-means on intensity: centers start at evenly spaced
// quantiles, at most 50 sweeps, labels ordered by ascending cluster mean.
LabelVolume segment_proxy(const Volume& v, int k);

struct DiceResult {
  std::vector<double> per_class;  // NaN for classes absent from both inputs
  double mean = 0.0;              // over classes present in at least one input
};

DiceResult multiclass_dice(const LabelVolume& a, const LabelVolume& b);

struct MetricReport {
  std::string subject_id;
  int fold = 0;
  std::string condition = "original";
  double ssim = 0.0;
  double psnr_db = 0.0;
  bool psnr_infinite = false;
  std::vector<double> dice_per_class;
  double dice_mean = 0.0;
};

MetricReport evaluate_pair(const Volume& pred, const Volume& ref, int k,
                           const std::string& subject_id,
                           const std::string& condition = "original",
                           int fold = 0, const SsimOptions& ssim_opt = {});

// CSV layout shared by evaluate/crossval reports:
// subject_id,fold,condition,ssim,psnr_db,dice_mean,dice_c0,...
std::string metric_csv_header(int num_classes);
std::string metric_csv_row(const MetricReport& r);

}  // namespace volsynth::metrics
