// pipeline.hpp - part of volsynth: end-to-end command implementations backing
// the CLI and the C API.
#pragma once

#include <string>
#include <vector>

#include "config.hpp"

namespace volsynth::pipeline {

// Writes count phantom pairs (sub-XXX_low.nii / sub-XXX_high.nii) plus a
// dataset manifest into out_dir.
void run_phantom(int count, std::array<int64_t, 3> shape, int lesion_count,
                 uint64_t seed, const std::string& out_dir);

// Loads the config's dataset, augments it, writes the augmented dataset and a
// per-pair transform manifest into the output directory.
void run_augment(const cfg::RunConfig& config);

// Trains per the config's variant; writes checkpoint.ckpt, training_log.csv,
// resolved_config.json and run_manifest.json.
void run_train(const cfg::RunConfig& config);

// plan is "loo" or "kfold:<k>"; writes cv_report.csv (per-fold rows, full
// precision aggregate rows, and a Table-style "mean ± std" row).
void run_crossval(const cfg::RunConfig& config, const std::string& plan);

// Optional input degradation (s > 1) before sliding-window inference.
void run_infer(const std::string& checkpoint_path, const std::string& in_path,
               const std::string& out_path, double downsample_s,
               const cfg::RunConfig& config);

// Evaluates matching subjects of pred_dir against ref_dir; writes the metric
// CSV and one grayscale montage (PGM) per subject next to it.
void run_evaluate(const std::string& pred_dir, const std::string& ref_dir,
                  const std::string& out_csv, int seg_classes, bool ssim_2d);

// Dataset directory helpers (sub-XXX_{low,high}.nii naming).
struct DatasetEntry {
  std::string subject_id;
  std::string low_path;
  std::string high_path;
};
std::vector<DatasetEntry> discover_dataset(const std::string& dir);
std::vector<PairedSample> load_dataset(const std::string& dir,
                                       const cfg::RunConfig& config);

std::string cv_report_csv(const std::vector<metrics::MetricReport>& reports,
                          int seg_classes);

}  // namespace volsynth::pipeline
