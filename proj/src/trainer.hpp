// trainer.hpp - part of volsynth: optimization loops, patch sampling,
// cross-validation, checkpointing glue, full-volume inference.
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "augment.hpp"
#include "checkpoint.hpp"
#include "losses.hpp"
#include "metrics.hpp"
#include "models.hpp"
#include "volume.hpp"

namespace volsynth::train {

enum class Variant { vnet, vnet_sseg, vnet_gan, watnet };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& s);

struct TrainConfig {
  Variant variant = Variant::vnet;
  double lr = 0.0;  // 0 -> variant default: 1e-3 for the V-Net family, 1e-4 for WATNet
  int epochs = 300;
  int batch_size = 4;
  std::array<int64_t, 3> patch_shape{32, 32, 32};  // watnet: (x, y, slices=3)
  int patches_per_volume_per_epoch = 8;
  losses::LossWeights loss_weights;
  uint64_t seed = 0;
  std::optional<augment::AugmentSpec> augmentation;
  int critic_steps = 5;
  double clip_c = 0.01;

  models::VNetConfig vnet;
  models::CriticConfig critic;
  models::PerceptualConfig perceptual;
  std::string perceptual_weights_path;  // empty -> seeded-random frozen encoder
  models::WatConfig watnet;

  double resolved_lr() const;
  void validate() const;
  int steps_per_epoch(size_t n_pairs) const;
};

struct LogRow {
  int64_t step = 0;
  int epoch = 0;
  std::string phase;  // "gen" or "critic"
  double total = 0.0;
  std::map<std::string, double> terms;
};

struct TrainLog {
  std::vector<LogRow> rows;
  // Deterministic per-epoch mean of the generator-phase total.
  std::vector<double> epoch_mean_total;
};

struct TrainResult {
  ModelWeights weights;
  std::optional<ModelWeights> critic_weights;  // vnet_gan only
  TrainLog log;
};

// Volumes are visited round-robin (cursor advances across calls) so an epoch
// covers every volume exactly patches_per_volume times; corner positions are
// sampled uniformly within each chosen volume, and the same positions cut
// both pair members. For watnet, 3-slice stacks are cut and the center slice
// is the target.
void sample_training_batch(const std::vector<PairedSample>& pairs,
                           const TrainConfig& cfg, Rng& stream,
                           int64_t& cursor, Tensor32& low, Tensor32& high);

TrainResult train_supervised(const TrainConfig& cfg,
                             const std::vector<PairedSample>& pairs);
TrainResult train_gan(const TrainConfig& cfg,
                      const std::vector<PairedSample>& pairs);

// Sliding-window inference core: overlapping patches (given stride), mean
// blending. fwd maps a (1,1,px,py,pz) tensor to the same shape.
Volume infer_sliding(const std::function<Tensor32(const Tensor32&)>& fwd,
                     const Volume& low, std::array<int64_t, 3> patch,
                     std::array<int64_t, 3> stride);

// Full-volume inference per the config's variant; stride = patch/2.
Volume infer_volume(const ModelWeights& weights, const Volume& low,
                    const TrainConfig& cfg);

struct FoldPlan {
  enum class Kind { leave_one_out, k_fold };
  Kind kind = Kind::leave_one_out;
  int k = 0;
  // (training subject indices, held-out subject indices) per fold
  std::vector<std::pair<std::vector<int>, std::vector<int>>> folds;
};

FoldPlan make_loo_plan(int n_subjects);
// Seeded-random assignment into k folds of near-equal size.
FoldPlan make_kfold_plan(int n_subjects, int k, uint64_t seed);

// Trains per fold (augmenting the training side only when configured),
// infers held-out subjects, evaluates.
std::vector<metrics::MetricReport> cross_validate(
    const FoldPlan& plan, const TrainConfig& cfg,
    const std::vector<PairedSample>& pairs, int seg_classes);

// Same, but evaluates each held-out subject once per degradation factor in
// conditions (1.0 = original inputs) using the fold's model.
std::vector<metrics::MetricReport> cross_validate_with_conditions(
    const FoldPlan& plan, const TrainConfig& cfg,
    const std::vector<PairedSample>& pairs, int seg_classes,
    const std::vector<double>& conditions,
    const metrics::SsimOptions& ssim_opt = {});

// Degrade inputs by s before inference; s = 1 reproduces the original
// condition exactly.
std::vector<metrics::MetricReport> downsample_eval(
    const ModelWeights& weights, const std::vector<PairedSample>& pairs,
    double s, const TrainConfig& cfg, int seg_classes,
    const metrics::SsimOptions& ssim_opt = {});

std::string condition_label(double s);

void write_train_log_csv(const TrainLog& log, const std::string& path);

}  // namespace volsynth::train
