// augment.hpp - part of volsynth: paired geometric transforms plus
// low-field-only intensity and resolution degradations.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "volume.hpp"

namespace volsynth::augment {

struct ElasticSpec {
  bool enabled = true;
  int control_spacing_vox = 8;
  double max_displacement_vox = 4.0;
};

struct AugmentSpec {
  bool enable_flip = true;
  double rotation_max_deg = 20.0;
  ElasticSpec elastic;
  double gamma_log_range = 0.3;          // gamma = exp(u), u ~ U(-r, r)
  std::array<double, 2> downsample_range{1.0, 5.0};
  int augmented_per_original = 2;
  uint64_t seed = 0;

  void validate() const;
};

// One sampled transform instance. Geometric components apply to both pair
// members; gamma and downsampling apply to the low-field member only.
struct PairTransform {
  bool flip = false;
  int flip_axis = 0;  // 0 = sagittal (x), 1 = coronal (y)
  double angle_rad = 0.0;
  std::array<double, 3> axis{0.0, 0.0, 1.0};
  bool elastic_on = false;
  int elastic_spacing = 8;
  double elastic_max_disp = 0.0;
  uint64_t elastic_seed = 0;  // field is materialized lazily per volume shape
  double gamma = 1.0;
  double downsample_s = 1.0;
};

// Deterministic function of (spec.seed, draw_index).
PairTransform sample_transform(const AugmentSpec& spec, int64_t draw_index);

Volume flip_volume(const Volume& v, int axis);  // index reversal, bit-exact

// Flip, rotation about the volume center (trilinear, clamp-to-edge) and
// elastic warp with identical parameters for both members.
PairedSample apply_geometric(const PairTransform& t, const PairedSample& pair);

// Per-voxel v^gamma; intensities must lie in [0,1].
Volume apply_gamma(const Volume& v, double gamma);

// Trilinear downsample to ceil(shape/s), then back to the original shape.
Volume apply_degrade(const Volume& v, double s);

// originals ++ augmented_per_original new pairs per original, in order.
std::vector<PairedSample> augment_dataset(const std::vector<PairedSample>& pairs,
                                          const AugmentSpec& spec);

}  // namespace volsynth::augment
