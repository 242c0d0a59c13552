// volume.hpp - part of volsynth: volumetric grid type, NIfTI-subset I/O,
// intensity normalization, resampling, patch extraction/stitching.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"

namespace volsynth {

// 3D scalar grid. data is row-major in (x,y,z): z varies fastest.
// spacing/origin live at file precision (NIfTI pixdim/srow are float32) so
// write/read round trips are bit-exact.
struct Volume {
  std::array<int64_t, 3> shape{0, 0, 0};
  std::array<float, 3> spacing_mm{1.0f, 1.0f, 1.0f};
  std::array<float, 3> origin_mm{0.0f, 0.0f, 0.0f};
  std::vector<float> data;

  Volume() = default;
  Volume(std::array<int64_t, 3> sh, float fill = 0.0f,
         std::array<float, 3> sp = {1.0f, 1.0f, 1.0f})
      : shape(sh), spacing_mm(sp),
        data(static_cast<size_t>(sh[0] * sh[1] * sh[2]), fill) {}

  int64_t numel() const { return shape[0] * shape[1] * shape[2]; }

  size_t index(int64_t x, int64_t y, int64_t z) const {
    return static_cast<size_t>((x * shape[1] + y) * shape[2] + z);
  }
  float& at(int64_t x, int64_t y, int64_t z) { return data[index(x, y, z)]; }
  float at(int64_t x, int64_t y, int64_t z) const { return data[index(x, y, z)]; }

  void validate(const char* what = "volume") const;  // invariants; throws errc::invalid
};

struct LabelVolume {
  std::array<int64_t, 3> shape{0, 0, 0};
  int num_classes = 0;
  std::vector<uint8_t> labels;

  int64_t numel() const { return shape[0] * shape[1] * shape[2]; }
};

struct PairedSample {
  Volume low_field;
  Volume high_field;
  std::string subject_id;

  void validate() const;  // members share one grid
};

// Regular patch grid over a volume; the last position per axis is clamped so
// the final patch ends exactly at the boundary (full coverage, no padding).
struct PatchLayout {
  std::array<int64_t, 3> patch_shape{0, 0, 0};
  std::array<int64_t, 3> stride{0, 0, 0};
  std::array<int64_t, 3> source_shape{0, 0, 0};
  std::vector<std::array<int64_t, 3>> positions;
};

Volume read_volume(const std::string& path);
void write_volume(const Volume& v, const std::string& path);
// int16 payload; exact only for integral intensities within int16 range.
void write_volume_int16(const Volume& v, const std::string& path);

// Percentile clip (nearest values by linear interpolation over order
// statistics) followed by an affine map onto [0,1]. Constant volumes map to
// all zeros.
Volume normalize_intensity(const Volume& v, double clip_lo_pct, double clip_hi_pct);

// Trilinear resampling onto target_shape spanning the same physical extent;
// clamp-to-edge at the borders.
Volume resample_trilinear(const Volume& v, std::array<int64_t, 3> target_shape);

PatchLayout make_patch_layout(std::array<int64_t, 3> source_shape,
                              std::array<int64_t, 3> patch_shape,
                              std::array<int64_t, 3> stride);

std::pair<PatchLayout, std::vector<std::vector<float>>> extract_patches(
    const Volume& v, std::array<int64_t, 3> patch_shape,
    std::array<int64_t, 3> stride);

std::vector<float> extract_patch_at(const Volume& v,
                                    std::array<int64_t, 3> corner,
                                    std::array<int64_t, 3> patch_shape);

// Overlapping voxels receive the arithmetic mean of contributing patches
// (accumulated in double, so k equal contributions reproduce the value
// exactly).
Volume stitch_patches(const PatchLayout& layout,
                      const std::vector<std::vector<float>>& patches,
                      std::array<int64_t, 3> out_shape);

// Deterministic synthetic pair: nested-ellipsoid "brain" with tissue bands
// and optional lesion blobs; the low-field member is blurred,
// contrast-compressed and noised.
PairedSample make_phantom_pair(uint64_t seed, std::array<int64_t, 3> shape,
                               int lesion_count);

Volume gaussian_blur(const Volume& v, double sigma_vox);

}  // namespace volsynth
