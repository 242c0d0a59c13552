// volume.cpp - part of volsynth.
#include "volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace volsynth {

void Volume::validate(const char* what) const {
  for (int a = 0; a < 3; ++a) {
    require(shape[a] > 0, errc::invalid, std::string(what) + ": non-positive shape");
    require(std::isfinite(spacing_mm[a]) && spacing_mm[a] > 0.0, errc::invalid,
            std::string(what) + ": spacing must be positive and finite");
    require(std::isfinite(origin_mm[a]), errc::invalid,
            std::string(what) + ": origin must be finite");
  }
  require(static_cast<int64_t>(data.size()) == numel(), errc::invalid,
          std::string(what) + ": shape does not match element count");
  for (const float f : data)
    require(std::isfinite(f), errc::invalid,
            std::string(what) + ": non-finite intensity");
}

void PairedSample::validate() const {
  low_field.validate("low_field");
  high_field.validate("high_field");
  require(low_field.shape == high_field.shape, errc::invalid,
          "paired sample members must share one grid");
}

// ---------------------------------------------------------------------------

// Nearest-rank percentile: value at rank ceil(p/100 * n). Under this
// definition the clip values of an already-normalized volume are exactly 0
// and 1, which makes normalize_intensity idempotent to the last bit.
static double percentile_sorted(const std::vector<float>& sorted, double pct) {
  const size_t n = sorted.size();
  size_t rank = static_cast<size_t>(std::ceil(pct / 100.0 * static_cast<double>(n)));
  if (rank < 1) rank = 1;
  if (rank > n) rank = n;
  return sorted[rank - 1];
}

Volume normalize_intensity(const Volume& v, double clip_lo_pct, double clip_hi_pct) {
  v.validate();
  require(clip_lo_pct >= 0.0 && clip_lo_pct < clip_hi_pct && clip_hi_pct <= 100.0,
          errc::invalid, "normalize_intensity: need 0 <= lo < hi <= 100");
  std::vector<float> sorted(v.data);
  std::sort(sorted.begin(), sorted.end());
  const double lo = percentile_sorted(sorted, clip_lo_pct);
  const double hi = percentile_sorted(sorted, clip_hi_pct);
  Volume out = v;
  if (!(hi > lo)) {
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    return out;
  }
  const double inv = 1.0 / (hi - lo);
  for (auto& f : out.data) {
    double t = (static_cast<double>(f) - lo) * inv;
    t = std::clamp(t, 0.0, 1.0);
    f = static_cast<float>(t);
  }
  return out;
}

// ---------------------------------------------------------------------------

Volume resample_trilinear(const Volume& v, std::array<int64_t, 3> target_shape) {
  v.validate();
  for (int a = 0; a < 3; ++a)
    require(target_shape[a] >= 1, errc::invalid, "resample: target shape must be >= 1");

  if (target_shape == v.shape) return v;

  Volume out;
  out.shape = target_shape;
  out.origin_mm = v.origin_mm;
  for (int a = 0; a < 3; ++a)
    out.spacing_mm[a] = static_cast<float>(
        static_cast<double>(v.spacing_mm[a]) * static_cast<double>(v.shape[a]) /
        static_cast<double>(target_shape[a]));
  out.data.resize(static_cast<size_t>(out.numel()));

  // Voxel-center alignment: output center i maps to source coordinate
  // (i + 0.5) * (n_src / n_dst) - 0.5, clamped to the edge.
  std::array<double, 3> scale{};
  for (int a = 0; a < 3; ++a)
    scale[a] = static_cast<double>(v.shape[a]) / static_cast<double>(target_shape[a]);

  const int64_t nx = target_shape[0], ny = target_shape[1], nz = target_shape[2];
  const int64_t sx = v.shape[0], sy = v.shape[1], sz = v.shape[2];

  std::vector<int64_t> z0(nz), z1(nz);
  std::vector<double> zf(nz);
  for (int64_t z = 0; z < nz; ++z) {
    double u = (static_cast<double>(z) + 0.5) * scale[2] - 0.5;
    u = std::clamp(u, 0.0, static_cast<double>(sz - 1));
    z0[z] = static_cast<int64_t>(u);
    z1[z] = std::min(z0[z] + 1, sz - 1);
    zf[z] = u - static_cast<double>(z0[z]);
  }

  for (int64_t x = 0; x < nx; ++x) {
    double ux = (static_cast<double>(x) + 0.5) * scale[0] - 0.5;
    ux = std::clamp(ux, 0.0, static_cast<double>(sx - 1));
    const int64_t x0 = static_cast<int64_t>(ux);
    const int64_t x1 = std::min(x0 + 1, sx - 1);
    const double fx = ux - static_cast<double>(x0);
    for (int64_t y = 0; y < ny; ++y) {
      double uy = (static_cast<double>(y) + 0.5) * scale[1] - 0.5;
      uy = std::clamp(uy, 0.0, static_cast<double>(sy - 1));
      const int64_t y0 = static_cast<int64_t>(uy);
      const int64_t y1 = std::min(y0 + 1, sy - 1);
      const double fy = uy - static_cast<double>(y0);
      float* dst = &out.data[out.index(x, y, 0)];
      const float* p00 = &v.data[v.index(x0, y0, 0)];
      const float* p01 = &v.data[v.index(x0, y1, 0)];
      const float* p10 = &v.data[v.index(x1, y0, 0)];
      const float* p11 = &v.data[v.index(x1, y1, 0)];
      for (int64_t z = 0; z < nz; ++z) {
        const int64_t a = z0[z], b = z1[z];
        const double fz = zf[z];
        const double c00 = p00[a] + (p00[b] - p00[a]) * fz;
        const double c01 = p01[a] + (p01[b] - p01[a]) * fz;
        const double c10 = p10[a] + (p10[b] - p10[a]) * fz;
        const double c11 = p11[a] + (p11[b] - p11[a]) * fz;
        const double c0 = c00 + (c01 - c00) * fy;
        const double c1 = c10 + (c11 - c10) * fy;
        dst[z] = static_cast<float>(c0 + (c1 - c0) * fx);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

static std::vector<int64_t> axis_positions(int64_t n, int64_t patch, int64_t stride) {
  std::vector<int64_t> pos;
  for (int64_t p = 0; p + patch <= n; p += stride) pos.push_back(p);
  if (pos.empty() || pos.back() + patch < n) pos.push_back(n - patch);
  return pos;
}

PatchLayout make_patch_layout(std::array<int64_t, 3> source_shape,
                              std::array<int64_t, 3> patch_shape,
                              std::array<int64_t, 3> stride) {
  for (int a = 0; a < 3; ++a) {
    require(patch_shape[a] >= 1 && stride[a] >= 1, errc::invalid,
            "patch layout: patch and stride must be >= 1");
    require(patch_shape[a] <= source_shape[a], errc::shape,
            "patch larger than volume");
  }
  PatchLayout layout;
  layout.patch_shape = patch_shape;
  layout.stride = stride;
  layout.source_shape = source_shape;
  std::array<std::vector<int64_t>, 3> axes;
  for (int a = 0; a < 3; ++a)
    axes[a] = axis_positions(source_shape[a], patch_shape[a], stride[a]);
  for (const int64_t px : axes[0])
    for (const int64_t py : axes[1])
      for (const int64_t pz : axes[2])
        layout.positions.push_back({px, py, pz});
  return layout;
}

std::vector<float> extract_patch_at(const Volume& v,
                                    std::array<int64_t, 3> corner,
                                    std::array<int64_t, 3> patch_shape) {
  std::vector<float> patch(static_cast<size_t>(patch_shape[0] * patch_shape[1] *
                                               patch_shape[2]));
  size_t o = 0;
  for (int64_t x = 0; x < patch_shape[0]; ++x)
    for (int64_t y = 0; y < patch_shape[1]; ++y) {
      const float* src = &v.data[v.index(corner[0] + x, corner[1] + y, corner[2])];
      for (int64_t z = 0; z < patch_shape[2]; ++z) patch[o++] = src[z];
    }
  return patch;
}

std::pair<PatchLayout, std::vector<std::vector<float>>> extract_patches(
    const Volume& v, std::array<int64_t, 3> patch_shape,
    std::array<int64_t, 3> stride) {
  v.validate();
  PatchLayout layout = make_patch_layout(v.shape, patch_shape, stride);
  std::vector<std::vector<float>> patches;
  patches.reserve(layout.positions.size());
  for (const auto& pos : layout.positions)
    patches.push_back(extract_patch_at(v, pos, patch_shape));
  return {std::move(layout), std::move(patches)};
}

Volume stitch_patches(const PatchLayout& layout,
                      const std::vector<std::vector<float>>& patches,
                      std::array<int64_t, 3> out_shape) {
  require(out_shape == layout.source_shape, errc::invalid,
          "stitch: output shape does not match layout");
  require(patches.size() == layout.positions.size(), errc::invalid,
          "stitch: patch count does not match layout");
  const auto& ps = layout.patch_shape;
  const size_t patch_elems = static_cast<size_t>(ps[0] * ps[1] * ps[2]);

  Volume out;
  out.shape = out_shape;
  out.data.assign(static_cast<size_t>(out.numel()), 0.0f);
  std::vector<double> acc(out.data.size(), 0.0);
  std::vector<int32_t> cnt(out.data.size(), 0);

  for (size_t i = 0; i < patches.size(); ++i) {
    require(patches[i].size() == patch_elems, errc::invalid,
            "stitch: patch size does not match layout");
    const auto& c = layout.positions[i];
    size_t o = 0;
    for (int64_t x = 0; x < ps[0]; ++x)
      for (int64_t y = 0; y < ps[1]; ++y) {
        const size_t base = out.index(c[0] + x, c[1] + y, c[2]);
        for (int64_t z = 0; z < ps[2]; ++z, ++o) {
          acc[base + z] += static_cast<double>(patches[i][o]);
          cnt[base + z] += 1;
        }
      }
  }
  for (size_t i = 0; i < acc.size(); ++i) {
    require(cnt[i] > 0, errc::invalid, "stitch: layout does not cover volume");
    out.data[i] = static_cast<float>(acc[i] / static_cast<double>(cnt[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------

Volume gaussian_blur(const Volume& v, double sigma_vox) {
  if (sigma_vox <= 0.0) return v;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_vox)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma_vox * sigma_vox));
    sum += kernel[i + radius];
  }
  for (auto& k : kernel) k /= sum;

  Volume cur = v;
  for (int axis = 0; axis < 3; ++axis) {
    Volume next = cur;
    const auto sh = cur.shape;
    for (int64_t x = 0; x < sh[0]; ++x)
      for (int64_t y = 0; y < sh[1]; ++y)
        for (int64_t z = 0; z < sh[2]; ++z) {
          double a = 0.0;
          for (int i = -radius; i <= radius; ++i) {
            int64_t xx = x, yy = y, zz = z;
            int64_t& t = axis == 0 ? xx : (axis == 1 ? yy : zz);
            t = std::clamp(t + i, int64_t{0}, sh[axis] - 1);
            a += kernel[i + radius] * cur.at(xx, yy, zz);
          }
          next.at(x, y, z) = static_cast<float>(a);
        }
    cur = std::move(next);
  }
  return cur;
}

PairedSample make_phantom_pair(uint64_t seed, std::array<int64_t, 3> shape,
                               int lesion_count) {
  for (int a = 0; a < 3; ++a)
    require(shape[a] >= 16, errc::invalid, "phantom: shape must be >= 16 per axis");
  require(lesion_count >= 0, errc::invalid, "phantom: lesion_count must be >= 0");

  Rng rng(mix_seed(seed, 101));
  Volume high(shape, 0.0f, {0.7f, 0.7f, 0.7f});

  const double cx = (shape[0] - 1) / 2.0, cy = (shape[1] - 1) / 2.0,
               cz = (shape[2] - 1) / 2.0;
  // Semi-axes of the outer "skull" ellipsoid, jittered per seed.
  const double ax = shape[0] * rng.uniform(0.38, 0.44);
  const double ay = shape[1] * rng.uniform(0.40, 0.46);
  const double az = shape[2] * rng.uniform(0.38, 0.44);

  // Tissue bands from outside in: CSF-like, GM-like, WM-like.
  const double band_r[3] = {1.0, 0.80, 0.55};
  const float band_v[3] = {0.30f, 0.55f, 0.85f};

  for (int64_t x = 0; x < shape[0]; ++x)
    for (int64_t y = 0; y < shape[1]; ++y)
      for (int64_t z = 0; z < shape[2]; ++z) {
        const double dx = (x - cx) / ax, dy = (y - cy) / ay, dz = (z - cz) / az;
        const double r = std::sqrt(dx * dx + dy * dy + dz * dz);
        float val = 0.0f;
        for (int b = 0; b < 3; ++b)
          if (r <= band_r[b]) val = band_v[b];
        high.at(x, y, z) = val;
      }

  // Lesion blobs: small bright spheres inside the WM core.
  for (int l = 0; l < lesion_count; ++l) {
    const auto dir = rng.unit_vector();
    const double rad = rng.uniform(0.0, 0.40);
    const double lx = cx + dir[0] * rad * ax;
    const double ly = cy + dir[1] * rad * ay;
    const double lz = cz + dir[2] * rad * az;
    const double lr = rng.uniform(1.5, std::max(2.0, shape[0] / 12.0));
    const int64_t R = static_cast<int64_t>(std::ceil(lr));
    for (int64_t x = std::max<int64_t>(0, (int64_t)lx - R);
         x <= std::min(shape[0] - 1, (int64_t)lx + R); ++x)
      for (int64_t y = std::max<int64_t>(0, (int64_t)ly - R);
           y <= std::min(shape[1] - 1, (int64_t)ly + R); ++y)
        for (int64_t z = std::max<int64_t>(0, (int64_t)lz - R);
             z <= std::min(shape[2] - 1, (int64_t)lz + R); ++z) {
          const double d2 = (x - lx) * (x - lx) + (y - ly) * (y - ly) +
                            (z - lz) * (z - lz);
          if (d2 <= lr * lr) high.at(x, y, z) = 1.0f;
        }
  }

  // Low-field member: blur, compress contrast, add seeded noise.
  Volume low = gaussian_blur(high, 0.9);
  Rng noise(mix_seed(seed, 102));
  for (auto& f : low.data) {
    double t = 0.5 + (static_cast<double>(f) - 0.5) * 0.72;  // contrast compression
    t += 0.01 * noise.normal();
    f = static_cast<float>(std::clamp(t, 0.0, 1.0));
  }

  PairedSample pair;
  pair.high_field = normalize_intensity(high, 0.0, 100.0);
  pair.low_field = normalize_intensity(low, 0.0, 100.0);
  pair.low_field.spacing_mm = pair.high_field.spacing_mm = {0.7f, 0.7f, 0.7f};
  char sid[32];
  std::snprintf(sid, sizeof(sid), "phantom-%llu",
                static_cast<unsigned long long>(seed));
  pair.subject_id = sid;
  pair.validate();
  return pair;
}

}  // namespace volsynth
