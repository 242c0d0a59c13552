// augment.cpp - part of volsynth.
#include "augment.hpp"

#include <algorithm>
#include <cmath>

namespace volsynth::augment {

void AugmentSpec::validate() const {
  require(rotation_max_deg >= 0.0 && rotation_max_deg <= 90.0, errc::invalid,
          "augment: rotation_max_deg must be in [0, 90]");
  require(gamma_log_range >= 0.0, errc::invalid,
          "augment: gamma_log_range must be >= 0");
  require(downsample_range[0] >= 1.0 && downsample_range[1] <= 8.0 &&
              downsample_range[0] <= downsample_range[1],
          errc::invalid, "augment: downsample_range must lie within [1, 8]");
  require(augmented_per_original >= 0, errc::invalid,
          "augment: augmented_per_original must be >= 0");
  require(elastic.control_spacing_vox >= 2, errc::invalid,
          "augment: elastic control spacing must be >= 2");
  require(elastic.max_displacement_vox >= 0.0, errc::invalid,
          "augment: elastic displacement must be >= 0");
}

PairTransform sample_transform(const AugmentSpec& spec, int64_t draw_index) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, 0xa060000 + static_cast<uint64_t>(draw_index)));
  PairTransform t;
  if (spec.enable_flip && rng.coin()) {
    t.flip = true;
    t.flip_axis = rng.coin() ? 0 : 1;  // sagittal or coronal, uniformly
  }
  if (spec.rotation_max_deg > 0.0) {
    const double deg = rng.uniform(-spec.rotation_max_deg, spec.rotation_max_deg);
    t.angle_rad = deg * 3.14159265358979323846 / 180.0;
    t.axis = rng.unit_vector();
  }
  if (spec.elastic.enabled && spec.elastic.max_displacement_vox > 0.0) {
    t.elastic_on = true;
    t.elastic_spacing = spec.elastic.control_spacing_vox;
    t.elastic_max_disp = spec.elastic.max_displacement_vox;
    t.elastic_seed = rng.next();
  }
  if (spec.gamma_log_range > 0.0)
    t.gamma = std::exp(rng.uniform(-spec.gamma_log_range, spec.gamma_log_range));
  t.downsample_s = rng.uniform(spec.downsample_range[0], spec.downsample_range[1]);
  return t;
}

Volume flip_volume(const Volume& v, int axis) {
  require(axis >= 0 && axis < 3, errc::invalid, "flip: bad axis");
  Volume out = v;
  const auto sh = v.shape;
  for (int64_t x = 0; x < sh[0]; ++x)
    for (int64_t y = 0; y < sh[1]; ++y)
      for (int64_t z = 0; z < sh[2]; ++z) {
        const int64_t sx = axis == 0 ? sh[0] - 1 - x : x;
        const int64_t sy = axis == 1 ? sh[1] - 1 - y : y;
        const int64_t sz = axis == 2 ? sh[2] - 1 - z : z;
        out.at(x, y, z) = v.at(sx, sy, sz);
      }
  return out;
}

namespace {

inline float sample_clamped(const Volume& v, double ux, double uy, double uz) {
  const auto& sh = v.shape;
  ux = std::clamp(ux, 0.0, static_cast<double>(sh[0] - 1));
  uy = std::clamp(uy, 0.0, static_cast<double>(sh[1] - 1));
  uz = std::clamp(uz, 0.0, static_cast<double>(sh[2] - 1));
  const int64_t x0 = static_cast<int64_t>(ux), y0 = static_cast<int64_t>(uy),
                z0 = static_cast<int64_t>(uz);
  const int64_t x1 = std::min(x0 + 1, sh[0] - 1);
  const int64_t y1 = std::min(y0 + 1, sh[1] - 1);
  const int64_t z1 = std::min(z0 + 1, sh[2] - 1);
  const double fx = ux - x0, fy = uy - y0, fz = uz - z0;
  auto lerp = [](double a, double b, double f) { return a + (b - a) * f; };
  const double c00 = lerp(v.at(x0, y0, z0), v.at(x0, y0, z1), fz);
  const double c01 = lerp(v.at(x0, y1, z0), v.at(x0, y1, z1), fz);
  const double c10 = lerp(v.at(x1, y0, z0), v.at(x1, y0, z1), fz);
  const double c11 = lerp(v.at(x1, y1, z0), v.at(x1, y1, z1), fz);
  return static_cast<float>(lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fx));
}

// Rodrigues rotation of vector p about unit axis k.
inline std::array<double, 3> rotate_vec(const std::array<double, 3>& p,
                                        const std::array<double, 3>& k,
                                        double cs, double sn) {
  const double kxp0 = k[1] * p[2] - k[2] * p[1];
  const double kxp1 = k[2] * p[0] - k[0] * p[2];
  const double kxp2 = k[0] * p[1] - k[1] * p[0];
  const double kdp = k[0] * p[0] + k[1] * p[1] + k[2] * p[2];
  return {p[0] * cs + kxp0 * sn + k[0] * kdp * (1.0 - cs),
          p[1] * cs + kxp1 * sn + k[1] * kdp * (1.0 - cs),
          p[2] * cs + kxp2 * sn + k[2] * kdp * (1.0 - cs)};
}

Volume rotate_volume(const Volume& v, const std::array<double, 3>& axis,
                     double angle_rad) {
  if (angle_rad == 0.0) return v;
  Volume out = v;
  const auto sh = v.shape;
  const double cx = (sh[0] - 1) / 2.0, cy = (sh[1] - 1) / 2.0,
               cz = (sh[2] - 1) / 2.0;
  const double sx = v.spacing_mm[0], sy = v.spacing_mm[1], sz = v.spacing_mm[2];
  // Inverse mapping: rotate output coordinates by -angle.
  const double cs = std::cos(-angle_rad), sn = std::sin(-angle_rad);
  for (int64_t x = 0; x < sh[0]; ++x)
    for (int64_t y = 0; y < sh[1]; ++y)
      for (int64_t z = 0; z < sh[2]; ++z) {
        const std::array<double, 3> p{(x - cx) * sx, (y - cy) * sy, (z - cz) * sz};
        const auto q = rotate_vec(p, axis, cs, sn);
        out.at(x, y, z) =
            sample_clamped(v, q[0] / sx + cx, q[1] / sy + cy, q[2] / sz + cz);
      }
  return out;
}

// Dense displacement field: control lattice of uniform-in-ball vectors,
// upsampled with Catmull-Rom cubics per axis.
struct ElasticField {
  std::array<int64_t, 3> grid;
  int spacing;
  std::vector<std::array<double, 3>> ctrl;

  static ElasticField make(std::array<int64_t, 3> shape, int spacing,
                           double max_disp, uint64_t seed) {
    ElasticField f;
    f.spacing = spacing;
    Rng rng(seed);
    for (int a = 0; a < 3; ++a) f.grid[a] = (shape[a] - 1) / spacing + 2;
    f.ctrl.resize(static_cast<size_t>(f.grid[0] * f.grid[1] * f.grid[2]));
    for (auto& c : f.ctrl) {
      const auto dir = rng.unit_vector();
      const double r = max_disp * std::cbrt(rng.uniform01());
      c = {dir[0] * r, dir[1] * r, dir[2] * r};
    }
    return f;
  }

  const std::array<double, 3>& ctrl_at(int64_t i, int64_t j, int64_t k) const {
    i = std::clamp<int64_t>(i, 0, grid[0] - 1);
    j = std::clamp<int64_t>(j, 0, grid[1] - 1);
    k = std::clamp<int64_t>(k, 0, grid[2] - 1);
    return ctrl[static_cast<size_t>((i * grid[1] + j) * grid[2] + k)];
  }

  static void cr_weights(double t, double w[4]) {
    const double t2 = t * t, t3 = t2 * t;
    w[0] = 0.5 * (-t3 + 2.0 * t2 - t);
    w[1] = 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0);
    w[2] = 0.5 * (-3.0 * t3 + 4.0 * t2 + t);
    w[3] = 0.5 * (t3 - t2);
  }

  std::array<double, 3> displacement(int64_t x, int64_t y, int64_t z) const {
    const double gx = static_cast<double>(x) / spacing;
    const double gy = static_cast<double>(y) / spacing;
    const double gz = static_cast<double>(z) / spacing;
    const int64_t bx = static_cast<int64_t>(gx), by = static_cast<int64_t>(gy),
                  bz = static_cast<int64_t>(gz);
    double wx[4], wy[4], wz[4];
    cr_weights(gx - bx, wx);
    cr_weights(gy - by, wy);
    cr_weights(gz - bz, wz);
    std::array<double, 3> d{0.0, 0.0, 0.0};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k) {
          const double w = wx[i] * wy[j] * wz[k];
          const auto& c = ctrl_at(bx - 1 + i, by - 1 + j, bz - 1 + k);
          d[0] += w * c[0];
          d[1] += w * c[1];
          d[2] += w * c[2];
        }
    return d;
  }
};

Volume elastic_warp(const Volume& v, const ElasticField& field) {
  Volume out = v;
  const auto sh = v.shape;
  for (int64_t x = 0; x < sh[0]; ++x)
    for (int64_t y = 0; y < sh[1]; ++y)
      for (int64_t z = 0; z < sh[2]; ++z) {
        const auto d = field.displacement(x, y, z);
        out.at(x, y, z) = sample_clamped(v, x + d[0], y + d[1], z + d[2]);
      }
  return out;
}

Volume apply_geometric_one(const PairTransform& t, const Volume& v) {
  Volume cur = v;
  if (t.flip) cur = flip_volume(cur, t.flip_axis);
  if (t.angle_rad != 0.0) cur = rotate_volume(cur, t.axis, t.angle_rad);
  if (t.elastic_on && t.elastic_max_disp > 0.0) {
    const ElasticField field = ElasticField::make(
        cur.shape, t.elastic_spacing, t.elastic_max_disp, t.elastic_seed);
    cur = elastic_warp(cur, field);
  }
  return cur;
}

}  // namespace

PairedSample apply_geometric(const PairTransform& t, const PairedSample& pair) {
  pair.validate();
  PairedSample out;
  out.subject_id = pair.subject_id;
  out.low_field = apply_geometric_one(t, pair.low_field);
  out.high_field = apply_geometric_one(t, pair.high_field);
  return out;
}

Volume apply_gamma(const Volume& v, double gamma) {
  require(gamma > 0.0, errc::invalid, "apply_gamma: gamma must be positive");
  for (const float f : v.data)
    require(f >= 0.0f && f <= 1.0f, errc::invalid,
            "apply_gamma: intensities must lie in [0,1]");
  if (gamma == 1.0) return v;
  Volume out = v;
  for (auto& f : out.data)
    f = static_cast<float>(std::pow(static_cast<double>(f), gamma));
  return out;
}

Volume apply_degrade(const Volume& v, double s) {
  require(s >= 1.0, errc::invalid, "apply_degrade: s must be >= 1");
  if (s == 1.0) return v;
  std::array<int64_t, 3> down;
  for (int a = 0; a < 3; ++a)
    down[a] = std::max<int64_t>(
        1, static_cast<int64_t>(std::ceil(static_cast<double>(v.shape[a]) / s)));
  Volume low = resample_trilinear(v, down);
  Volume out = resample_trilinear(low, v.shape);
  out.spacing_mm = v.spacing_mm;
  return out;
}

std::vector<PairedSample> augment_dataset(const std::vector<PairedSample>& pairs,
                                          const AugmentSpec& spec) {
  spec.validate();
  std::vector<PairedSample> out = pairs;
  // Interpolation is convex, but double rounding can leave values a few ulp
  // outside [0,1]; snap them back so the [0,1] invariant holds bit-for-bit.
  auto clamp01 = [](Volume& v) {
    for (auto& f : v.data) f = std::clamp(f, 0.0f, 1.0f);
  };
  for (size_t i = 0; i < pairs.size(); ++i)
    for (int j = 0; j < spec.augmented_per_original; ++j) {
      const int64_t draw =
          static_cast<int64_t>(i) * spec.augmented_per_original + j;
      const PairTransform t = sample_transform(spec, draw);
      PairedSample aug = apply_geometric(t, pairs[i]);
      clamp01(aug.low_field);
      clamp01(aug.high_field);
      aug.low_field = apply_degrade(apply_gamma(aug.low_field, t.gamma),
                                    t.downsample_s);
      clamp01(aug.low_field);
      aug.subject_id = pairs[i].subject_id + "_aug" + std::to_string(j + 1);
      out.push_back(std::move(aug));
    }
  return out;
}

}  // namespace volsynth::augment
