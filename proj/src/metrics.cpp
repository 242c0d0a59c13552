// metrics.cpp - part of volsynth.
#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace volsynth::metrics {

PsnrResult psnr(const Volume& pred, const Volume& ref) {
  require(pred.shape == ref.shape, errc::shape, "psnr: shape mismatch");
  double mse = 0.0;
  double lo = ref.data[0], hi = ref.data[0];
  for (size_t i = 0; i < ref.data.size(); ++i) {
    const double d = static_cast<double>(ref.data[i]) -
                     static_cast<double>(pred.data[i]);
    mse += d * d;
    lo = std::min(lo, static_cast<double>(ref.data[i]));
    hi = std::max(hi, static_cast<double>(ref.data[i]));
  }
  mse /= static_cast<double>(ref.data.size());
  PsnrResult r;
  if (mse == 0.0) {
    r.infinite = true;
    r.db = std::numeric_limits<double>::infinity();
    return r;
  }
  const double range = hi > lo ? hi - lo : 1.0;
  r.db = 10.0 * std::log10(range * range / mse);
  return r;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> gaussian_taps(int window, double sigma) {
  const int radius = window / 2;
  std::vector<double> t(window);
  for (int i = 0; i < window; ++i) {
    const double d = i - radius;
    t[i] = std::exp(-0.5 * d * d / (sigma * sigma));
  }
  return t;  // normalized jointly with the other axes
}

double ssim_window(const float* pa, const float* pb, const double* w,
                   const int64_t* off, int64_t taps, double c1, double c2) {
  double mx = 0.0, my = 0.0, mxx = 0.0, myy = 0.0, mxy = 0.0;
  for (int64_t i = 0; i < taps; ++i) {
    const double x = pa[off[i]], y = pb[off[i]], ww = w[i];
    mx += ww * x;
    my += ww * y;
    mxx += ww * x * x;
    myy += ww * y * y;
    mxy += ww * x * y;
  }
  const double vx = mxx - mx * mx;
  const double vy = myy - my * my;
  const double cxy = mxy - mx * my;
  return ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
         ((mx * mx + my * my + c1) * (vx + vy + c2));
}

}  // namespace

double ssim(const Volume& pred, const Volume& ref, const SsimOptions& opt) {
  require(pred.shape == ref.shape, errc::shape, "ssim: shape mismatch");
  require(opt.window >= 3 && opt.window % 2 == 1, errc::invalid,
          "ssim: window must be odd and >= 3");
  const int w = opt.window;
  const auto sh = ref.shape;
  const int sp_dims = opt.slice_2d ? 2 : 3;
  for (int a = 0; a < sp_dims; ++a)
    require(sh[a] >= w, errc::shape, "ssim: volume smaller than window");

  double lo = ref.data[0], hi = ref.data[0];
  for (const float f : ref.data) {
    lo = std::min(lo, static_cast<double>(f));
    hi = std::max(hi, static_cast<double>(f));
  }
  const double range = hi > lo ? hi - lo : 1.0;
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);

  const auto g = gaussian_taps(w, opt.sigma);
  std::vector<double> weights;
  std::vector<int64_t> offsets;
  if (opt.slice_2d) {
    // 2D window in the (x,y) plane, applied per axial slice.
    double sum = 0.0;
    for (int i = 0; i < w; ++i)
      for (int j = 0; j < w; ++j) {
        weights.push_back(g[i] * g[j]);
        offsets.push_back((static_cast<int64_t>(i) * sh[1] + j) * sh[2]);
        sum += weights.back();
      }
    for (auto& x : weights) x /= sum;
  } else {
    double sum = 0.0;
    for (int i = 0; i < w; ++i)
      for (int j = 0; j < w; ++j)
        for (int k = 0; k < w; ++k) {
          weights.push_back(g[i] * g[j] * g[k]);
          offsets.push_back((static_cast<int64_t>(i) * sh[1] + j) * sh[2] + k);
          sum += weights.back();
        }
    for (auto& x : weights) x /= sum;
  }
  const int64_t taps = static_cast<int64_t>(weights.size());

  const int64_t vx = sh[0] - w + 1;
  const int64_t vy = sh[1] - w + 1;
  const int64_t vz = opt.slice_2d ? sh[2] : sh[2] - w + 1;

  // Per-x-slab partial sums, reduced in slab order for determinism.
  std::vector<double> slab_sum(static_cast<size_t>(vx), 0.0);
  WorkerPool::instance().run(vx, [&](int64_t x) {
    double acc = 0.0;
    for (int64_t y = 0; y < vy; ++y)
      for (int64_t z = 0; z < vz; ++z) {
        const size_t base = ref.index(x, y, z);
        acc += ssim_window(pred.data.data() + base, ref.data.data() + base,
                           weights.data(), offsets.data(), taps, c1, c2);
      }
    slab_sum[static_cast<size_t>(x)] = acc;
  });
  double total = 0.0;
  for (const double s : slab_sum) total += s;
  return total / (static_cast<double>(vx) * vy * vz);
}

// ---------------------------------------------------------------------------

LabelVolume segment_proxy(const Volume& v, int k) {
  v.validate();
  require(k >= 2, errc::invalid, "segment_proxy: k must be >= 2");
  for (const float f : v.data)
    require(f >= 0.0f && f <= 1.0f, errc::invalid,
            "segment_proxy: intensities must lie in [0,1]");

  std::vector<float> sorted(v.data);
  std::sort(sorted.begin(), sorted.end());
  {
    int64_t distinct = 1;
    for (size_t i = 1; i < sorted.size(); ++i)
      if (sorted[i] != sorted[i - 1]) ++distinct;
    require(distinct >= k, errc::invalid,
            "segment_proxy: fewer distinct intensities than clusters");
  }

  // Evenly spaced quantile init.
  std::vector<double> centers(k);
  const size_t n = sorted.size();
  for (int c = 0; c < k; ++c) {
    const double q = (c + 0.5) / k * static_cast<double>(n - 1);
    const size_t i0 = static_cast<size_t>(q);
    const size_t i1 = std::min(i0 + 1, n - 1);
    const double f = q - static_cast<double>(i0);
    centers[c] = sorted[i0] + (sorted[i1] - sorted[i0]) * f;
  }

  std::vector<uint8_t> assign(n, 0);
  for (int iter = 0; iter < 50; ++iter) {
    bool changed = false;
    for (size_t i = 0; i < n; ++i) {
      const double x = v.data[i];
      int best = 0;
      double bd = std::abs(x - centers[0]);
      for (int c = 1; c < k; ++c) {
        const double d = std::abs(x - centers[c]);
        if (d < bd) {  // ties keep the lower index
          bd = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = static_cast<uint8_t>(best);
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    std::vector<double> sum(k, 0.0);
    std::vector<int64_t> cnt(k, 0);
    for (size_t i = 0; i < n; ++i) {
      sum[assign[i]] += v.data[i];
      cnt[assign[i]] += 1;
    }
    for (int c = 0; c < k; ++c)
      if (cnt[c] > 0) centers[c] = sum[c] / static_cast<double>(cnt[c]);
  }

  // Labels ordered by ascending cluster mean.
  std::vector<int> order(k);
  for (int c = 0; c < k; ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return centers[a] < centers[b]; });
  std::vector<uint8_t> relabel(k);
  for (int rank = 0; rank < k; ++rank)
    relabel[order[rank]] = static_cast<uint8_t>(rank);

  LabelVolume out;
  out.shape = v.shape;
  out.num_classes = k;
  out.labels.resize(n);
  for (size_t i = 0; i < n; ++i) out.labels[i] = relabel[assign[i]];
  return out;
}

DiceResult multiclass_dice(const LabelVolume& a, const LabelVolume& b) {
  require(a.shape == b.shape, errc::shape, "dice: shape mismatch");
  require(a.num_classes == b.num_classes && a.num_classes >= 1, errc::shape,
          "dice: class count mismatch");
  const int k = a.num_classes;
  std::vector<int64_t> na(k, 0), nb(k, 0), ni(k, 0);
  for (size_t i = 0; i < a.labels.size(); ++i) {
    const uint8_t la = a.labels[i], lb = b.labels[i];
    require(la < k && lb < k, errc::invalid, "dice: label out of range");
    na[la] += 1;
    nb[lb] += 1;
    if (la == lb) ni[la] += 1;
  }
  DiceResult r;
  r.per_class.assign(k, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    if (na[c] + nb[c] == 0) continue;  // absent from both: excluded
    r.per_class[c] = 2.0 * static_cast<double>(ni[c]) /
                     static_cast<double>(na[c] + nb[c]);
    sum += r.per_class[c];
    present += 1;
  }
  r.mean = present > 0 ? sum / present : 0.0;
  return r;
}

// ---------------------------------------------------------------------------

MetricReport evaluate_pair(const Volume& pred, const Volume& ref, int k,
                           const std::string& subject_id,
                           const std::string& condition, int fold,
                           const SsimOptions& ssim_opt) {
  require(pred.shape == ref.shape, errc::shape, "evaluate_pair: shape mismatch");
  MetricReport r;
  r.subject_id = subject_id;
  r.condition = condition;
  r.fold = fold;
  const PsnrResult p = psnr(pred, ref);
  r.psnr_db = p.db;
  r.psnr_infinite = p.infinite;
  r.ssim = ssim(pred, ref, ssim_opt);
  // Model output is unconstrained; segmentation runs on [0,1]-clamped copies.
  Volume pc = pred;
  for (auto& f : pc.data) f = std::clamp(f, 0.0f, 1.0f);
  Volume rc = ref;
  for (auto& f : rc.data) f = std::clamp(f, 0.0f, 1.0f);
  const LabelVolume sa = segment_proxy(pc, k);
  const LabelVolume sb = segment_proxy(rc, k);
  const DiceResult d = multiclass_dice(sa, sb);
  r.dice_per_class = d.per_class;
  r.dice_mean = d.mean;
  return r;
}

std::string metric_csv_header(int num_classes) {
  std::string h = "subject_id,fold,condition,ssim,psnr_db,dice_mean";
  for (int c = 0; c < num_classes; ++c) h += ",dice_c" + std::to_string(c);
  return h;
}

std::string metric_csv_row(const MetricReport& r) {
  std::string row = r.subject_id + "," + std::to_string(r.fold) + "," +
                    r.condition + "," + format_double(r.ssim) + ",";
  row += r.psnr_infinite ? "inf" : format_double(r.psnr_db);
  row += "," + format_double(r.dice_mean);
  for (const double d : r.dice_per_class)
    row += "," + (std::isnan(d) ? std::string("nan") : format_double(d));
  return row;
}

}  // namespace volsynth::metrics
