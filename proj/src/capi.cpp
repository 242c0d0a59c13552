// capi.cpp - part of volsynth: extern-C surface over the C++ core.
#include "volsynth.h"

#include <cstring>
#include <string>

#include "config.hpp"
#include "metrics.hpp"
#include "pipeline.hpp"
#include "volume.hpp"

using namespace volsynth;

struct vs_volume {
  Volume v;
};

namespace {

thread_local std::string g_last_error;

vs_status status_from(errc c) {
  switch (c) {
    case errc::io: return VS_ERR_IO;
    case errc::format: return VS_ERR_FORMAT;
    case errc::unsupported: return VS_ERR_UNSUPPORTED;
    case errc::corrupt: return VS_ERR_CORRUPT;
    case errc::invalid: return VS_ERR_INVALID;
    case errc::shape: return VS_ERR_SHAPE;
    case errc::numeric: return VS_ERR_NUMERIC;
    case errc::incompatible: return VS_ERR_INCOMPATIBLE;
    case errc::config: return VS_ERR_CONFIG;
  }
  return VS_ERR_UNKNOWN;
}

template <class Fn>
vs_status guarded(Fn&& fn) {
  try {
    fn();
    return VS_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_from(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return VS_ERR_UNKNOWN;
  } catch (...) {
    g_last_error = "unknown error";
    return VS_ERR_UNKNOWN;
  }
}

vs_status need(bool ok, const char* msg) {
  if (ok) return VS_OK;
  g_last_error = msg;
  return VS_ERR_INVALID;
}

cfg::RunConfig load_config(const char* config_path, const char* out_dir,
                           int64_t seed) {
  cfg::RunConfig c = cfg::RunConfig::from_file(config_path);
  if (out_dir && *out_dir) c.output_dir = out_dir;
  if (seed >= 0) {
    c.seed = static_cast<uint64_t>(seed);
    c.train.seed = c.seed;
    c.augment.seed = c.seed;
    if (c.train.augmentation) c.train.augmentation->seed = c.seed;
  }
  return c;
}

}  // namespace

extern "C" {

const char* vs_status_name(vs_status s) {
  switch (s) {
    case VS_OK: return "ok";
    case VS_ERR_IO: return "io";
    case VS_ERR_FORMAT: return "format";
    case VS_ERR_UNSUPPORTED: return "unsupported";
    case VS_ERR_CORRUPT: return "corrupt";
    case VS_ERR_INVALID: return "invalid";
    case VS_ERR_SHAPE: return "shape";
    case VS_ERR_NUMERIC: return "numeric";
    case VS_ERR_INCOMPATIBLE: return "incompatible";
    case VS_ERR_CONFIG: return "config";
    case VS_ERR_UNKNOWN: return "unknown";
  }
  return "unknown";
}

const char* vs_last_error(void) { return g_last_error.c_str(); }

const char* vs_version(void) { return "1.0.0"; }

vs_status vs_volume_read(const char* path, vs_volume** out) {
  if (vs_status s = need(path && out, "null argument")) return s;
  return guarded([&] {
    auto* h = new vs_volume{read_volume(path)};
    *out = h;
  });
}

vs_status vs_volume_write(const vs_volume* v, const char* path) {
  if (vs_status s = need(v && path, "null argument")) return s;
  return guarded([&] { write_volume(v->v, path); });
}

vs_status vs_volume_create(const int64_t shape[3], const float spacing_mm[3],
                           const float* data, vs_volume** out) {
  if (vs_status s = need(shape && data && out, "null argument")) return s;
  return guarded([&] {
    Volume v;
    v.shape = {shape[0], shape[1], shape[2]};
    if (spacing_mm) v.spacing_mm = {spacing_mm[0], spacing_mm[1], spacing_mm[2]};
    require(shape[0] > 0 && shape[1] > 0 && shape[2] > 0, errc::invalid,
            "volume dims must be positive");
    v.data.assign(data, data + v.numel());
    v.validate();
    *out = new vs_volume{std::move(v)};
  });
}

void vs_volume_free(vs_volume* v) { delete v; }

vs_status vs_volume_shape(const vs_volume* v, int64_t shape[3]) {
  if (vs_status s = need(v && shape, "null argument")) return s;
  for (int a = 0; a < 3; ++a) shape[a] = v->v.shape[a];
  return VS_OK;
}

vs_status vs_volume_spacing(const vs_volume* v, float spacing_mm[3]) {
  if (vs_status s = need(v && spacing_mm, "null argument")) return s;
  for (int a = 0; a < 3; ++a) spacing_mm[a] = v->v.spacing_mm[a];
  return VS_OK;
}

vs_status vs_volume_data(const vs_volume* v, const float** data, int64_t* count) {
  if (vs_status s = need(v && data && count, "null argument")) return s;
  *data = v->v.data.data();
  *count = v->v.numel();
  return VS_OK;
}

vs_status vs_phantom_pair(uint64_t seed, const int64_t shape[3],
                          int lesion_count, vs_volume** low, vs_volume** high) {
  if (vs_status s = need(shape && low && high, "null argument")) return s;
  return guarded([&] {
    PairedSample p =
        make_phantom_pair(seed, {shape[0], shape[1], shape[2]}, lesion_count);
    *low = new vs_volume{std::move(p.low_field)};
    *high = new vs_volume{std::move(p.high_field)};
  });
}

vs_status vs_metric_psnr(const vs_volume* pred, const vs_volume* ref, double* db,
                         int* is_infinite) {
  if (vs_status s = need(pred && ref && db && is_infinite, "null argument"))
    return s;
  return guarded([&] {
    const metrics::PsnrResult r = metrics::psnr(pred->v, ref->v);
    *db = r.db;
    *is_infinite = r.infinite ? 1 : 0;
  });
}

vs_status vs_metric_ssim(const vs_volume* pred, const vs_volume* ref,
                         double* value) {
  if (vs_status s = need(pred && ref && value, "null argument")) return s;
  return guarded([&] { *value = metrics::ssim(pred->v, ref->v); });
}

vs_status vs_metric_dice(const vs_volume* pred, const vs_volume* ref, int k,
                         double* mean) {
  if (vs_status s = need(pred && ref && mean, "null argument")) return s;
  return guarded([&] {
    const LabelVolume a = metrics::segment_proxy(pred->v, k);
    const LabelVolume b = metrics::segment_proxy(ref->v, k);
    *mean = metrics::multiclass_dice(a, b).mean;
  });
}

vs_status vs_run_phantom(int count, const int64_t shape[3], int lesion_count,
                         uint64_t seed, const char* out_dir) {
  if (vs_status s = need(shape && out_dir, "null argument")) return s;
  return guarded([&] {
    pipeline::run_phantom(count, {shape[0], shape[1], shape[2]}, lesion_count,
                          seed, out_dir);
  });
}

vs_status vs_run_augment(const char* config_path, const char* out_dir,
                         int64_t seed) {
  if (vs_status s = need(config_path, "null config path")) return s;
  return guarded(
      [&] { pipeline::run_augment(load_config(config_path, out_dir, seed)); });
}

vs_status vs_run_train(const char* config_path, const char* out_dir,
                       int64_t seed) {
  if (vs_status s = need(config_path, "null config path")) return s;
  return guarded(
      [&] { pipeline::run_train(load_config(config_path, out_dir, seed)); });
}

vs_status vs_run_crossval(const char* config_path, const char* plan,
                          const char* out_dir, int64_t seed) {
  if (vs_status s = need(config_path && plan, "null argument")) return s;
  return guarded([&] {
    pipeline::run_crossval(load_config(config_path, out_dir, seed), plan);
  });
}

vs_status vs_run_infer(const char* config_path, const char* checkpoint,
                       const char* input_nii, const char* output_nii,
                       double downsample_s) {
  if (vs_status s = need(config_path && checkpoint && input_nii && output_nii,
                         "null argument"))
    return s;
  return guarded([&] {
    pipeline::run_infer(checkpoint, input_nii, output_nii, downsample_s,
                        load_config(config_path, nullptr, -1));
  });
}

vs_status vs_run_evaluate(const char* pred_dir, const char* ref_dir,
                          const char* out_csv, int seg_classes,
                          int use_2d_ssim) {
  if (vs_status s = need(pred_dir && ref_dir && out_csv, "null argument"))
    return s;
  return guarded([&] {
    pipeline::run_evaluate(pred_dir, ref_dir, out_csv, seg_classes,
                           use_2d_ssim != 0);
  });
}

}  // extern "C"
