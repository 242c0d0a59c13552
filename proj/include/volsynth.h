/* volsynth.h - C API for the volsynth shared library.
 *
 * The library wraps a C++ core behind opaque handles and status codes. All
 * functions return VS_OK on success; on failure vs_last_error() holds a
 * message for the calling thread. Strings are UTF-8, paths are filesystem
 * paths, and all out-parameters are written only on success.
 */
#ifndef VOLSYNTH_H
#define VOLSYNTH_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define VS_API __declspec(dllexport)
#elif defined(__GNUC__)
#define VS_API __attribute__((visibility("default")))
#else
#define VS_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vs_status {
  VS_OK = 0,
  VS_ERR_IO = 1,           /* file system failure */
  VS_ERR_FORMAT = 2,       /* bad magic / malformed container */
  VS_ERR_UNSUPPORTED = 3,  /* recognized but outside the supported subset */
  VS_ERR_CORRUPT = 4,      /* truncated payload, non-finite data */
  VS_ERR_INVALID = 5,      /* argument or precondition violation */
  VS_ERR_SHAPE = 6,        /* volume/tensor shape mismatch */
  VS_ERR_NUMERIC = 7,      /* optimization diverged (NaN abort) */
  VS_ERR_INCOMPATIBLE = 8, /* checkpoint/architecture mismatch */
  VS_ERR_CONFIG = 9,       /* run-config schema violation */
  VS_ERR_UNKNOWN = 127
} vs_status;

VS_API const char* vs_status_name(vs_status s);

/* Message for the most recent failure on this thread. */
VS_API const char* vs_last_error(void);

VS_API const char* vs_version(void);

/* ------------------------------------------------------------------ */
/* Volumes (opaque)                                                    */

typedef struct vs_volume vs_volume;

VS_API vs_status vs_volume_read(const char* path, vs_volume** out);
VS_API vs_status vs_volume_write(const vs_volume* v, const char* path);
VS_API vs_status vs_volume_create(const int64_t shape[3],
                                  const float spacing_mm[3],
                                  const float* data /* x-major, z fastest */,
                                  vs_volume** out);
VS_API void vs_volume_free(vs_volume* v);

VS_API vs_status vs_volume_shape(const vs_volume* v, int64_t shape[3]);
VS_API vs_status vs_volume_spacing(const vs_volume* v, float spacing_mm[3]);
/* Borrowing pointer, valid until the volume is freed or mutated. */
VS_API vs_status vs_volume_data(const vs_volume* v, const float** data,
                                int64_t* count);

/* Deterministic synthetic pair generation. */
VS_API vs_status vs_phantom_pair(uint64_t seed, const int64_t shape[3],
                                 int lesion_count, vs_volume** low,
                                 vs_volume** high);

/* ------------------------------------------------------------------ */
/* Metrics                                                             */

VS_API vs_status vs_metric_psnr(const vs_volume* pred, const vs_volume* ref,
                                double* db, int* is_infinite);
VS_API vs_status vs_metric_ssim(const vs_volume* pred, const vs_volume* ref,
                                double* value);
/* Proxy segmentation into k intensity classes on both volumes, then
 * multiclass Dice; mean over classes present in at least one volume. */
VS_API vs_status vs_metric_dice(const vs_volume* pred, const vs_volume* ref,
                                int k, double* mean);

/* ------------------------------------------------------------------ */
/* Pipeline commands (file-driven, mirroring the CLI)                  */
/*                                                                     */
/* config_path: run-config JSON. out_dir overrides config.output_dir   */
/* when non-NULL; seed >= 0 overrides config.seed.                     */

VS_API vs_status vs_run_phantom(int count, const int64_t shape[3],
                                int lesion_count, uint64_t seed,
                                const char* out_dir);
VS_API vs_status vs_run_augment(const char* config_path, const char* out_dir,
                                int64_t seed);
VS_API vs_status vs_run_train(const char* config_path, const char* out_dir,
                              int64_t seed);
/* plan: "loo" or "kfold:<k>" */
VS_API vs_status vs_run_crossval(const char* config_path, const char* plan,
                                 const char* out_dir, int64_t seed);
/* downsample_s <= 1 means no degradation. */
VS_API vs_status vs_run_infer(const char* config_path, const char* checkpoint,
                              const char* input_nii, const char* output_nii,
                              double downsample_s);
/* use_2d_ssim != 0: mean of per-axial-slice 2D SSIM instead of full 3D. */
VS_API vs_status vs_run_evaluate(const char* pred_dir, const char* ref_dir,
                                 const char* out_csv, int seg_classes,
                                 int use_2d_ssim);

#ifdef __cplusplus
}
#endif

#endif /* VOLSYNTH_H */
