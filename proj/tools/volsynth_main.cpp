// volsynth_main.cpp - command-line front end; links only the C API.
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "volsynth.h"

namespace {

// 0 success, 2 config/input error, 3 numerical abort, 4 incompatibility.
int exit_code(vs_status s) {
  switch (s) {
    case VS_OK: return 0;
    case VS_ERR_NUMERIC: return 3;
    case VS_ERR_INCOMPATIBLE: return 4;
    default: return 2;
  }
}

int finish(vs_status s) {
  if (s != VS_OK)
    std::fprintf(stderr, "volsynth: error (%s): %s\n", vs_status_name(s),
                 vs_last_error());
  return exit_code(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"volsynth - volumetric MRI enhancement toolkit"};
  app.require_subcommand(1);

  // phantom
  auto* phantom = app.add_subcommand("phantom", "generate synthetic phantom pairs");
  int ph_count = 8;
  std::vector<int64_t> ph_shape{32, 32, 32};
  int ph_lesions = 3;
  uint64_t ph_seed = 1234;
  std::string ph_out = "phantom_data";
  phantom->add_option("--count", ph_count, "number of subjects");
  phantom->add_option("--shape", ph_shape, "volume shape (3 ints)")->expected(3);
  phantom->add_option("--lesions", ph_lesions, "lesion blobs per subject");
  phantom->add_option("--seed", ph_seed, "generation seed");
  phantom->add_option("--out", ph_out, "output directory");

  // augment / train / crossval share config + overrides
  std::string cfg_path;
  std::string out_override;
  int64_t seed_override = -1;

  auto* aug = app.add_subcommand("augment", "write an augmented dataset");
  aug->add_option("--config", cfg_path, "run config JSON")->required();
  aug->add_option("--out", out_override, "override output directory");
  aug->add_option("--seed", seed_override, "override seed");

  auto* tr = app.add_subcommand("train", "train a model per the config");
  tr->add_option("--config", cfg_path, "run config JSON")->required();
  tr->add_option("--out", out_override, "override output directory");
  tr->add_option("--seed", seed_override, "override seed");

  auto* cv = app.add_subcommand("crossval", "cross-validated training + report");
  std::string plan = "loo";
  cv->add_option("--config", cfg_path, "run config JSON")->required();
  cv->add_option("--plan", plan, "'loo' or 'kfold:<k>'");
  cv->add_option("--out", out_override, "override output directory");
  cv->add_option("--seed", seed_override, "override seed");

  auto* inf = app.add_subcommand("infer", "full-volume inference from a checkpoint");
  std::string ckpt, in_nii, out_nii;
  double downsample_s = 0.0;
  inf->add_option("--config", cfg_path, "run config JSON")->required();
  inf->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  inf->add_option("--in", in_nii, "input NIfTI volume")->required();
  inf->add_option("--out", out_nii, "output NIfTI volume")->required();
  inf->add_option("--downsample-s", downsample_s,
                  "degrade input by this factor before inference");

  auto* ev = app.add_subcommand("evaluate", "metric report + montages");
  std::string pred_dir, ref_dir, out_csv = "metrics.csv";
  int seg_classes = 4;
  bool ssim_2d = false;
  ev->add_option("--pred", pred_dir, "directory of predictions")->required();
  ev->add_option("--ref", ref_dir, "directory of references")->required();
  ev->add_option("--out", out_csv, "output CSV path");
  ev->add_option("--classes", seg_classes, "proxy segmentation classes");
  ev->add_flag("--ssim-2d", ssim_2d, "slice-wise 2D SSIM instead of full 3D");

  CLI11_PARSE(app, argc, argv);

  if (phantom->parsed()) {
    const int64_t shape[3] = {ph_shape[0], ph_shape[1], ph_shape[2]};
    return finish(
        vs_run_phantom(ph_count, shape, ph_lesions, ph_seed, ph_out.c_str()));
  }
  if (aug->parsed())
    return finish(vs_run_augment(cfg_path.c_str(),
                                 out_override.empty() ? nullptr : out_override.c_str(),
                                 seed_override));
  if (tr->parsed())
    return finish(vs_run_train(cfg_path.c_str(),
                               out_override.empty() ? nullptr : out_override.c_str(),
                               seed_override));
  if (cv->parsed())
    return finish(vs_run_crossval(cfg_path.c_str(), plan.c_str(),
                                  out_override.empty() ? nullptr : out_override.c_str(),
                                  seed_override));
  if (inf->parsed())
    return finish(vs_run_infer(cfg_path.c_str(), ckpt.c_str(), in_nii.c_str(),
                               out_nii.c_str(), downsample_s));
  if (ev->parsed())
    return finish(vs_run_evaluate(pred_dir.c_str(), ref_dir.c_str(),
                                  out_csv.c_str(), seg_classes, ssim_2d ? 1 : 0));
  return 2;
}
