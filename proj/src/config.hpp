// config.hpp - part of volsynth: run configuration document.
#pragma once

#include <string>

#include "augment.hpp"
#include "trainer.hpp"

#include <json.hpp>

namespace volsynth::cfg {

// The run config is a strict-schema JSON document: unknown keys are rejected
// with their path, omitted optional keys take the defaults below, and the
// fully resolved document is echoed into the output directory.
struct RunConfig {
  int schema_version = 1;
  uint64_t seed = 1234;
  std::string output_dir = "out";

  std::string dataset_dir;
  bool normalize_enabled = true;
  double clip_lo_pct = 0.0;
  double clip_hi_pct = 100.0;

  train::TrainConfig train;  // carries variant + model configs
  bool augment_enabled = false;
  augment::AugmentSpec augment;

  int seg_classes = 4;
  bool ssim_2d = false;
  double downsample_eval_s = 0.0;  // > 1: emit a second condition in crossval

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);
  nlohmann::json to_json() const;  // fully resolved
};

}  // namespace volsynth::cfg
