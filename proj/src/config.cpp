// config.cpp - part of volsynth.
#include "config.hpp"

#include <fstream>
#include <set>

namespace volsynth::cfg {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
  require(j.is_object(), errc::config, path + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    require(ok.count(key) > 0, errc::config,
            "unknown config key: " + path + "." + key);
}

template <typename T>
void get_to(const json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    fail(errc::config, path + "." + key + ": " + e.what());
  }
}

void get_shape3(const json& j, const char* key, std::array<int64_t, 3>& out,
                const std::string& path) {
  if (!j.contains(key)) return;
  const auto& a = j.at(key);
  require(a.is_array() && a.size() == 3, errc::config,
          path + "." + key + ": expected 3 integers");
  for (int i = 0; i < 3; ++i) out[i] = a[i].get<int64_t>();
}

void parse_vnet(const json& j, const std::string& path, models::VNetConfig& v) {
  check_keys(j, path,
             {"levels", "base_channels", "convs_per_level", "kernel",
              "in_channels", "out_channels"});
  get_to(j, "levels", v.levels, path);
  get_to(j, "base_channels", v.base_channels, path);
  get_to(j, "convs_per_level", v.convs_per_level, path);
  if (j.contains("kernel")) {
    const auto& a = j.at("kernel");
    require(a.is_array() && a.size() == 3, errc::config,
            path + ".kernel: expected 3 integers");
    for (int i = 0; i < 3; ++i) v.kernel[i] = a[i].get<int>();
  }
  get_to(j, "in_channels", v.in_channels, path);
  get_to(j, "out_channels", v.out_channels, path);
}

json vnet_json(const models::VNetConfig& v) {
  return json{{"levels", v.levels},
              {"base_channels", v.base_channels},
              {"convs_per_level", v.convs_per_level},
              {"kernel", {v.kernel[0], v.kernel[1], v.kernel[2]}},
              {"in_channels", v.in_channels},
              {"out_channels", v.out_channels}};
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  check_keys(j, "$",
             {"schema_version", "seed", "output_dir", "dataset", "model",
              "train", "augment", "metrics"});
  get_to(j, "schema_version", c.schema_version, "$");
  require(c.schema_version == 1, errc::config,
          "unsupported schema_version (expected 1)");
  get_to(j, "seed", c.seed, "$");
  get_to(j, "output_dir", c.output_dir, "$");

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    check_keys(d, "$.dataset", {"dir", "normalize"});
    get_to(d, "dir", c.dataset_dir, "$.dataset");
    if (d.contains("normalize")) {
      const auto& n = d.at("normalize");
      check_keys(n, "$.dataset.normalize", {"enabled", "clip_lo_pct", "clip_hi_pct"});
      get_to(n, "enabled", c.normalize_enabled, "$.dataset.normalize");
      get_to(n, "clip_lo_pct", c.clip_lo_pct, "$.dataset.normalize");
      get_to(n, "clip_hi_pct", c.clip_hi_pct, "$.dataset.normalize");
    }
  }

  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, "$.model", {"variant", "vnet", "critic", "perceptual", "watnet"});
    if (m.contains("variant"))
      c.train.variant = train::variant_from_name(m.at("variant").get<std::string>());
    if (m.contains("vnet")) parse_vnet(m.at("vnet"), "$.model.vnet", c.train.vnet);
    // The critic encoder mirrors the generator unless overridden.
    c.train.critic.encoder = c.train.vnet;
    if (m.contains("critic"))
      parse_vnet(m.at("critic"), "$.model.critic", c.train.critic.encoder);
    if (m.contains("perceptual")) {
      const auto& p = m.at("perceptual");
      check_keys(p, "$.model.perceptual",
                 {"stages", "base_channels", "feature_layer", "seed",
                  "weights_path"});
      get_to(p, "stages", c.train.perceptual.stages, "$.model.perceptual");
      get_to(p, "base_channels", c.train.perceptual.base_channels,
             "$.model.perceptual");
      get_to(p, "feature_layer", c.train.perceptual.feature_layer,
             "$.model.perceptual");
      get_to(p, "seed", c.train.perceptual.seed, "$.model.perceptual");
      get_to(p, "weights_path", c.train.perceptual_weights_path,
             "$.model.perceptual");
    }
    if (m.contains("watnet")) {
      const auto& w = m.at("watnet");
      check_keys(w, "$.model.watnet", {"depth", "width", "wavelet_levels"});
      get_to(w, "depth", c.train.watnet.depth, "$.model.watnet");
      get_to(w, "width", c.train.watnet.width, "$.model.watnet");
      get_to(w, "wavelet_levels", c.train.watnet.wavelet_levels, "$.model.watnet");
    }
  } else {
    c.train.critic.encoder = c.train.vnet;
  }

  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "$.train",
               {"lr", "epochs", "batch_size", "patch_shape",
                "patches_per_volume_per_epoch", "critic_steps", "clip_c",
                "loss_weights"});
    get_to(t, "lr", c.train.lr, "$.train");
    get_to(t, "epochs", c.train.epochs, "$.train");
    get_to(t, "batch_size", c.train.batch_size, "$.train");
    get_shape3(t, "patch_shape", c.train.patch_shape, "$.train");
    get_to(t, "patches_per_volume_per_epoch",
           c.train.patches_per_volume_per_epoch, "$.train");
    get_to(t, "critic_steps", c.train.critic_steps, "$.train");
    get_to(t, "clip_c", c.train.clip_c, "$.train");
    if (t.contains("loss_weights")) {
      const auto& w = t.at("loss_weights");
      check_keys(w, "$.train.loss_weights", {"mae", "perceptual", "adv"});
      get_to(w, "mae", c.train.loss_weights.w_mae, "$.train.loss_weights");
      get_to(w, "perceptual", c.train.loss_weights.w_perceptual,
             "$.train.loss_weights");
      get_to(w, "adv", c.train.loss_weights.w_adv, "$.train.loss_weights");
    }
  }

  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    check_keys(a, "$.augment",
               {"enabled", "flip", "rotation_max_deg", "elastic",
                "gamma_log_range", "downsample_range", "augmented_per_original"});
    get_to(a, "enabled", c.augment_enabled, "$.augment");
    get_to(a, "flip", c.augment.enable_flip, "$.augment");
    get_to(a, "rotation_max_deg", c.augment.rotation_max_deg, "$.augment");
    if (a.contains("elastic")) {
      const auto& e = a.at("elastic");
      check_keys(e, "$.augment.elastic",
                 {"enabled", "control_spacing_vox", "max_displacement_vox"});
      get_to(e, "enabled", c.augment.elastic.enabled, "$.augment.elastic");
      get_to(e, "control_spacing_vox", c.augment.elastic.control_spacing_vox,
             "$.augment.elastic");
      get_to(e, "max_displacement_vox", c.augment.elastic.max_displacement_vox,
             "$.augment.elastic");
    }
    get_to(a, "gamma_log_range", c.augment.gamma_log_range, "$.augment");
    if (a.contains("downsample_range")) {
      const auto& r = a.at("downsample_range");
      require(r.is_array() && r.size() == 2, errc::config,
              "$.augment.downsample_range: expected [lo, hi]");
      c.augment.downsample_range = {r[0].get<double>(), r[1].get<double>()};
    }
    get_to(a, "augmented_per_original", c.augment.augmented_per_original,
           "$.augment");
  }

  if (j.contains("metrics")) {
    const auto& m = j.at("metrics");
    check_keys(m, "$.metrics", {"segment_classes", "ssim_2d", "downsample_eval_s"});
    get_to(m, "segment_classes", c.seg_classes, "$.metrics");
    get_to(m, "ssim_2d", c.ssim_2d, "$.metrics");
    get_to(m, "downsample_eval_s", c.downsample_eval_s, "$.metrics");
  }

  c.train.seed = c.seed;
  c.augment.seed = c.seed;
  if (c.augment_enabled) c.train.augmentation = c.augment;
  require(c.seg_classes >= 2, errc::config, "metrics.segment_classes must be >= 2");
  c.train.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), errc::io, "cannot open config " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    fail(errc::config, path + ": " + e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json j;
  j["schema_version"] = schema_version;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["dataset"] = {{"dir", dataset_dir},
                  {"normalize",
                   {{"enabled", normalize_enabled},
                    {"clip_lo_pct", clip_lo_pct},
                    {"clip_hi_pct", clip_hi_pct}}}};
  j["model"] = {
      {"variant", train::variant_name(train.variant)},
      {"vnet", vnet_json(train.vnet)},
      {"critic", vnet_json(train.critic.encoder)},
      {"perceptual",
       {{"stages", train.perceptual.stages},
        {"base_channels", train.perceptual.base_channels},
        {"feature_layer", train.perceptual.feature_layer},
        {"seed", train.perceptual.seed},
        {"weights_path", train.perceptual_weights_path}}},
      {"watnet",
       {{"depth", train.watnet.depth},
        {"width", train.watnet.width},
        {"wavelet_levels", train.watnet.wavelet_levels}}}};
  j["train"] = {{"lr", train.lr},
                {"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"patch_shape",
                 {train.patch_shape[0], train.patch_shape[1], train.patch_shape[2]}},
                {"patches_per_volume_per_epoch", train.patches_per_volume_per_epoch},
                {"critic_steps", train.critic_steps},
                {"clip_c", train.clip_c},
                {"loss_weights",
                 {{"mae", train.loss_weights.w_mae},
                  {"perceptual", train.loss_weights.w_perceptual},
                  {"adv", train.loss_weights.w_adv}}}};
  j["augment"] = {{"enabled", augment_enabled},
                  {"flip", augment.enable_flip},
                  {"rotation_max_deg", augment.rotation_max_deg},
                  {"elastic",
                   {{"enabled", augment.elastic.enabled},
                    {"control_spacing_vox", augment.elastic.control_spacing_vox},
                    {"max_displacement_vox", augment.elastic.max_displacement_vox}}},
                  {"gamma_log_range", augment.gamma_log_range},
                  {"downsample_range",
                   {augment.downsample_range[0], augment.downsample_range[1]}},
                  {"augmented_per_original", augment.augmented_per_original}};
  j["metrics"] = {{"segment_classes", seg_classes},
                  {"ssim_2d", ssim_2d},
                  {"downsample_eval_s", downsample_eval_s}};
  return j;
}

}  // namespace volsynth::cfg
