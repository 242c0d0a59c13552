// pipeline.cpp - part of volsynth.
#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace volsynth::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kArtifactVersion = "1.0.0";

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), errc::io,
          "cannot create directory " + dir);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  require(f.good(), errc::io, "cannot write " + path);
  f << text;
  require(f.good(), errc::io, "short write to " + path);
}

// Run manifest: resolved config, seed, version, input checksums, outputs.
struct ManifestBuilder {
  json j;

  ManifestBuilder(const std::string& command, uint64_t seed) {
    j["artifact_version"] = kArtifactVersion;
    j["command"] = command;
    j["seed"] = seed;
    j["inputs"] = json::object();
    j["outputs"] = json::array();
  }

  void set_config(const json& cfg) { j["config"] = cfg; }
  void set(const std::string& key, const json& v) { j[key] = v; }

  void add_input(const std::string& path) {
    j["inputs"][path] = Sha256::file_hex(path);
  }

  void add_output(const std::string& path) {
    j["outputs"].push_back({{"path", path}, {"sha256", Sha256::file_hex(path)}});
  }

  void write(const std::string& path) {
    write_text(path, j.dump(2) + "\n");
  }
};

std::string subject_filename(const std::string& subject_id, bool high) {
  return subject_id + (high ? "_high.nii" : "_low.nii");
}

}  // namespace

// ---------------------------------------------------------------------------

void run_phantom(int count, std::array<int64_t, 3> shape, int lesion_count,
                 uint64_t seed, const std::string& out_dir) {
  require(count >= 1, errc::invalid, "phantom: count must be >= 1");
  ensure_dir(out_dir);
  ManifestBuilder manifest("phantom", seed);
  json subjects = json::array();
  for (int i = 0; i < count; ++i) {
    const PairedSample pair =
        make_phantom_pair(mix_seed(seed, 0x500 + i), shape, lesion_count);
    char sid[16];
    std::snprintf(sid, sizeof(sid), "sub-%03d", i + 1);
    const std::string low = (fs::path(out_dir) / subject_filename(sid, false)).string();
    const std::string high = (fs::path(out_dir) / subject_filename(sid, true)).string();
    write_volume(pair.low_field, low);
    write_volume(pair.high_field, high);
    subjects.push_back({{"subject_id", sid},
                        {"low", subject_filename(sid, false)},
                        {"high", subject_filename(sid, true)},
                        {"lesion_count", lesion_count}});
    manifest.add_output(low);
    manifest.add_output(high);
  }
  manifest.set("subjects", subjects);
  manifest.set("shape", {shape[0], shape[1], shape[2]});
  const std::string mpath = (fs::path(out_dir) / "dataset_manifest.json").string();
  manifest.write(mpath);
}

// ---------------------------------------------------------------------------

std::vector<DatasetEntry> discover_dataset(const std::string& dir) {
  require(fs::is_directory(dir), errc::io, "dataset directory not found: " + dir);
  std::vector<DatasetEntry> entries;
  std::vector<std::string> lows;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > 8 && name.ends_with("_low.nii")) lows.push_back(name);
  }
  std::sort(lows.begin(), lows.end());
  for (const auto& low : lows) {
    DatasetEntry d;
    d.subject_id = low.substr(0, low.size() - 8);
    d.low_path = (fs::path(dir) / low).string();
    d.high_path = (fs::path(dir) / (d.subject_id + "_high.nii")).string();
    require(fs::exists(d.high_path), errc::io,
            "missing high-field file for subject " + d.subject_id);
    entries.push_back(std::move(d));
  }
  require(!entries.empty(), errc::io, "no *_low.nii volumes in " + dir);
  return entries;
}

std::vector<PairedSample> load_dataset(const std::string& dir,
                                       const cfg::RunConfig& config) {
  std::vector<PairedSample> pairs;
  for (const auto& e : discover_dataset(dir)) {
    PairedSample p;
    p.subject_id = e.subject_id;
    p.low_field = read_volume(e.low_path);
    p.high_field = read_volume(e.high_path);
    if (config.normalize_enabled) {
      p.low_field = normalize_intensity(p.low_field, config.clip_lo_pct,
                                        config.clip_hi_pct);
      p.high_field = normalize_intensity(p.high_field, config.clip_lo_pct,
                                         config.clip_hi_pct);
    }
    p.validate();
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void run_augment(const cfg::RunConfig& config) {
  require(!config.dataset_dir.empty(), errc::config,
          "augment: dataset.dir is required");
  ensure_dir(config.output_dir);
  const auto pairs = load_dataset(config.dataset_dir, config);

  augment::AugmentSpec spec = config.augment;
  spec.seed = config.seed;
  const auto augmented = augment::augment_dataset(pairs, spec);

  ManifestBuilder manifest("augment", config.seed);
  manifest.set_config(config.to_json());
  for (const auto& e : discover_dataset(config.dataset_dir)) {
    manifest.add_input(e.low_path);
    manifest.add_input(e.high_path);
  }

  json transforms = json::array();
  for (size_t i = 0; i < pairs.size(); ++i)
    for (int k = 0; k < spec.augmented_per_original; ++k) {
      const int64_t draw = static_cast<int64_t>(i) * spec.augmented_per_original + k;
      const auto t = augment::sample_transform(spec, draw);
      transforms.push_back(
          {{"subject_id", pairs[i].subject_id + "_aug" + std::to_string(k + 1)},
           {"source_subject", pairs[i].subject_id},
           {"flip", t.flip},
           {"flip_axis", t.flip ? (t.flip_axis == 0 ? "sagittal" : "coronal") : "none"},
           {"rotation_deg", t.angle_rad * 180.0 / 3.14159265358979323846},
           {"rotation_axis", {t.axis[0], t.axis[1], t.axis[2]}},
           {"elastic", t.elastic_on},
           {"gamma", t.gamma},
           {"downsample_s", t.downsample_s}});
    }
  manifest.set("transforms", transforms);

  for (const auto& p : augmented) {
    const std::string low =
        (fs::path(config.output_dir) / subject_filename(p.subject_id, false)).string();
    const std::string high =
        (fs::path(config.output_dir) / subject_filename(p.subject_id, true)).string();
    write_volume(p.low_field, low);
    write_volume(p.high_field, high);
    manifest.add_output(low);
    manifest.add_output(high);
  }
  manifest.write((fs::path(config.output_dir) / "augment_manifest.json").string());
}

// ---------------------------------------------------------------------------

void run_train(const cfg::RunConfig& config) {
  require(!config.dataset_dir.empty(), errc::config, "train: dataset.dir is required");
  ensure_dir(config.output_dir);
  std::vector<PairedSample> pairs = load_dataset(config.dataset_dir, config);

  train::TrainConfig tcfg = config.train;
  if (config.augment_enabled) {
    // Augmentation is precomputed before training.
    augment::AugmentSpec spec = config.augment;
    spec.seed = config.seed;
    pairs = augment::augment_dataset(pairs, spec);
    tcfg.augmentation.reset();  // already applied
  }

  const train::TrainResult result = tcfg.variant == train::Variant::vnet_gan
                                        ? train::train_gan(tcfg, pairs)
                                        : train::train_supervised(tcfg, pairs);

  const std::string ckpt = (fs::path(config.output_dir) / "checkpoint.ckpt").string();
  const std::string logcsv =
      (fs::path(config.output_dir) / "training_log.csv").string();
  const std::string cfgecho =
      (fs::path(config.output_dir) / "resolved_config.json").string();
  save_checkpoint(result.weights, ckpt);
  train::write_train_log_csv(result.log, logcsv);
  write_text(cfgecho, config.to_json().dump(2) + "\n");

  ManifestBuilder manifest("train", config.seed);
  manifest.set_config(config.to_json());
  for (const auto& e : discover_dataset(config.dataset_dir)) {
    manifest.add_input(e.low_path);
    manifest.add_input(e.high_path);
  }
  manifest.add_output(ckpt);
  manifest.add_output(logcsv);
  manifest.add_output(cfgecho);
  if (result.critic_weights) {
    const std::string cckpt =
        (fs::path(config.output_dir) / "critic.ckpt").string();
    save_checkpoint(*result.critic_weights, cckpt);
    manifest.add_output(cckpt);
  }
  manifest.write((fs::path(config.output_dir) / "run_manifest.json").string());
}

// ---------------------------------------------------------------------------

namespace {

struct Agg {
  double mean = 0.0, stdev = 0.0;
};

Agg aggregate(const std::vector<double>& xs) {
  Agg a;
  if (xs.empty()) return a;
  for (const double x : xs) a.mean += x;
  a.mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (const double x : xs) ss += (x - a.mean) * (x - a.mean);
  a.stdev = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
  return a;
}

}  // namespace

std::string cv_report_csv(const std::vector<metrics::MetricReport>& reports,
                          int seg_classes) {
  std::string csv = metrics::metric_csv_header(seg_classes) + "\n";
  for (const auto& r : reports) csv += metrics::metric_csv_row(r) + "\n";

  // Aggregates per condition: full-precision mean/std rows plus a
  // "mean ± std" display row (3 decimals for SSIM/Dice, 2 for PSNR).
  std::vector<std::string> conditions;
  for (const auto& r : reports)
    if (std::find(conditions.begin(), conditions.end(), r.condition) ==
        conditions.end())
      conditions.push_back(r.condition);
  for (const auto& cond : conditions) {
    std::vector<double> ssims, psnrs, dices;
    for (const auto& r : reports)
      if (r.condition == cond) {
        ssims.push_back(r.ssim);
        if (!r.psnr_infinite) psnrs.push_back(r.psnr_db);
        dices.push_back(r.dice_mean);
      }
    const Agg s = aggregate(ssims), p = aggregate(psnrs), d = aggregate(dices);
    auto num_row = [&](const char* tag, double sv, double pv, double dv) {
      std::string row = std::string(tag) + ",," + cond + "," + format_double(sv) +
                        "," + format_double(pv) + "," + format_double(dv);
      for (int c = 0; c < seg_classes; ++c) row += ",";
      return row + "\n";
    };
    csv += num_row("aggregate_mean", s.mean, p.mean, d.mean);
    csv += num_row("aggregate_std", s.stdev, p.stdev, d.stdev);
    std::string pretty = "aggregate,," + cond + "," + format_fixed(s.mean, 3) +
                         " ± " + format_fixed(s.stdev, 3) + "," +
                         format_fixed(p.mean, 2) + " ± " + format_fixed(p.stdev, 2) +
                         "," + format_fixed(d.mean, 3) + " ± " +
                         format_fixed(d.stdev, 3);
    for (int c = 0; c < seg_classes; ++c) pretty += ",";
    csv += pretty + "\n";
  }
  return csv;
}

void run_crossval(const cfg::RunConfig& config, const std::string& plan_str) {
  require(!config.dataset_dir.empty(), errc::config,
          "crossval: dataset.dir is required");
  ensure_dir(config.output_dir);
  const auto pairs = load_dataset(config.dataset_dir, config);
  require(pairs.size() >= 2, errc::invalid, "crossval: need at least 2 subjects");

  train::FoldPlan plan;
  if (plan_str == "loo") {
    plan = train::make_loo_plan(static_cast<int>(pairs.size()));
  } else if (plan_str.rfind("kfold:", 0) == 0) {
    const int k = std::atoi(plan_str.c_str() + 6);
    require(k >= 2, errc::invalid, "crossval: bad fold count in plan");
    plan = train::make_kfold_plan(static_cast<int>(pairs.size()), k, config.seed);
  } else {
    fail(errc::invalid, "crossval: plan must be 'loo' or 'kfold:<k>'");
  }

  train::TrainConfig tcfg = config.train;
  if (config.augment_enabled) tcfg.augmentation = config.augment;

  std::vector<double> conditions{1.0};
  if (config.downsample_eval_s > 1.0)
    conditions.push_back(config.downsample_eval_s);
  metrics::SsimOptions sopt;
  sopt.slice_2d = config.ssim_2d;
  const std::vector<metrics::MetricReport> reports =
      train::cross_validate_with_conditions(plan, tcfg, pairs,
                                            config.seg_classes, conditions,
                                            sopt);

  const std::string csv = cv_report_csv(reports, config.seg_classes);
  const std::string csv_path =
      (fs::path(config.output_dir) / "cv_report.csv").string();
  write_text(csv_path, csv);
  write_text((fs::path(config.output_dir) / "resolved_config.json").string(),
             config.to_json().dump(2) + "\n");

  ManifestBuilder manifest("crossval", config.seed);
  manifest.set_config(config.to_json());
  manifest.set("plan", plan_str);
  for (const auto& e : discover_dataset(config.dataset_dir)) {
    manifest.add_input(e.low_path);
    manifest.add_input(e.high_path);
  }
  manifest.add_output(csv_path);
  manifest.write((fs::path(config.output_dir) / "run_manifest.json").string());
}

// ---------------------------------------------------------------------------

void run_infer(const std::string& checkpoint_path, const std::string& in_path,
               const std::string& out_path, double downsample_s,
               const cfg::RunConfig& config) {
  const ModelWeights weights = load_checkpoint(checkpoint_path);
  Volume low = read_volume(in_path);
  if (config.normalize_enabled)
    low = normalize_intensity(low, config.clip_lo_pct, config.clip_hi_pct);
  if (downsample_s > 1.0) low = augment::apply_degrade(low, downsample_s);
  const Volume pred = train::infer_volume(weights, low, config.train);
  write_volume(pred, out_path);

  ManifestBuilder manifest("infer", config.seed);
  manifest.set_config(config.to_json());
  manifest.set("condition", train::condition_label(downsample_s >= 1.0 ? downsample_s : 1.0));
  manifest.add_input(checkpoint_path);
  manifest.add_input(in_path);
  manifest.add_output(out_path);
  manifest.write(out_path + ".manifest.json");
}

// ---------------------------------------------------------------------------

namespace {

// 2x3 grid: prediction row over reference row; axial/coronal/sagittal center
// slices, fixed [0,1] window, PGM (P5) output.
void write_montage(const Volume& pred, const Volume& ref, const std::string& path) {
  const auto sh = pred.shape;
  struct Cell {
    int64_t w, h;
    std::function<float(const Volume&, int64_t, int64_t)> at;
  };
  const int64_t cx = sh[0] / 2, cy = sh[1] / 2, cz = sh[2] / 2;
  const Cell cells[3] = {
      {sh[0], sh[1], [cz](const Volume& v, int64_t i, int64_t j) { return v.at(i, j, cz); }},
      {sh[0], sh[2], [cy](const Volume& v, int64_t i, int64_t j) { return v.at(i, cy, j); }},
      {sh[1], sh[2], [cx](const Volume& v, int64_t i, int64_t j) { return v.at(cx, i, j); }},
  };
  int64_t cell_w = 0, cell_h = 0;
  for (const auto& c : cells) {
    cell_w = std::max(cell_w, c.w);
    cell_h = std::max(cell_h, c.h);
  }
  const int64_t W = cell_w * 3, H = cell_h * 2;
  std::vector<uint8_t> img(static_cast<size_t>(W * H), 0);
  auto put = [&](const Volume& v, int row, int col, const Cell& c) {
    for (int64_t i = 0; i < c.w; ++i)
      for (int64_t j = 0; j < c.h; ++j) {
        const float f = std::clamp(c.at(v, i, j), 0.0f, 1.0f);
        img[static_cast<size_t>((row * cell_h + j) * W + col * cell_w + i)] =
            static_cast<uint8_t>(std::lround(f * 255.0f));
      }
  };
  for (int col = 0; col < 3; ++col) {
    put(pred, 0, col, cells[col]);
    put(ref, 1, col, cells[col]);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), errc::io, "cannot write " + path);
  f << "P5\n" << W << " " << H << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.data()),
          static_cast<std::streamsize>(img.size()));
  require(f.good(), errc::io, "short write to " + path);
}

}  // namespace

void run_evaluate(const std::string& pred_dir, const std::string& ref_dir,
                  const std::string& out_csv, int seg_classes, bool ssim_2d) {
  require(fs::is_directory(pred_dir), errc::io, "pred dir not found: " + pred_dir);
  require(fs::is_directory(ref_dir), errc::io, "ref dir not found: " + ref_dir);

  // Subjects come from the reference side: sub-XXX_high.nii. Predictions are
  // sub-XXX_pred.nii or sub-XXX_high.nii in pred_dir.
  std::vector<std::string> subjects;
  for (const auto& e : fs::directory_iterator(ref_dir)) {
    const std::string name = e.path().filename().string();
    if (name.ends_with("_high.nii"))
      subjects.push_back(name.substr(0, name.size() - 9));
  }
  std::sort(subjects.begin(), subjects.end());
  require(!subjects.empty(), errc::io, "no *_high.nii references in " + ref_dir);

  std::vector<std::string> missing;
  auto pred_path = [&](const std::string& sid) -> std::string {
    const std::string a = (fs::path(pred_dir) / (sid + "_pred.nii")).string();
    if (fs::exists(a)) return a;
    const std::string b = (fs::path(pred_dir) / (sid + "_high.nii")).string();
    if (fs::exists(b)) return b;
    return "";
  };
  for (const auto& sid : subjects)
    if (pred_path(sid).empty()) missing.push_back(sid);
  if (!missing.empty()) {
    std::string msg = "evaluate: missing predictions for:";
    for (const auto& m : missing) msg += " " + m;
    fail(errc::invalid, msg);
  }

  const fs::path out_parent = fs::path(out_csv).parent_path();
  if (!out_parent.empty()) ensure_dir(out_parent.string());

  metrics::SsimOptions sopt;
  sopt.slice_2d = ssim_2d;
  std::vector<metrics::MetricReport> reports;
  ManifestBuilder manifest("evaluate", 0);
  for (const auto& sid : subjects) {
    const std::string pp = pred_path(sid);
    const std::string rp = (fs::path(ref_dir) / (sid + "_high.nii")).string();
    const Volume pred = read_volume(pp);
    const Volume ref = read_volume(rp);
    manifest.add_input(pp);
    manifest.add_input(rp);
    reports.push_back(
        metrics::evaluate_pair(pred, ref, seg_classes, sid, "original", 0, sopt));
    const std::string montage =
        (out_parent / (sid + "_montage.pgm")).string();
    write_montage(pred, ref, montage);
    manifest.add_output(montage);
  }
  write_text(out_csv, cv_report_csv(reports, seg_classes));
  manifest.add_output(out_csv);
  manifest.write(out_csv + ".manifest.json");
}

}  // namespace volsynth::pipeline
