// trainer.cpp - part of volsynth.
#include "trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace volsynth::train {

using ad::ParamSet;
using ad::Tape;
using ad::Var;

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::vnet: return "vnet";
    case Variant::vnet_sseg: return "vnet_sseg";
    case Variant::vnet_gan: return "vnet_gan";
    case Variant::watnet: return "watnet";
  }
  return "?";
}

Variant variant_from_name(const std::string& s) {
  if (s == "vnet") return Variant::vnet;
  if (s == "vnet_sseg") return Variant::vnet_sseg;
  if (s == "vnet_gan") return Variant::vnet_gan;
  if (s == "watnet") return Variant::watnet;
  fail(errc::config, "unknown variant: " + s);
}

double TrainConfig::resolved_lr() const {
  if (lr > 0.0) return lr;
  return variant == Variant::watnet ? 1e-4 : 1e-3;
}

void TrainConfig::validate() const {
  require(resolved_lr() > 0.0, errc::config, "train: lr must be positive");
  require(epochs >= 1, errc::config, "train: epochs must be >= 1");
  require(batch_size >= 1, errc::config, "train: batch_size must be >= 1");
  require(patches_per_volume_per_epoch >= 1, errc::config,
          "train: patches_per_volume_per_epoch must be >= 1");
  require(critic_steps >= 1, errc::config, "train: critic_steps must be >= 1");
  require(clip_c > 0.0, errc::config, "train: clip_c must be positive");
  for (const int64_t p : patch_shape)
    require(p >= 1, errc::config, "train: patch dims must be >= 1");
  if (variant == Variant::watnet) {
    watnet.validate();
    require(patch_shape[2] == watnet.in_slices, errc::config,
            "train: watnet patch depth must equal in_slices");
  } else {
    vnet.validate();
    const int64_t div = int64_t{1} << (vnet.levels - 1);
    for (int a = 0; a < 3; ++a)
      require(patch_shape[a] % div == 0, errc::config,
              "train: patch dims must be divisible by 2^(levels-1)");
  }
  if (augmentation) augmentation->validate();
}

int TrainConfig::steps_per_epoch(size_t n_pairs) const {
  const int64_t patches =
      static_cast<int64_t>(n_pairs) * patches_per_volume_per_epoch;
  return static_cast<int>(std::max<int64_t>(1, patches / batch_size));
}

// ---------------------------------------------------------------------------

void sample_training_batch(const std::vector<PairedSample>& pairs,
                           const TrainConfig& cfg, Rng& stream,
                           int64_t& cursor, Tensor32& low, Tensor32& high) {
  require(!pairs.empty(), errc::invalid, "sample_batch: no pairs");
  const auto& ps = cfg.patch_shape;
  const int64_t B = cfg.batch_size;
  const bool watnet = cfg.variant == Variant::watnet;

  if (watnet) {
    low = Tensor32::zeros({B, 3, ps[0], ps[1]});
    high = Tensor32::zeros({B, 1, ps[0], ps[1]});
  } else {
    low = Tensor32::zeros({B, 1, ps[0], ps[1], ps[2]});
    high = Tensor32::zeros({B, 1, ps[0], ps[1], ps[2]});
  }

  for (int64_t b = 0; b < B; ++b) {
    const auto& pair =
        pairs[static_cast<size_t>(cursor++ % static_cast<int64_t>(pairs.size()))];
    const auto& sh = pair.low_field.shape;
    for (int a = 0; a < 3; ++a)
      require(ps[a] <= sh[a], errc::shape,
              "sample_batch: patch larger than volume");
    std::array<int64_t, 3> c{};
    for (int a = 0; a < 3; ++a) c[a] = stream.uniform_int(0, sh[a] - ps[a]);

    if (watnet) {
      const int64_t hw = ps[0] * ps[1];
      for (int64_t s = 0; s < 3; ++s) {
        float* dst = low.v.data() + (b * 3 + s) * hw;
        for (int64_t x = 0; x < ps[0]; ++x)
          for (int64_t y = 0; y < ps[1]; ++y)
            dst[x * ps[1] + y] = pair.low_field.at(c[0] + x, c[1] + y, c[2] + s);
      }
      float* dst = high.v.data() + b * hw;
      for (int64_t x = 0; x < ps[0]; ++x)
        for (int64_t y = 0; y < ps[1]; ++y)
          dst[x * ps[1] + y] = pair.high_field.at(c[0] + x, c[1] + y, c[2] + 1);
    } else {
      const int64_t n = ps[0] * ps[1] * ps[2];
      const auto lp = extract_patch_at(pair.low_field, c, ps);
      const auto hp = extract_patch_at(pair.high_field, c, ps);
      std::copy(lp.begin(), lp.end(), low.v.data() + b * n);
      std::copy(hp.begin(), hp.end(), high.v.data() + b * n);
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

void check_finite_loss(double total, int64_t step, int epoch) {
  require(std::isfinite(total), errc::numeric,
          "training diverged (non-finite loss) at step " + std::to_string(step) +
              ", epoch " + std::to_string(epoch));
}

std::vector<Tensor32> collect_grads(Tape<float>& tape, const ParamSet<float>& ps,
                                    const std::vector<Var>& pv) {
  std::vector<Tensor32> grads;
  grads.reserve(ps.size());
  for (size_t i = 0; i < ps.size(); ++i) grads.push_back(tape.grad(pv[i]));
  return grads;
}

struct PerceptualCtx {
  models::PerceptualEncoder<float> enc;
};

PerceptualCtx make_perceptual(const TrainConfig& cfg) {
  PerceptualCtx ctx{models::build_perceptual_encoder<float>(cfg.perceptual)};
  if (!cfg.perceptual_weights_path.empty()) {
    const ModelWeights w = load_checkpoint(cfg.perceptual_weights_path);
    check_arch_tag(w, "perceptual_encoder");
    load_params(ctx.enc.params, w);
    ctx.enc.params.set_requires_grad(false);
  }
  return ctx;
}

void finish_epoch_stats(TrainLog& log) {
  std::map<int, std::pair<double, int64_t>> acc;
  for (const auto& r : log.rows)
    if (r.phase == "gen") {
      acc[r.epoch].first += r.total;
      acc[r.epoch].second += 1;
    }
  log.epoch_mean_total.clear();
  for (const auto& [epoch, se] : acc)
    log.epoch_mean_total.push_back(se.first / static_cast<double>(se.second));
}

}  // namespace

TrainResult train_supervised(const TrainConfig& cfg,
                             const std::vector<PairedSample>& pairs) {
  cfg.validate();
  require(cfg.variant == Variant::vnet || cfg.variant == Variant::vnet_sseg ||
              cfg.variant == Variant::watnet,
          errc::invalid, "train_supervised: variant must be supervised");
  require(!pairs.empty(), errc::invalid, "train_supervised: empty dataset");

  const double lr = cfg.resolved_lr();
  const int steps = cfg.steps_per_epoch(pairs.size());
  Rng stream(mix_seed(cfg.seed, 0xb0));
  int64_t cursor = 0;

  TrainResult result;
  TrainLog& log = result.log;
  int64_t step_idx = 0;

  const bool use_perc = cfg.variant == Variant::vnet_sseg;
  std::optional<PerceptualCtx> perc;
  if (use_perc) perc.emplace(make_perceptual(cfg));

  if (cfg.variant == Variant::watnet) {
    auto model = models::build_watnet<float>(cfg.watnet, mix_seed(cfg.seed, 0xc0));
    ad::AdamState<float> adam;
    adam.init(model.params);
    Tensor32 low, high;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      for (int s = 0; s < steps; ++s) {
        sample_training_batch(pairs, cfg, stream, cursor, low, high);
        const auto wavelet_in =
            models::watnet_wavelet_inputs(low, cfg.watnet.wavelet_levels);
        Tape<float> tape;
        const auto pv = model.params.bind(tape);
        const Var x = tape.leaf(low);
        const Var y = tape.leaf(high);
        std::vector<Var> wv;
        for (const auto& t : wavelet_in) wv.push_back(tape.leaf(t));
        const Var pred = models::watnet_forward(tape, model, pv, x, wv);
        const Var mae = losses::mae_loss(tape, pred, y);
        auto [total, bd] = losses::combined_loss(tape, cfg.loss_weights, mae,
                                                 std::nullopt, std::nullopt);
        check_finite_loss(bd.total, step_idx, epoch);
        tape.backward(total);
        auto grads = collect_grads(tape, model.params, pv);
        ad::adam_step(model.params, grads, adam, lr);
        log.rows.push_back({step_idx++, epoch, "gen", bd.total, bd.terms});
      }
    }
    result.weights = snapshot_params(model.params, variant_name(cfg.variant));
  } else {
    auto model = models::build_vnet<float>(cfg.vnet, mix_seed(cfg.seed, 0xc0));
    ad::AdamState<float> adam;
    adam.init(model.params);
    Tensor32 low, high;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      for (int s = 0; s < steps; ++s) {
        sample_training_batch(pairs, cfg, stream, cursor, low, high);
        Tape<float> tape;
        const auto pv = model.params.bind(tape);
        const Var x = tape.leaf(low);
        const Var y = tape.leaf(high);
        const Var pred = models::vnet_forward(tape, model, pv, x);
        const Var mae = losses::mae_loss(tape, pred, y);
        std::optional<Var> pterm;
        std::vector<Var> epv;
        if (use_perc) {
          epv = perc->enc.params.bind(tape);
          pterm = losses::perceptual_loss(tape, perc->enc, epv, pred, y);
        }
        auto [total, bd] = losses::combined_loss(tape, cfg.loss_weights, mae,
                                                 pterm, std::nullopt);
        check_finite_loss(bd.total, step_idx, epoch);
        tape.backward(total);
        auto grads = collect_grads(tape, model.params, pv);
        ad::adam_step(model.params, grads, adam, lr);
        log.rows.push_back({step_idx++, epoch, "gen", bd.total, bd.terms});
      }
    }
    result.weights = snapshot_params(model.params, variant_name(cfg.variant));
  }
  finish_epoch_stats(log);
  return result;
}

TrainResult train_gan(const TrainConfig& cfg,
                      const std::vector<PairedSample>& pairs) {
  cfg.validate();
  require(cfg.variant == Variant::vnet_gan, errc::invalid,
          "train_gan: variant must be vnet_gan");
  require(!pairs.empty(), errc::invalid, "train_gan: empty dataset");

  const double lr = cfg.resolved_lr();
  const int steps = cfg.steps_per_epoch(pairs.size());
  Rng stream(mix_seed(cfg.seed, 0xb0));
  int64_t cursor = 0;

  auto gen = models::build_vnet<float>(cfg.vnet, mix_seed(cfg.seed, 0xc0));
  auto critic =
      models::build_critic<float>(cfg.critic, mix_seed(cfg.seed, 0xc1));
  // The weight-clipping recipe operates inside the box from the start.
  ad::clip_weights(critic.params, cfg.clip_c);
  PerceptualCtx perc = make_perceptual(cfg);
  ad::AdamState<float> adam_gen, adam_critic;
  adam_gen.init(gen.params);
  adam_critic.init(critic.params);

  TrainResult result;
  TrainLog& log = result.log;
  int64_t step_idx = 0;
  Tensor32 low, high;

  auto generator_fake = [&](const Tensor32& x_in) {
    // Detached forward; critic updates must not touch generator weights.
    Tape<float> tape;
    gen.params.set_requires_grad(false);
    const auto pv = gen.params.bind(tape);
    gen.params.set_requires_grad(true);
    const Var x = tape.leaf(x_in);
    return tape.value(models::vnet_forward(tape, gen, pv, x));
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (int s = 0; s < steps; ++s) {
      for (int c = 0; c < cfg.critic_steps; ++c) {
        sample_training_batch(pairs, cfg, stream, cursor, low, high);
        const Tensor32 fake = generator_fake(low);
        Tape<float> tape;
        const auto cpv = critic.params.bind(tape);
        const Var real_v = tape.leaf(high);
        const Var fake_v = tape.leaf(fake);
        const Var loss = losses::critic_loss(tape, critic, cpv, real_v, fake_v);
        const double lv = static_cast<double>(tape.value(loss).v[0]);
        check_finite_loss(lv, step_idx, epoch);
        tape.backward(loss);
        auto grads = collect_grads(tape, critic.params, cpv);
        ad::adam_step(critic.params, grads, adam_critic, lr);
        ad::clip_weights(critic.params, cfg.clip_c);
        LogRow row{step_idx++, epoch, "critic", lv, {}};
        row.terms["critic"] = lv;
        log.rows.push_back(std::move(row));
      }

      sample_training_batch(pairs, cfg, stream, cursor, low, high);
      Tape<float> tape;
      const auto gpv = gen.params.bind(tape);
      critic.params.set_requires_grad(false);  // frozen during generator step
      const auto cpv = critic.params.bind(tape);
      critic.params.set_requires_grad(true);
      const auto epv = perc.enc.params.bind(tape);
      const Var x = tape.leaf(low);
      const Var y = tape.leaf(high);
      const Var pred = models::vnet_forward(tape, gen, gpv, x);
      const Var mae = losses::mae_loss(tape, pred, y);
      const Var pterm = losses::perceptual_loss(tape, perc.enc, epv, pred, y);
      const Var adv = losses::generator_adv_loss(tape, critic, cpv, pred);
      auto [total, bd] =
          losses::combined_loss(tape, cfg.loss_weights, mae, pterm, adv);
      check_finite_loss(bd.total, step_idx, epoch);
      tape.backward(total);
      auto grads = collect_grads(tape, gen.params, gpv);
      ad::adam_step(gen.params, grads, adam_gen, lr);
      log.rows.push_back({step_idx++, epoch, "gen", bd.total, bd.terms});
    }
  }
  result.weights = snapshot_params(gen.params, variant_name(cfg.variant));
  result.critic_weights = snapshot_params(critic.params, "vnet_gan_critic");
  finish_epoch_stats(log);
  return result;
}

// ---------------------------------------------------------------------------

Volume infer_sliding(const std::function<Tensor32(const Tensor32&)>& fwd,
                     const Volume& low, std::array<int64_t, 3> patch,
                     std::array<int64_t, 3> stride) {
  const PatchLayout layout = make_patch_layout(low.shape, patch, stride);
  std::vector<std::vector<float>> outs;
  outs.reserve(layout.positions.size());
  for (const auto& pos : layout.positions) {
    Tensor32 in = Tensor32::zeros({1, 1, patch[0], patch[1], patch[2]});
    in.v = extract_patch_at(low, pos, patch);
    in.shape = {1, 1, patch[0], patch[1], patch[2]};
    const Tensor32 out = fwd(in);
    require(out.v.size() == in.v.size(), errc::shape,
            "infer: model changed patch shape");
    outs.push_back(out.v);
  }
  Volume pred = stitch_patches(layout, outs, low.shape);
  pred.spacing_mm = low.spacing_mm;
  pred.origin_mm = low.origin_mm;
  return pred;
}

namespace {

std::array<int64_t, 3> half_stride(const std::array<int64_t, 3>& patch) {
  return {std::max<int64_t>(1, patch[0] / 2), std::max<int64_t>(1, patch[1] / 2),
          std::max<int64_t>(1, patch[2] / 2)};
}

Volume infer_watnet(const models::WatModel<float>& model, const Volume& low) {
  const auto sh = low.shape;
  const int64_t div = int64_t{1} << (model.cfg.depth - 1);
  require(sh[0] % div == 0 && sh[1] % div == 0, errc::config,
          "watnet inference: in-plane dims must be divisible by " +
              std::to_string(div));
  Volume pred = low;
  const int64_t hw = sh[0] * sh[1];
  for (int64_t z = 0; z < sh[2]; ++z) {
    // Edge slices replicate their neighbor.
    const int64_t zm = std::max<int64_t>(0, z - 1);
    const int64_t zp = std::min(sh[2] - 1, z + 1);
    Tensor32 in = Tensor32::zeros({1, 3, sh[0], sh[1]});
    const int64_t zs[3] = {zm, z, zp};
    for (int s = 0; s < 3; ++s) {
      float* dst = in.v.data() + s * hw;
      for (int64_t x = 0; x < sh[0]; ++x)
        for (int64_t y = 0; y < sh[1]; ++y) dst[x * sh[1] + y] = low.at(x, y, zs[s]);
    }
    const auto wavelet_in =
        models::watnet_wavelet_inputs(in, model.cfg.wavelet_levels);
    Tape<float> tape;
    const auto pv = model.params.bind(tape);
    std::vector<Var> wvars;
    for (const auto& t : wavelet_in) wvars.push_back(tape.leaf(t));
    const Var x = tape.leaf(in);
    const Tensor32 out =
        tape.value(models::watnet_forward(tape, model, pv, x, wvars));
    for (int64_t xx = 0; xx < sh[0]; ++xx)
      for (int64_t yy = 0; yy < sh[1]; ++yy)
        pred.at(xx, yy, z) = out.v[xx * sh[1] + yy];
  }
  return pred;
}

}  // namespace

Volume infer_volume(const ModelWeights& weights, const Volume& low,
                    const TrainConfig& cfg) {
  check_arch_tag(weights, variant_name(cfg.variant));
  if (cfg.variant == Variant::watnet) {
    auto model = models::build_watnet<float>(cfg.watnet, 0);
    load_params(model.params, weights);
    return infer_watnet(model, low);
  }
  auto model = models::build_vnet<float>(cfg.vnet, 0);
  load_params(model.params, weights);
  std::array<int64_t, 3> patch = cfg.patch_shape;
  for (int a = 0; a < 3; ++a) patch[a] = std::min(patch[a], low.shape[a]);
  const int64_t div = int64_t{1} << (cfg.vnet.levels - 1);
  for (int a = 0; a < 3; ++a) {
    patch[a] -= patch[a] % div;
    require(patch[a] >= div, errc::config,
            "infer: volume too small for the configured model");
  }
  auto fwd = [&](const Tensor32& in) {
    Tape<float> tape;
    const auto pv = model.params.bind(tape);
    const Var x = tape.leaf(in);
    return tape.value(models::vnet_forward(tape, model, pv, x));
  };
  return infer_sliding(fwd, low, patch, half_stride(patch));
}

// ---------------------------------------------------------------------------

FoldPlan make_loo_plan(int n_subjects) {
  require(n_subjects >= 2, errc::invalid, "loo: need at least 2 subjects");
  FoldPlan plan;
  plan.kind = FoldPlan::Kind::leave_one_out;
  plan.k = n_subjects;
  for (int i = 0; i < n_subjects; ++i) {
    std::vector<int> train;
    for (int j = 0; j < n_subjects; ++j)
      if (j != i) train.push_back(j);
    plan.folds.emplace_back(std::move(train), std::vector<int>{i});
  }
  return plan;
}

FoldPlan make_kfold_plan(int n_subjects, int k, uint64_t seed) {
  require(k >= 2 && k <= n_subjects, errc::invalid,
          "kfold: need 2 <= k <= n_subjects");
  FoldPlan plan;
  plan.kind = FoldPlan::Kind::k_fold;
  plan.k = k;
  std::vector<int> order(n_subjects);
  for (int i = 0; i < n_subjects; ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0xf01d));
  for (int i = n_subjects - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_int(0, i));
    std::swap(order[i], order[j]);
  }
  for (int f = 0; f < k; ++f) {
    std::vector<int> held, train;
    for (int i = 0; i < n_subjects; ++i) {
      if (i % k == f) held.push_back(order[i]);
      else train.push_back(order[i]);
    }
    std::sort(held.begin(), held.end());
    std::sort(train.begin(), train.end());
    plan.folds.emplace_back(std::move(train), std::move(held));
  }
  return plan;
}

static void check_plan(const FoldPlan& plan, size_t n) {
  for (const auto& [train, held] : plan.folds) {
    std::vector<bool> in_train(n, false);
    for (const int i : train) {
      require(i >= 0 && static_cast<size_t>(i) < n, errc::invalid,
              "fold plan: subject index out of range");
      in_train[i] = true;
    }
    for (const int i : held) {
      require(i >= 0 && static_cast<size_t>(i) < n, errc::invalid,
              "fold plan: subject index out of range");
      require(!in_train[i], errc::invalid,
              "fold plan: subject appears on both sides of a fold");
    }
    require(!held.empty() && !train.empty(), errc::invalid,
            "fold plan: empty fold side");
  }
}

std::vector<metrics::MetricReport> cross_validate(
    const FoldPlan& plan, const TrainConfig& cfg,
    const std::vector<PairedSample>& pairs, int seg_classes) {
  return cross_validate_with_conditions(plan, cfg, pairs, seg_classes, {1.0});
}

std::vector<metrics::MetricReport> cross_validate_with_conditions(
    const FoldPlan& plan, const TrainConfig& cfg,
    const std::vector<PairedSample>& pairs, int seg_classes,
    const std::vector<double>& conditions,
    const metrics::SsimOptions& ssim_opt) {
  check_plan(plan, pairs.size());
  require(!conditions.empty(), errc::invalid, "crossval: no conditions");
  std::vector<metrics::MetricReport> reports;
  for (size_t f = 0; f < plan.folds.size(); ++f) {
    const auto& [train_ids, held_ids] = plan.folds[f];
    std::vector<PairedSample> train_set;
    for (const int i : train_ids) train_set.push_back(pairs[i]);

    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = mix_seed(cfg.seed, 0xcf0 + f);
    if (fold_cfg.augmentation) {
      auto aug = *fold_cfg.augmentation;
      aug.seed = mix_seed(cfg.seed, 0xa70 + f);
      train_set = augment::augment_dataset(train_set, aug);
      fold_cfg.augmentation = aug;
    }

    const TrainResult r = cfg.variant == Variant::vnet_gan
                              ? train_gan(fold_cfg, train_set)
                              : train_supervised(fold_cfg, train_set);
    for (const double s : conditions) {
      require(s >= 1.0, errc::invalid, "crossval: condition s must be >= 1");
      for (const int i : held_ids) {
        const Volume input = s == 1.0
                                 ? pairs[i].low_field
                                 : augment::apply_degrade(pairs[i].low_field, s);
        const Volume pred = infer_volume(r.weights, input, cfg);
        reports.push_back(metrics::evaluate_pair(
            pred, pairs[i].high_field, seg_classes, pairs[i].subject_id,
            condition_label(s), static_cast<int>(f), ssim_opt));
      }
    }
  }
  return reports;
}

std::string condition_label(double s) {
  if (s == 1.0) return "original";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "downsampled_s%g", s);
  return buf;
}

std::vector<metrics::MetricReport> downsample_eval(
    const ModelWeights& weights, const std::vector<PairedSample>& pairs,
    double s, const TrainConfig& cfg, int seg_classes,
    const metrics::SsimOptions& ssim_opt) {
  require(s >= 1.0, errc::invalid, "downsample_eval: s must be >= 1");
  std::vector<metrics::MetricReport> reports;
  const std::string cond = condition_label(s);
  for (const auto& p : pairs) {
    const Volume degraded =
        s == 1.0 ? p.low_field : augment::apply_degrade(p.low_field, s);
    const Volume pred = infer_volume(weights, degraded, cfg);
    reports.push_back(metrics::evaluate_pair(pred, p.high_field, seg_classes,
                                             p.subject_id, cond, 0, ssim_opt));
  }
  return reports;
}

// ---------------------------------------------------------------------------

void write_train_log_csv(const TrainLog& log, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  require(f.good(), errc::io, "cannot write " + path);
  f << "step,epoch,phase,total,mae,perceptual,adv,critic\n";
  auto cell = [](const std::map<std::string, double>& terms, const char* key) {
    const auto it = terms.find(key);
    return it == terms.end() ? std::string() : format_double(it->second);
  };
  for (const auto& r : log.rows) {
    f << r.step << ',' << r.epoch << ',' << r.phase << ','
      << format_double(r.total) << ',' << cell(r.terms, "mae") << ','
      << cell(r.terms, "perceptual") << ',' << cell(r.terms, "adv") << ','
      << cell(r.terms, "critic") << '\n';
  }
  require(f.good(), errc::io, "short write to " + path);
}

}  // namespace volsynth::train
