// models.cpp - part of volsynth.
#include "models.hpp"

#include <cmath>

namespace volsynth::models {

namespace {

// Stage depths: 1 conv at the top level, 2 at the second
// level, 3 from there down.
std::vector<int> default_convs(int levels) {
  std::vector<int> c(levels);
  for (int i = 0; i < levels; ++i) c[i] = std::min(i + 1, 3);
  return c;
}

// Residual stages carry no normalization layers, so activation variance
// doubles per stage under plain fan-in init and deep stacks diverge at the
// default learning rate. The tail conv of every residual stage is therefore
// initialized at a reduced gain, keeping each stage near the identity at
// the start. The gain stays moderate: Adam's steps are scale-free, and
// weights initialized far smaller than everything else just random-walk.
constexpr double kResidualTailGain = 0.5;
constexpr double kHeadGain = 0.25;

template <class Real>
struct Builder {
  ParamSet<Real>& params;
  Rng rng;

  Builder(ParamSet<Real>& p, uint64_t seed) : params(p), rng(seed) {}

  ConvSpec conv(const std::string& name, int64_t co, int64_t ci,
                std::array<int64_t, 3> k, int stride, int pad, bool prelu,
                int spatial_rank, double init_gain = 1.0) {
    ConvSpec s;
    s.stride = stride;
    s.pad = pad;
    std::vector<int64_t> wsh{co, ci};
    int64_t fan_in = ci;
    for (int a = 3 - spatial_rank; a < 3; ++a) {
      wsh.push_back(k[a]);
      fan_in *= k[a];
    }
    auto w = ad::init_uniform_fan_in<Real>(wsh, fan_in, rng);
    if (init_gain != 1.0)
      for (auto& f : w.v) f = static_cast<Real>(f * init_gain);
    s.w = params.add(name + ".w", std::move(w));
    s.b = params.add(name + ".b", TensorT<Real>::zeros({co}));
    if (prelu)
      s.a = params.add(name + ".a", TensorT<Real>({co}, Real(0.25)));
    return s;
  }
};

template <class Real>
Var apply_conv(Tape<Real>& t, const std::vector<Var>& pv, const ConvSpec& s,
               Var x) {
  Var y = t.conv(x, pv[s.w], pv[s.b], s.stride, s.pad);
  if (s.a >= 0) y = t.prelu(y, pv[s.a]);
  return y;
}

}  // namespace

std::vector<int> VNetConfig::resolved_convs() const {
  if (convs_per_level.empty()) return default_convs(levels);
  require(static_cast<int>(convs_per_level.size()) == levels, errc::config,
          "convs_per_level must have one entry per level");
  for (const int c : convs_per_level)
    require(c >= 1, errc::config, "convs_per_level entries must be >= 1");
  return convs_per_level;
}

void VNetConfig::validate() const {
  require(levels >= 2, errc::config, "vnet: levels must be >= 2");
  require(base_channels >= 1, errc::config, "vnet: base_channels must be >= 1");
  require(in_channels >= 1 && out_channels >= 1, errc::config,
          "vnet: channel counts must be >= 1");
  for (const int k : kernel)
    require(k >= 1 && k % 2 == 1, errc::config,
            "vnet: kernel dims must be odd and >= 1");
  (void)resolved_convs();
}

template <class Real>
VNetModel<Real> build_vnet(const VNetConfig& cfg, uint64_t seed) {
  cfg.validate();
  VNetModel<Real> m;
  m.cfg = cfg;
  Builder<Real> b(m.params, mix_seed(seed, 0x5ee0));
  const auto convs = cfg.resolved_convs();
  const std::array<int64_t, 3> k{cfg.kernel[0], cfg.kernel[1], cfg.kernel[2]};
  const int pad = cfg.kernel[0] / 2;

  m.enc_stage.resize(cfg.levels);
  for (int lvl = 0; lvl < cfg.levels; ++lvl) {
    const int64_t c = cfg.channels_at(lvl);
    int64_t ci = lvl == 0 ? cfg.in_channels : c;
    for (int j = 0; j < convs[lvl]; ++j) {
      const double gain = j + 1 == convs[lvl] ? kResidualTailGain : 1.0;
      m.enc_stage[lvl].push_back(b.conv(
          "enc" + std::to_string(lvl) + ".conv" + std::to_string(j), c, ci, k,
          1, pad, true, 3, gain));
      ci = c;
    }
    if (lvl + 1 < cfg.levels)
      m.down.push_back(b.conv("down" + std::to_string(lvl),
                              cfg.channels_at(lvl + 1), c, {2, 2, 2}, 2, 0,
                              true, 3));
  }
  for (int lvl = cfg.levels - 2; lvl >= 0; --lvl) {
    const int64_t c = cfg.channels_at(lvl);
    m.up.push_back(b.conv("up" + std::to_string(lvl), c, cfg.channels_at(lvl + 1),
                          {3, 3, 3}, 1, 1, true, 3));
    std::vector<ConvSpec> stage;
    int64_t ci = 2 * c;  // skip concat
    for (int j = 0; j < convs[lvl]; ++j) {
      const double gain = j + 1 == convs[lvl] ? kResidualTailGain : 1.0;
      stage.push_back(b.conv(
          "dec" + std::to_string(lvl) + ".conv" + std::to_string(j), c, ci, k,
          1, pad, true, 3, gain));
      ci = c;
    }
    m.dec_stage.push_back(std::move(stage));
  }
  m.head = b.conv("head", cfg.out_channels, cfg.base_channels, {1, 1, 1}, 1, 0,
                  false, 3, kHeadGain);
  return m;
}

static void check_divisible(const std::vector<int64_t>& shape, int levels,
                            const char* what) {
  const int64_t div = int64_t{1} << (levels - 1);
  for (size_t a = 2; a < shape.size(); ++a)
    require(shape[a] % div == 0 && shape[a] >= div, errc::shape,
            std::string(what) + ": spatial dims " + shape_str(shape) +
                " must be divisible by " + std::to_string(div));
}

template <class Real>
Var vnet_forward(Tape<Real>& tape, const VNetModel<Real>& m,
                 const std::vector<Var>& pv, Var x) {
  const auto& xs = tape.value(x).shape;
  require(xs.size() == 5, errc::shape, "vnet: expected (N,C,X,Y,Z) input");
  require(xs[1] == m.cfg.in_channels, errc::shape, "vnet: channel mismatch");
  check_divisible(xs, m.cfg.levels, "vnet");

  std::vector<Var> skips;
  Var cur = x;
  for (int lvl = 0; lvl < m.cfg.levels; ++lvl) {
    Var t = cur;
    for (const auto& cs : m.enc_stage[lvl]) t = apply_conv(tape, pv, cs, t);
    // Residual stage: single-channel stage inputs are tiled across channels.
    const int64_t in_c = tape.value(cur).shape[1];
    const int64_t out_c = tape.value(t).shape[1];
    if (in_c == out_c) {
      cur = tape.add(t, cur);
    } else if (in_c == 1) {
      cur = tape.add(t, tape.broadcast_channels(cur, out_c));
    } else {
      cur = t;
    }
    if (lvl + 1 < m.cfg.levels) {
      skips.push_back(cur);
      cur = apply_conv(tape, pv, m.down[lvl], cur);
    }
  }
  for (int i = 0; i < m.cfg.levels - 1; ++i) {
    const int lvl = m.cfg.levels - 2 - i;
    Var upped = apply_conv(tape, pv, m.up[i], tape.upsample_nn(cur, 2));
    Var t = tape.concat_channels({upped, skips[lvl]});
    for (const auto& cs : m.dec_stage[i]) t = apply_conv(tape, pv, cs, t);
    cur = tape.add(t, upped);
  }
  return apply_conv(tape, pv, m.head, cur);
}

// ---------------------------------------------------------------------------

template <class Real>
CriticModel<Real> build_critic(const CriticConfig& cfg, uint64_t seed) {
  cfg.encoder.validate();
  CriticModel<Real> m;
  m.cfg = cfg;
  Builder<Real> b(m.params, mix_seed(seed, 0xc217));
  const auto& e = cfg.encoder;
  const auto convs = e.resolved_convs();
  const std::array<int64_t, 3> k{e.kernel[0], e.kernel[1], e.kernel[2]};
  const int pad = e.kernel[0] / 2;

  m.enc_stage.resize(e.levels);
  for (int lvl = 0; lvl < e.levels; ++lvl) {
    const int64_t c = e.channels_at(lvl);
    int64_t ci = lvl == 0 ? e.in_channels : c;
    for (int j = 0; j < convs[lvl]; ++j) {
      const double gain = j + 1 == convs[lvl] ? kResidualTailGain : 1.0;
      m.enc_stage[lvl].push_back(b.conv(
          "enc" + std::to_string(lvl) + ".conv" + std::to_string(j), c, ci, k,
          1, pad, true, 3, gain));
      ci = c;
    }
    if (lvl + 1 < e.levels)
      m.down.push_back(b.conv("down" + std::to_string(lvl),
                              e.channels_at(lvl + 1), c, {2, 2, 2}, 2, 0, true,
                              3));
  }
  const int64_t bott = e.channels_at(e.levels - 1);
  m.head_w = m.params.add(
      "head.w", ad::init_uniform_fan_in<Real>({1, bott}, bott, b.rng));
  m.head_b = m.params.add("head.b", TensorT<Real>::zeros({1}));
  return m;
}

template <class Real>
Var critic_forward(Tape<Real>& tape, const CriticModel<Real>& m,
                   const std::vector<Var>& pv, Var x) {
  const auto& xs = tape.value(x).shape;
  require(xs.size() == 5, errc::shape, "critic: expected (N,C,X,Y,Z) input");
  require(xs[1] == m.cfg.encoder.in_channels, errc::shape,
          "critic: channel mismatch");
  check_divisible(xs, m.cfg.encoder.levels, "critic");

  Var cur = x;
  for (int lvl = 0; lvl < m.cfg.encoder.levels; ++lvl) {
    Var t = cur;
    for (const auto& cs : m.enc_stage[lvl]) t = apply_conv(tape, pv, cs, t);
    const int64_t in_c = tape.value(cur).shape[1];
    const int64_t out_c = tape.value(t).shape[1];
    if (in_c == out_c) {
      cur = tape.add(t, cur);
    } else if (in_c == 1) {
      cur = tape.add(t, tape.broadcast_channels(cur, out_c));
    } else {
      cur = t;
    }
    if (lvl + 1 < m.cfg.encoder.levels) cur = apply_conv(tape, pv, m.down[lvl], cur);
  }
  Var pooled = tape.relu(tape.global_sum_pool(cur));
  return tape.linear(pooled, pv[m.head_w], pv[m.head_b]);
}

// ---------------------------------------------------------------------------

template <class Real>
PerceptualEncoder<Real> build_perceptual_encoder(const PerceptualConfig& cfg) {
  require(cfg.stages >= 1, errc::config, "perceptual: stages must be >= 1");
  require(cfg.feature_layer >= 1 && cfg.feature_layer <= cfg.stages, errc::config,
          "perceptual: feature_layer out of range");
  PerceptualEncoder<Real> m;
  m.cfg = cfg;
  Builder<Real> b(m.params, mix_seed(cfg.seed, 0x9e9c));
  int64_t ci = cfg.in_channels;
  for (int s = 0; s < cfg.stages; ++s) {
    const int64_t co = cfg.base_channels << s;
    m.stage.push_back(b.conv("stage" + std::to_string(s), co, ci, {3, 3, 3}, 2,
                             1, false, 3));
    ci = co;
  }
  m.params.set_requires_grad(false);  // frozen by contract
  return m;
}

template <class Real>
Var perceptual_features(Tape<Real>& tape, const PerceptualEncoder<Real>& m,
                        const std::vector<Var>& pv, Var x) {
  const auto& xs = tape.value(x).shape;
  require(xs.size() == 5, errc::shape, "perceptual: expected (N,C,X,Y,Z) input");
  const int64_t div = int64_t{1} << m.cfg.feature_layer;
  for (size_t a = 2; a < xs.size(); ++a)
    require(xs[a] % div == 0, errc::shape,
            "perceptual: spatial dims must be divisible by 2^feature_layer");
  Var cur = x;
  Var feat = x;
  for (int s = 0; s < m.cfg.stages; ++s) {
    cur = tape.relu(tape.conv(cur, pv[m.stage[s].w], pv[m.stage[s].b],
                              m.stage[s].stride, m.stage[s].pad));
    if (s + 1 == m.cfg.feature_layer) feat = cur;
  }
  return feat;
}

// ---------------------------------------------------------------------------

void WatConfig::validate() const {
  require(in_slices == 3, errc::config, "watnet: input channel count must be 3");
  require(depth >= 2, errc::config, "watnet: depth must be >= 2");
  require(width >= 1, errc::config, "watnet: width must be >= 1");
  require(wavelet_levels >= 1 && wavelet_levels <= depth - 1, errc::config,
          "watnet: wavelet_levels must be in [1, depth-1]");
}

template <class Real>
WatModel<Real> build_watnet(const WatConfig& cfg, uint64_t seed) {
  cfg.validate();
  WatModel<Real> m;
  m.cfg = cfg;
  Builder<Real> b(m.params, mix_seed(seed, 0x3a7e));
  const std::array<int64_t, 3> k{1, 3, 3};
  const int64_t w = cfg.width;

  m.enc_stage.resize(cfg.depth);
  for (int lvl = 0; lvl < cfg.depth; ++lvl) {
    int64_t ci = lvl == 0 ? cfg.in_slices : w;
    if (lvl >= 1 && lvl <= cfg.wavelet_levels) ci += 4;  // injected subbands
    for (int j = 0; j < 2; ++j) {
      m.enc_stage[lvl].push_back(b.conv(
          "enc" + std::to_string(lvl) + ".conv" + std::to_string(j), w, ci, k,
          1, 1, true, 2));
      ci = w;
    }
    if (lvl + 1 < cfg.depth)
      m.down.push_back(b.conv("down" + std::to_string(lvl), w, w, {1, 2, 2}, 2,
                              0, true, 2));
  }
  for (int lvl = cfg.depth - 2; lvl >= 0; --lvl) {
    m.up.push_back(
        b.conv("up" + std::to_string(lvl), w, w, {1, 3, 3}, 1, 1, true, 2));
    std::vector<ConvSpec> stage;
    int64_t ci = 2 * w;
    for (int j = 0; j < 2; ++j) {
      const double gain = j == 1 ? kResidualTailGain : 1.0;
      stage.push_back(b.conv(
          "dec" + std::to_string(lvl) + ".conv" + std::to_string(j), w, ci, k,
          1, 1, true, 2, gain));
      ci = w;
    }
    m.dec_stage.push_back(std::move(stage));
  }
  m.head = b.conv("head", 1, w, {1, 1, 1}, 1, 0, false, 2, kHeadGain);
  return m;
}

template <class Real>
std::vector<TensorT<Real>> watnet_wavelet_inputs(const TensorT<Real>& slices,
                                                 int wavelet_levels) {
  require(slices.rank() == 4 && slices.shape[1] == 3, errc::shape,
          "watnet: expected (N,3,H,W) slice stacks");
  const int64_t N = slices.shape[0], H = slices.shape[2], W = slices.shape[3];
  std::vector<TensorT<Real>> out;
  for (int lvl = 1; lvl <= wavelet_levels; ++lvl) {
    const int64_t h = H >> lvl, w = W >> lvl;
    require(h >= 1 && w >= 1 && (H % (int64_t{1} << lvl)) == 0 &&
                (W % (int64_t{1} << lvl)) == 0,
            errc::shape, "watnet: slice dims not divisible by 2^level");
    out.push_back(TensorT<Real>::zeros({N, 4, h, w}));
  }
  std::vector<double> center(H * W);
  for (int64_t n = 0; n < N; ++n) {
    const Real* src = slices.v.data() + (n * 3 + 1) * H * W;  // center slice
    for (int64_t i = 0; i < H * W; ++i) center[i] = static_cast<double>(src[i]);
    const HaarPyramid pyr = haar_dwt2d(center, H, W, wavelet_levels);
    for (int lvl = 1; lvl <= wavelet_levels; ++lvl) {
      const auto& L = pyr.levels[lvl - 1];
      const int64_t hw = L.rows * L.cols;
      Real* base = out[lvl - 1].v.data() + n * 4 * hw;
      // Approximation at this scale comes from an lvl-deep analysis.
      const HaarPyramid sub = haar_dwt2d(center, H, W, lvl);
      for (int64_t i = 0; i < hw; ++i) {
        base[i] = static_cast<Real>(sub.ll[i]);
        base[hw + i] = static_cast<Real>(L.lh[i]);
        base[2 * hw + i] = static_cast<Real>(L.hl[i]);
        base[3 * hw + i] = static_cast<Real>(L.hh[i]);
      }
    }
  }
  return out;
}

template <class Real>
Var watnet_forward(Tape<Real>& tape, const WatModel<Real>& m,
                   const std::vector<Var>& pv, Var x,
                   const std::vector<Var>& wavelets) {
  const auto& xs = tape.value(x).shape;
  require(xs.size() == 4, errc::shape, "watnet: expected (N,C,H,W) input");
  require(xs[1] == m.cfg.in_slices, errc::shape, "watnet: need 3 input slices");
  const int64_t div = int64_t{1} << (m.cfg.depth - 1);
  require(xs[2] % div == 0 && xs[3] % div == 0, errc::shape,
          "watnet: slice dims must be divisible by 2^(depth-1)");
  require(static_cast<int>(wavelets.size()) == m.cfg.wavelet_levels, errc::shape,
          "watnet: wrong number of wavelet inputs");

  std::vector<Var> skips;
  Var cur = x;
  for (int lvl = 0; lvl < m.cfg.depth; ++lvl) {
    Var t = cur;
    if (lvl >= 1 && lvl <= m.cfg.wavelet_levels)
      t = tape.concat_channels({t, wavelets[lvl - 1]});
    for (const auto& cs : m.enc_stage[lvl]) t = apply_conv(tape, pv, cs, t);
    cur = t;
    if (lvl + 1 < m.cfg.depth) {
      skips.push_back(cur);
      cur = apply_conv(tape, pv, m.down[lvl], cur);
    }
  }
  for (int i = 0; i < m.cfg.depth - 1; ++i) {
    const int lvl = m.cfg.depth - 2 - i;
    Var upped = apply_conv(tape, pv, m.up[i], tape.upsample_nn(cur, 2));
    Var t = tape.concat_channels({upped, skips[lvl]});
    for (const auto& cs : m.dec_stage[i]) t = apply_conv(tape, pv, cs, t);
    cur = tape.add(t, upped);
  }
  return apply_conv(tape, pv, m.head, cur);
}

// ---------------------------------------------------------------------------

#define VOLSYNTH_INSTANTIATE(Real)                                             \
  template VNetModel<Real> build_vnet<Real>(const VNetConfig&, uint64_t);      \
  template Var vnet_forward<Real>(Tape<Real>&, const VNetModel<Real>&,         \
                                  const std::vector<Var>&, Var);               \
  template CriticModel<Real> build_critic<Real>(const CriticConfig&, uint64_t);\
  template Var critic_forward<Real>(Tape<Real>&, const CriticModel<Real>&,     \
                                    const std::vector<Var>&, Var);             \
  template PerceptualEncoder<Real> build_perceptual_encoder<Real>(             \
      const PerceptualConfig&);                                                \
  template Var perceptual_features<Real>(Tape<Real>&,                          \
                                         const PerceptualEncoder<Real>&,       \
                                         const std::vector<Var>&, Var);        \
  template WatModel<Real> build_watnet<Real>(const WatConfig&, uint64_t);      \
  template std::vector<TensorT<Real>> watnet_wavelet_inputs<Real>(             \
      const TensorT<Real>&, int);                                              \
  template Var watnet_forward<Real>(Tape<Real>&, const WatModel<Real>&,        \
                                    const std::vector<Var>&, Var,              \
                                    const std::vector<Var>&);

VOLSYNTH_INSTANTIATE(float)
VOLSYNTH_INSTANTIATE(double)
#undef VOLSYNTH_INSTANTIATE

}  // namespace volsynth::models
