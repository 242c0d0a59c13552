// models.hpp - part of volsynth: the model zoo. V-Net generator with a
// nearest-neighbor-upsampling decoder, a half-V-Net Wasserstein critic, a
// frozen strided-conv perceptual encoder, and a simplified 2D wavelet-
// injection baseline.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "haar.hpp"
#include "optim.hpp"
#include "tape.hpp"

namespace volsynth::models {

using ad::ParamSet;
using ad::Tape;
using ad::Var;

struct VNetConfig {
  int levels = 5;
  int base_channels = 16;
  std::vector<int> convs_per_level;  // empty -> 1,2,3,3,... per stage
  std::array<int, 3> kernel{5, 5, 5};
  int in_channels = 1;
  int out_channels = 1;

  std::vector<int> resolved_convs() const;
  int channels_at(int level) const { return base_channels << level; }
  void validate() const;
};

// Conv layer bookkeeping: indices into the model's ParamSet, -1 = absent.
struct ConvSpec {
  int w = -1, b = -1, a = -1;  // a: per-channel PReLU slopes
  int stride = 1, pad = 0;
};

template <class Real>
struct VNetModel {
  VNetConfig cfg;
  ParamSet<Real> params;
  std::vector<std::vector<ConvSpec>> enc_stage;  // [levels]
  std::vector<ConvSpec> down;                    // [levels-1], stride 2
  std::vector<ConvSpec> up;                      // [levels-1], after upsample
  std::vector<std::vector<ConvSpec>> dec_stage;  // [levels-1]
  ConvSpec head;                                 // 1x1x1 projection
};

template <class Real>
VNetModel<Real> build_vnet(const VNetConfig& cfg, uint64_t seed);

// Spatial dims of x must be divisible by 2^(levels-1); output shape == input
// shape.
template <class Real>
Var vnet_forward(Tape<Real>& tape, const VNetModel<Real>& m,
                 const std::vector<Var>& pv, Var x);

// ---------------------------------------------------------------------------

struct CriticConfig {
  VNetConfig encoder;  // out_channels ignored
};

template <class Real>
struct CriticModel {
  CriticConfig cfg;
  ParamSet<Real> params;
  std::vector<std::vector<ConvSpec>> enc_stage;
  std::vector<ConvSpec> down;
  int head_w = -1, head_b = -1;  // linear decision layer
};

template <class Real>
CriticModel<Real> build_critic(const CriticConfig& cfg, uint64_t seed);

// One unconstrained real per batch item: (N,1).
template <class Real>
Var critic_forward(Tape<Real>& tape, const CriticModel<Real>& m,
                   const std::vector<Var>& pv, Var x);

// ---------------------------------------------------------------------------

struct PerceptualConfig {
  int stages = 3;  // stride-2 conv stages
  int base_channels = 8;
  int feature_layer = 3;  // 1-based; features taken after this stage
  int in_channels = 1;
  uint64_t seed = 97;  // seeded-random frozen weights unless loaded from file
};

template <class Real>
struct PerceptualEncoder {
  PerceptualConfig cfg;
  ParamSet<Real> params;  // requires_grad = false throughout
  std::vector<ConvSpec> stage;
};

template <class Real>
PerceptualEncoder<Real> build_perceptual_encoder(const PerceptualConfig& cfg);

// Deterministic feature extraction; gradients reach the input, never the
// encoder weights.
template <class Real>
Var perceptual_features(Tape<Real>& tape, const PerceptualEncoder<Real>& m,
                        const std::vector<Var>& pv, Var x);

// ---------------------------------------------------------------------------

struct WatConfig {
  int depth = 4;
  int width = 64;
  int wavelet_levels = 3;  // injected at encoder levels 1..wavelet_levels
  int in_slices = 3;

  void validate() const;
};

template <class Real>
struct WatModel {
  WatConfig cfg;
  ParamSet<Real> params;
  std::vector<std::vector<ConvSpec>> enc_stage;  // [depth]
  std::vector<ConvSpec> down;                    // [depth-1]
  std::vector<ConvSpec> up;                      // [depth-1]
  std::vector<std::vector<ConvSpec>> dec_stage;  // [depth-1]
  ConvSpec head;
};

template <class Real>
WatModel<Real> build_watnet(const WatConfig& cfg, uint64_t seed);

// Haar subbands of the center slice, one (N,4,H/2^l,W/2^l) tensor per
// injected level. slices is (N,3,H,W).
template <class Real>
std::vector<TensorT<Real>> watnet_wavelet_inputs(const TensorT<Real>& slices,
                                                 int wavelet_levels);

// wavelets[l] are bound as constant leaves by the caller; output is
// (N,1,H,W): the predicted center slice.
template <class Real>
Var watnet_forward(Tape<Real>& tape, const WatModel<Real>& m,
                   const std::vector<Var>& pv, Var x,
                   const std::vector<Var>& wavelets);

// ---------------------------------------------------------------------------

template <class Model>
int64_t count_params(const Model& m) {
  return m.params.trainable_count();
}

}  // namespace volsynth::models
