// losses.hpp - part of volsynth: the three training objectives and their
// weighted combination.
#pragma once

#include <map>
#include <optional>
#include <string>

#include "models.hpp"
#include "tape.hpp"

namespace volsynth::losses {

using ad::Tape;
using ad::Var;

struct LossWeights {
  double w_mae = 1.0;
  double w_perceptual = 1.0;
  double w_adv = 1.0;
};

struct LossBreakdown {
  double total = 0.0;
  std::map<std::string, double> terms;  // unweighted term values
};

// Mean absolute difference over all elements.
template <class Real>
Var mae_loss(Tape<Real>& tape, Var pred, Var target) {
  return tape.mean_abs_diff(pred, target);
}

// Mean absolute difference of encoder features. The encoder is frozen;
// gradients reach pred only.
template <class Real>
Var perceptual_loss(Tape<Real>& tape, const models::PerceptualEncoder<Real>& enc,
                    const std::vector<Var>& enc_pv, Var pred, Var target) {
  require(tape.value(pred).same_shape(tape.value(target)), errc::shape,
          "perceptual_loss: operand shape mismatch");
  const Var fp = models::perceptual_features(tape, enc, enc_pv, pred);
  const Var ft = models::perceptual_features(tape, enc, enc_pv, target);
  return tape.mean_abs_diff(fp, ft);
}

// Wasserstein critic objective: -(mean D(real) - mean D(fake)); the critic
// minimizes this.
template <class Real>
Var critic_loss(Tape<Real>& tape, const models::CriticModel<Real>& critic,
                const std::vector<Var>& critic_pv, Var real, Var fake) {
  require(tape.value(real).shape[0] == tape.value(fake).shape[0], errc::shape,
          "critic_loss: batch sizes differ");
  const Var dr = tape.mean(models::critic_forward(tape, critic, critic_pv, real));
  const Var df = tape.mean(models::critic_forward(tape, critic, critic_pv, fake));
  return tape.sub(df, dr);
}

// Generator-side adversarial term: -mean D(fake). The real-image term of the
// Wasserstein loss is constant in generator parameters and is dropped.
template <class Real>
Var generator_adv_loss(Tape<Real>& tape, const models::CriticModel<Real>& critic,
                       const std::vector<Var>& critic_pv, Var fake) {
  const Var df = tape.mean(models::critic_forward(tape, critic, critic_pv, fake));
  return tape.scale(df, -1.0);
}

// Weighted sum of the provided terms. Which terms are required is the
// trainer's contract per variant; this only combines.
template <class Real>
std::pair<Var, LossBreakdown> combined_loss(
    Tape<Real>& tape, const LossWeights& w, Var mae, std::optional<Var> perceptual,
    std::optional<Var> adversarial) {
  require(w.w_mae > 0.0, errc::config, "combined_loss: w_mae must be positive");
  require(w.w_perceptual >= 0.0 && w.w_adv >= 0.0, errc::config,
          "combined_loss: weights must be >= 0");
  LossBreakdown bd;
  bd.terms["mae"] = static_cast<double>(tape.value(mae).v[0]);
  Var total = tape.scale(mae, w.w_mae);
  if (perceptual) {
    bd.terms["perceptual"] = static_cast<double>(tape.value(*perceptual).v[0]);
    total = tape.add(total, tape.scale(*perceptual, w.w_perceptual));
  }
  if (adversarial) {
    bd.terms["adv"] = static_cast<double>(tape.value(*adversarial).v[0]);
    total = tape.add(total, tape.scale(*adversarial, w.w_adv));
  }
  bd.total = static_cast<double>(tape.value(total).v[0]);
  return {total, bd};
}

}  // namespace volsynth::losses
