// optim.hpp - part of volsynth: named parameters, Adam, weight clipping,
// finite-difference gradient checking.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tape.hpp"
#include "tensor.hpp"

namespace volsynth::ad {

template <class Real>
struct Param {
  std::string name;
  TensorT<Real> value;
  bool requires_grad = true;
};

template <class Real>
class ParamSet {
 public:
  int add(std::string name, TensorT<Real> value, bool requires_grad = true) {
    for (const auto& p : items_)
      require(p.name != name, errc::invalid, "duplicate parameter name: " + name);
    items_.push_back({std::move(name), std::move(value), requires_grad});
    return static_cast<int>(items_.size()) - 1;
  }

  Param<Real>& operator[](int i) { return items_[i]; }
  const Param<Real>& operator[](int i) const { return items_[i]; }
  size_t size() const { return items_.size(); }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  int64_t trainable_count() const {
    int64_t n = 0;
    for (const auto& p : items_)
      if (p.requires_grad) n += p.value.numel();
    return n;
  }

  // Registers every parameter on the tape, in order.
  std::vector<Var> bind(Tape<Real>& tape) const {
    std::vector<Var> vars;
    vars.reserve(items_.size());
    for (const auto& p : items_) vars.push_back(tape.leaf(p.value, p.requires_grad));
    return vars;
  }

  void set_requires_grad(bool flag) {
    for (auto& p : items_) p.requires_grad = flag;
  }

 private:
  std::vector<Param<Real>> items_;
};

// Fan-in-scaled uniform init (He-style bound sqrt(6/fan_in)).
template <class Real>
TensorT<Real> init_uniform_fan_in(std::vector<int64_t> shape, int64_t fan_in,
                                  Rng& rng) {
  TensorT<Real> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& f : t.v) f = static_cast<Real>(rng.uniform(-bound, bound));
  return t;
}

template <class Real>
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step = 0;
  std::vector<std::vector<double>> m, v;  // first/second moments per parameter

  void init(const ParamSet<Real>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.value.v.size(), 0.0);
      v.emplace_back(p.value.v.size(), 0.0);
    }
    step = 0;
  }
};

// Standard bias-corrected Adam. grads[i] must match params[i]; frozen
// parameters are skipped.
template <class Real>
void adam_step(ParamSet<Real>& params, const std::vector<TensorT<Real>>& grads,
               AdamState<Real>& state, double lr) {
  require(lr > 0.0, errc::invalid, "adam: lr must be positive");
  require(grads.size() == params.size() && state.m.size() == params.size(),
          errc::invalid, "adam: parameter/gradient/state size mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[static_cast<int>(i)];
    if (!p.requires_grad) continue;
    require(grads[i].numel() == p.value.numel(), errc::invalid,
            "adam: gradient shape mismatch for " + p.name);
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (size_t j = 0; j < p.value.v.size(); ++j) {
      const double g = static_cast<double>(grads[i].v[j]);
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value.v[j] = static_cast<Real>(static_cast<double>(p.value.v[j]) -
                                       lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

template <class Real>
void clip_weights(ParamSet<Real>& params, double c) {
  require(c > 0.0, errc::invalid, "clip_weights: c must be positive");
  const Real lo = static_cast<Real>(-c), hi = static_cast<Real>(c);
  for (auto& p : params) {
    if (!p.requires_grad) continue;
    for (auto& f : p.value.v) f = f < lo ? lo : (f > hi ? hi : f);
  }
}

// ---------------------------------------------------------------------------
// Central finite-difference gradient checking (double precision).
//
// build(tape, leaves) must construct a scalar loss from leaves registered in
// the order of `inputs`. Relative error uses max(|fd|, |tape|, 1e-6) as the
// denominator so true-zero gradients do not blow up on finite-difference
// noise.

struct GradCheckOptions {
  double h = 1e-5;
  int max_coords_per_input = 0;  // 0 = every coordinate
  uint64_t seed = 7;
  // Relative-error denominator floor. Whole-network losses run millions of
  // flops per evaluation, so the finite difference carries a rounding noise
  // floor of ~1e-9 absolute; coordinates whose true gradient sits below the
  // floor are compared at this absolute scale instead of blowing up.
  double denom_floor = 1e-6;
};

using BuildLoss = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

inline double grad_check(std::vector<Tensor64> inputs, const BuildLoss& build,
                         const GradCheckOptions& opt = {}) {
  // Reference gradients from one taped pass.
  std::vector<Tensor64> tape_grads;
  {
    Tape<double> tape;
    std::vector<Var> leaves;
    leaves.reserve(inputs.size());
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t, true));
    const Var loss = build(tape, leaves);
    tape.backward(loss);
    for (const Var v : leaves) tape_grads.push_back(tape.grad(v));
  }

  auto eval = [&](const std::vector<Tensor64>& pts) {
    Tape<double> tape;
    std::vector<Var> leaves;
    leaves.reserve(pts.size());
    for (const auto& t : pts) leaves.push_back(tape.leaf(t, false));
    const Var loss = build(tape, leaves);
    return static_cast<double>(tape.value(loss).v[0]);
  };

  Rng rng(opt.seed);
  double worst = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const int64_t n = inputs[i].numel();
    std::vector<int64_t> coords;
    if (opt.max_coords_per_input <= 0 || n <= opt.max_coords_per_input) {
      coords.resize(n);
      for (int64_t j = 0; j < n; ++j) coords[j] = j;
    } else {
      for (int k = 0; k < opt.max_coords_per_input; ++k)
        coords.push_back(rng.uniform_int(0, n - 1));
    }
    for (const int64_t j : coords) {
      const double orig = inputs[i].v[j];
      inputs[i].v[j] = orig + opt.h;
      const double fp = eval(inputs);
      inputs[i].v[j] = orig - opt.h;
      const double fm = eval(inputs);
      inputs[i].v[j] = orig;
      const double fd = (fp - fm) / (2.0 * opt.h);
      const double tg = tape_grads[i].v[j];
      const double denom = std::max({std::abs(fd), std::abs(tg), opt.denom_floor});
      worst = std::max(worst, std::abs(fd - tg) / denom);
    }
  }
  return worst;
}

}  // namespace volsynth::ad
