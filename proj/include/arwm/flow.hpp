// Copyright (c) 2026 ARWM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Conditional flow-matching core: linear interpolation paths, constant
// velocity targets, MSE objective, explicit Euler integration over a partial
// flow-time range, classifier-free guidance, and the noisy-history
// augmentation used to make downstream consumers tolerate partially
// denoised context.
#pragma once

#include <functional>
#include <optional>

#include "arwm/rng.hpp"
#include "arwm/tensor.hpp"

namespace arwm {

template <class R>
struct FlowStateT {
  TensorT<R> x_s;  // noised sample at flow time s
  R s = R(0);
  TensorT<R> eps;  // source noise, same shape as x_s
};

using FlowState = FlowStateT<float>;

struct GuidanceConfig {
  double video_scale = 5.0;
  double action_scale = 1.0;
  double cond_dropout_prob = 0.1;
};

// x_s = (1-s) * eps + s * x1
template <class R>
FlowStateT<R> interpolate(const TensorT<R>& x1, const TensorT<R>& eps, R s) {
  check_dims(x1.shape() == eps.shape(), "interpolate shape mismatch");
  check(s >= R(0) && s <= R(1), "flow time outside [0,1]");
  TensorT<R> x = TensorT<R>::zeros(x1.shape());
  for (int64_t i = 0; i < x1.numel(); ++i)
    x.data()[i] = (R(1) - s) * eps.data()[i] + s * x1.data()[i];
  return {x, s, eps};
}

// Velocity along the linear path; constant in s.
template <class R>
TensorT<R> velocity_target(const TensorT<R>& x1, const TensorT<R>& eps) {
  check_dims(x1.shape() == eps.shape(), "velocity_target shape mismatch");
  TensorT<R> v = TensorT<R>::zeros(x1.shape());
  for (int64_t i = 0; i < x1.numel(); ++i)
    v.data()[i] = x1.data()[i] - eps.data()[i];
  return v;
}

template <class R>
TensorT<R> fm_loss(const TensorT<R>& pred_v, const TensorT<R>& target_v) {
  return mse(pred_v, target_v);
}

enum class FlowTimeSampler { kUniform };

template <class R = double>
R sample_flow_time(FlowTimeSampler sampler, Rng& rng) {
  check(sampler == FlowTimeSampler::kUniform, "unknown flow time sampler");
  return static_cast<R>(rng.uniform());
}

// Explicit Euler over uniform steps; field is v(x, s).
template <class R>
TensorT<R> euler_integrate(
    const std::function<TensorT<R>(const TensorT<R>&, R)>& field,
    const TensorT<R>& x0, R s_start, R s_stop, int n_steps) {
  check(n_steps >= 1, "euler_integrate requires n_steps >= 1");
  check(s_start < s_stop && s_stop <= R(1), "bad integration range");
  const R h = (s_stop - s_start) / static_cast<R>(n_steps);
  TensorT<R> x = x0.detach();
  for (int k = 0; k < n_steps; ++k) {
    const R s = s_start + h * static_cast<R>(k);
    TensorT<R> v = field(x, s);
    check_dims(v.shape() == x.shape(), "field output shape mismatch");
    for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] += h * v.data()[i];
  }
  return x;
}

// v_uncond + scale * (v_cond - v_uncond)
template <class R>
TensorT<R> cfg_combine(const TensorT<R>& v_cond, const TensorT<R>& v_uncond,
                       R scale) {
  check_dims(v_cond.shape() == v_uncond.shape(), "cfg_combine shape mismatch");
  TensorT<R> out = TensorT<R>::zeros(v_cond.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out.data()[i] =
        v_uncond.data()[i] + scale * (v_cond.data()[i] - v_uncond.data()[i]);
  return out;
}

// With probability p, re-noise the history along the flow path at
// s_aug ~ U[s_lo, s_hi] with fresh noise; otherwise pass it through.
template <class R>
std::pair<TensorT<R>, std::optional<R>> noisy_history_augment(
    const TensorT<R>& z_hist, double p, double s_lo, double s_hi, Rng& rng) {
  check(0.0 <= s_lo && s_lo <= s_hi && s_hi <= 1.0, "bad s_aug range");
  if (!rng.bernoulli(p)) return {z_hist, std::nullopt};
  const R s_aug = static_cast<R>(rng.uniform(s_lo, s_hi));
  TensorT<R> out = TensorT<R>::zeros(z_hist.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    const R eps = static_cast<R>(rng.normal());
    out.data()[i] = (R(1) - s_aug) * eps + s_aug * z_hist.data()[i];
  }
  return {out, s_aug};
}

}  // namespace arwm
