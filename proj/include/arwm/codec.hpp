// Copyright (c) 2026 ARWM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Fixed latent codec standing in for a learned video VAE: a lossless linear
// patchification of the grayscale frame into N tokens of width D_latent.
// Also the unified 30-dim dual-arm action layout, per-dimension quantile
// normalization, and the MLP action tokenizer.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "arwm/pushworld.hpp"
#include "arwm/tensor.hpp"

namespace arwm {

// ---------------------------------------------------------------------------
// Latent frame codec
// ---------------------------------------------------------------------------

struct CodecConfig {
  int height = 16;
  int width = 16;
  int patch = 4;
  // brings sparse [0,1] pixel latents to roughly unit variance so the flow
  // path between noise and data is well conditioned; a power of two keeps
  // the codec exactly invertible in float
  float latent_scale = 4.0f;

  int n_tokens() const { return (height / patch) * (width / patch); }
  int d_latent() const { return patch * patch; }
};

// N x D_latent latent tokens for one observation (flattened row-major).
struct LatentFrame {
  std::vector<float> tokens;
  int n = 0;
  int d = 0;
};

inline LatentFrame encode_frame(const Observation& obs,
                                const CodecConfig& cfg = {}) {
  check_dims(cfg.height % cfg.patch == 0 && cfg.width % cfg.patch == 0,
             "image dims not divisible by patch size");
  check_dims(static_cast<int>(obs.image.size()) == cfg.height * cfg.width,
             "observation size mismatch");
  LatentFrame z;
  z.n = cfg.n_tokens();
  z.d = cfg.d_latent();
  z.tokens.resize(static_cast<size_t>(z.n) * z.d);
  const int patches_per_row = cfg.width / cfg.patch;
  for (int pr = 0; pr < cfg.height / cfg.patch; ++pr)
    for (int pc = 0; pc < patches_per_row; ++pc) {
      float* tok = z.tokens.data() +
                   static_cast<size_t>(pr * patches_per_row + pc) * z.d;
      for (int i = 0; i < cfg.patch; ++i)
        for (int j = 0; j < cfg.patch; ++j)
          tok[i * cfg.patch + j] =
              cfg.latent_scale *
              obs.image[(pr * cfg.patch + i) * cfg.width + pc * cfg.patch + j];
    }
  return z;
}

inline Observation decode_frame(const LatentFrame& z,
                                const CodecConfig& cfg = {}) {
  check_dims(z.n == cfg.n_tokens() && z.d == cfg.d_latent(),
             "latent frame shape mismatch");
  Observation obs;
  obs.image.assign(static_cast<size_t>(cfg.height) * cfg.width, 0.0f);
  const int patches_per_row = cfg.width / cfg.patch;
  for (int pr = 0; pr < cfg.height / cfg.patch; ++pr)
    for (int pc = 0; pc < patches_per_row; ++pc) {
      const float* tok = z.tokens.data() +
                         static_cast<size_t>(pr * patches_per_row + pc) * z.d;
      for (int i = 0; i < cfg.patch; ++i)
        for (int j = 0; j < cfg.patch; ++j)
          obs.image[(pr * cfg.patch + i) * cfg.width + pc * cfg.patch + j] =
              tok[i * cfg.patch + j] / cfg.latent_scale;
    }
  return obs;
}

// ---------------------------------------------------------------------------
// Unified action representation
// ---------------------------------------------------------------------------

// Per arm: eef xyz (3), quaternion wxyz (4), joints (7), gripper (1).
constexpr int kActionDim = 30;
constexpr int kArmStride = 15;
constexpr int kQuatOffset = 3;
constexpr int kGripperOffset = 14;

struct UnifiedAction {
  std::array<float, kActionDim> v{};
};

// Zero-padded layout with identity quaternions in the unused rotation slots.
inline UnifiedAction unified_action_template() {
  UnifiedAction a;
  a.v.fill(0.0f);
  for (int arm = 0; arm < 2; ++arm) a.v[arm * kArmStride + kQuatOffset] = 1.0f;
  return a;
}

inline UnifiedAction pack_toy_action(const ToyAction& t) {
  UnifiedAction a = unified_action_template();
  a.v[0] = static_cast<float>(t.dx);
  a.v[1] = static_cast<float>(t.dy);
  a.v[kGripperOffset] = static_cast<float>(t.grab);
  return a;
}

inline ToyAction unpack_toy_action(const UnifiedAction& a) {
  ToyAction t;
  t.dx = a.v[0];
  t.dy = a.v[1];
  t.grab = a.v[kGripperOffset];
  return t;
}

// ---------------------------------------------------------------------------
// Quantile normalization
// ---------------------------------------------------------------------------

struct QuantileStats {
  std::array<float, kActionDim> q_lo{};
  std::array<float, kActionDim> q_hi{};
  std::array<bool, kActionDim> constant{};
};

// Empirical percentile with linear interpolation between order statistics.
inline float percentile(std::vector<float>& sorted_values, double p) {
  const size_t n = sorted_values.size();
  const double rank = p * static_cast<double>(n - 1);
  const size_t lo = static_cast<size_t>(rank);
  const size_t hi = std::min(lo + 1, n - 1);
  const double w = rank - static_cast<double>(lo);
  return static_cast<float>((1.0 - w) * sorted_values[lo] +
                            w * sorted_values[hi]);
}

inline QuantileStats fit_quantiles(const std::vector<UnifiedAction>& samples,
                                   double p_lo = 0.01, double p_hi = 0.99) {
  check(samples.size() >= 100, "fit_quantiles needs at least 100 samples");
  QuantileStats stats;
  std::vector<float> col(samples.size());
  for (int d = 0; d < kActionDim; ++d) {
    for (size_t i = 0; i < samples.size(); ++i) col[i] = samples[i].v[d];
    std::sort(col.begin(), col.end());
    stats.q_lo[d] = percentile(col, p_lo);
    stats.q_hi[d] = percentile(col, p_hi);
    stats.constant[d] = stats.q_lo[d] == stats.q_hi[d];
  }
  return stats;
}

// Affine [q_lo, q_hi] -> [-1, 1], clipped to [-1.5, 1.5]; constant dims map
// to zero.
inline UnifiedAction normalize_action(const UnifiedAction& a,
                                      const QuantileStats& stats) {
  UnifiedAction out;
  for (int d = 0; d < kActionDim; ++d) {
    if (stats.constant[d]) {
      out.v[d] = 0.0f;
      continue;
    }
    const float span = stats.q_hi[d] - stats.q_lo[d];
    const float u = 2.0f * (a.v[d] - stats.q_lo[d]) / span - 1.0f;
    out.v[d] = std::clamp(u, -1.5f, 1.5f);
  }
  return out;
}

// Inverse of the unclipped map; constant dims recover their constant.
inline UnifiedAction denormalize_action(const UnifiedAction& a,
                                        const QuantileStats& stats) {
  UnifiedAction out;
  for (int d = 0; d < kActionDim; ++d) {
    if (stats.constant[d]) {
      out.v[d] = stats.q_lo[d];
      continue;
    }
    const float span = stats.q_hi[d] - stats.q_lo[d];
    out.v[d] = stats.q_lo[d] + (a.v[d] + 1.0f) * 0.5f * span;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Action tokenizer: single-hidden-layer MLP from the normalized action
// vector to the action-stream width.
// ---------------------------------------------------------------------------

template <class R>
struct ActionTokenizerT {
  TensorT<R> w1, b1, w2, b2;  // 30 -> hidden -> d_model

  static ActionTokenizerT init(int d_model, Rng& rng, int hidden = 256,
                               R stddev = R(0.02)) {
    ActionTokenizerT t;
    t.w1 = TensorT<R>::randn({kActionDim, hidden}, rng, stddev, true);
    t.b1 = TensorT<R>::zeros({hidden}, true);
    t.w2 = TensorT<R>::randn({hidden, d_model}, rng, stddev, true);
    t.b2 = TensorT<R>::zeros({d_model}, true);
    return t;
  }

  static ActionTokenizerT init_fan_in(int d_model, Rng& rng,
                                      int hidden = 256) {
    ActionTokenizerT t;
    t.w1 = TensorT<R>::randn(
        {kActionDim, hidden}, rng,
        static_cast<R>(1.0 / std::sqrt(double(kActionDim))), true);
    t.b1 = TensorT<R>::zeros({hidden}, true);
    t.w2 = TensorT<R>::randn(
        {hidden, d_model}, rng,
        static_cast<R>(1.0 / std::sqrt(static_cast<double>(hidden))), true);
    t.b2 = TensorT<R>::zeros({d_model}, true);
    return t;
  }

  // actions: (L, 30) -> embeddings (L, d_model)
  TensorT<R> forward(const TensorT<R>& actions) const {
    return linear(gelu(linear(actions, w1, b1)), w2, b2);
  }
};

using ActionTokenizer = ActionTokenizerT<float>;

}  // namespace arwm
