// Copyright (c) 2026 ARWM Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "arwm/tensor.hpp"

namespace arwm {

// Decoupled-weight-decay Adam with global gradient-norm clipping.
// The moment buffers mirror parameter shapes; the step counter increases
// monotonically and only on applied steps.
template <class R>
class AdamWT {
 public:
  struct Config {
    R lr = R(3e-4);
    R beta1 = R(0.9);
    R beta2 = R(0.999);
    R eps = R(1e-8);
    R weight_decay = R(0.01);
    R clip_norm = R(2.0);
  };

  explicit AdamWT(std::vector<TensorT<R>> params, Config cfg = {})
      : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& p : params_) {
      m_.push_back(std::vector<R>(p.numel(), R(0)));
      v_.push_back(std::vector<R>(p.numel(), R(0)));
    }
  }

  int64_t step_count() const { return step_; }
  int64_t skipped_steps() const { return skipped_; }
  Config& config() { return cfg_; }
  const std::vector<TensorT<R>>& params() const { return params_; }

  void zero_grad() {
    for (auto& p : params_) {
      auto& g = p.grad();
      std::fill(g.begin(), g.end(), R(0));
    }
  }

  R grad_norm() const {
    double acc = 0;
    for (const auto& p : params_) {
      if (p.grad().size() != p.data().size()) continue;
      for (R g : p.grad()) acc += static_cast<double>(g) * g;
    }
    return static_cast<R>(std::sqrt(acc));
  }

  // Returns the pre-clip gradient norm, or a negative value if the step was
  // aborted because of non-finite gradients.
  R step(R lr_override = R(-1)) {
    const R lr = lr_override >= R(0) ? lr_override : cfg_.lr;
    for (auto& p : params_) {
      if (p.grad().size() != p.data().size()) p.grad().assign(p.numel(), R(0));
      for (R g : p.grad())
        if (!std::isfinite(static_cast<double>(g))) {
          ++skipped_;
          return R(-1);
        }
    }
    const R norm = grad_norm();
    R scale = R(1);
    if (cfg_.clip_norm > R(0) && norm > cfg_.clip_norm)
      scale = cfg_.clip_norm / norm;

    ++step_;
    const R bc1 = R(1) - static_cast<R>(std::pow(cfg_.beta1, step_));
    const R bc2 = R(1) - static_cast<R>(std::pow(cfg_.beta2, step_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i].data();
      auto& g = params_[i].grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (size_t j = 0; j < p.size(); ++j) {
        const R gj = g[j] * scale;
        m[j] = cfg_.beta1 * m[j] + (R(1) - cfg_.beta1) * gj;
        v[j] = cfg_.beta2 * v[j] + (R(1) - cfg_.beta2) * gj * gj;
        const R mhat = m[j] / bc1;
        const R vhat = v[j] / bc2;
        p[j] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                      cfg_.weight_decay * p[j]);
      }
    }
    return norm;
  }

 private:
  std::vector<TensorT<R>> params_;
  Config cfg_;
  std::vector<std::vector<R>> m_, v_;
  int64_t step_ = 0;
  int64_t skipped_ = 0;
};

using AdamW = AdamWT<float>;

// Cosine schedule with linear warmup, evaluated per step.
template <class R>
R lr_at_step(R peak, int64_t step, int64_t warmup, int64_t total) {
  if (warmup > 0 && step < warmup)
    return peak * static_cast<R>(step + 1) / static_cast<R>(warmup);
  if (total <= warmup) return peak;
  const double t = static_cast<double>(step - warmup) /
                   static_cast<double>(total - warmup);
  return peak * static_cast<R>(0.5 * (1.0 + std::cos(3.141592653589793 *
                                                     std::min(1.0, t))));
}

}  // namespace arwm
