// Copyright (c) 2026 ARWM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic 2-D planar manipulation environment with scripted expert
// demonstrations. Two variants: `push` (move a block to a goal) and
// `search_box` (find which of two boxes hides the block; box lids fall shut
// when the agent walks away, so the current frame does not reveal what was
// already checked).
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "arwm/rng.hpp"
#include "arwm/tensor.hpp"

namespace arwm {

enum class Variant : int { kPush = 0, kSearchBox = 1 };

struct PushworldConfig {
  int height = 16;
  int width = 16;
  double a_max = 0.1;
  double grasp_radius = 0.08;
  double success_eps = 0.05;
  int horizon_push = 60;
  int horizon_search = 40;
  // box centers for the search variant
  std::array<double, 2> box_left{0.2, 0.75};
  std::array<double, 2> box_right{0.8, 0.75};
};

struct ToyAction {
  double dx = 0, dy = 0;
  double grab = 0;  // {0,1}
};

struct WorldState {
  std::array<double, 2> agent_xy{0.5, 0.5};
  std::array<double, 2> block_xy{0.5, 0.5};
  std::array<double, 2> goal_xy{0.5, 0.5};
  bool grasped = false;
  int step_index = 0;
  Variant variant = Variant::kPush;
  // search_box: which box holds the block, current lid state, and a latent
  // record of boxes ever opened (not rendered; the expert oracle uses it)
  struct Flags {
    bool left = false;
    bool right = false;
  };
  Flags box_contents;
  Flags box_open;
  Flags box_checked;
};

struct Observation {
  std::vector<float> image;  // height*width grayscale in [0,1]
  int step_index = 0;
};

struct Episode {
  std::vector<Observation> observations;  // length = actions + 1
  std::vector<ToyAction> actions;
  int task_id = 0;
  bool success = false;
  uint64_t rng_seed = 0;
};

namespace detail {
inline double clip01(double v) { return v < 0 ? 0 : (v > 1 ? 1 : v); }
inline double clip(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}
inline double cheb(const std::array<double, 2>& a,
                   const std::array<double, 2>& b) {
  return std::max(std::abs(a[0] - b[0]), std::abs(a[1] - b[1]));
}
}  // namespace detail

// Pure transition function; all action components are sanitized first.
inline WorldState step(const WorldState& state, const ToyAction& action,
                       const PushworldConfig& cfg = {}) {
  WorldState s = state;
  const double dx = detail::clip(action.dx, -cfg.a_max, cfg.a_max);
  const double dy = detail::clip(action.dy, -cfg.a_max, cfg.a_max);
  const bool grab = action.grab >= 0.5;

  const std::array<double, 2> prev = s.agent_xy;
  s.agent_xy[0] = detail::clip01(prev[0] + dx);
  s.agent_xy[1] = detail::clip01(prev[1] + dy);

  if (s.variant == Variant::kPush) {
    if (s.grasped) {
      s.block_xy[0] = detail::clip01(s.block_xy[0] + (s.agent_xy[0] - prev[0]));
      s.block_xy[1] = detail::clip01(s.block_xy[1] + (s.agent_xy[1] - prev[1]));
    }
    if (grab) {
      if (!s.grasped &&
          detail::cheb(s.agent_xy, s.block_xy) <= cfg.grasp_radius)
        s.grasped = true;
    } else {
      s.grasped = false;
    }
  } else {
    // lids open while the agent presses next to a box and fall shut otherwise
    const bool near_left =
        detail::cheb(s.agent_xy, cfg.box_left) <= cfg.grasp_radius;
    const bool near_right =
        detail::cheb(s.agent_xy, cfg.box_right) <= cfg.grasp_radius;
    s.box_open.left = grab && near_left;
    s.box_open.right = grab && near_right;
    s.box_checked.left = s.box_checked.left || s.box_open.left;
    s.box_checked.right = s.box_checked.right || s.box_open.right;
  }
  s.step_index += 1;
  return s;
}

inline bool is_success(const WorldState& s, const PushworldConfig& cfg = {}) {
  if (s.variant == Variant::kPush)
    return !s.grasped && detail::cheb(s.block_xy, s.goal_xy) <= cfg.success_eps;
  return (s.box_contents.left && s.box_open.left) ||
         (s.box_contents.right && s.box_open.right);
}

namespace detail {

inline void draw_px(std::vector<float>& img, const PushworldConfig& cfg, int r,
                    int c, float v) {
  if (r < 0 || r >= cfg.height || c < 0 || c >= cfg.width) return;
  img[static_cast<size_t>(r) * cfg.width + c] = v;
}

inline void draw_square(std::vector<float>& img, const PushworldConfig& cfg,
                        const std::array<double, 2>& xy, int size, float v) {
  const int c = static_cast<int>(std::floor(xy[0] * (cfg.width - 1)));
  const int r = static_cast<int>(std::floor(xy[1] * (cfg.height - 1)));
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) draw_px(img, cfg, r + i, c + j, v);
}

inline void draw_box_glyph(std::vector<float>& img, const PushworldConfig& cfg,
                           const std::array<double, 2>& xy, bool open,
                           bool contains) {
  const int c = static_cast<int>(std::floor(xy[0] * (cfg.width - 1))) - 1;
  const int r = static_cast<int>(std::floor(xy[1] * (cfg.height - 1))) - 1;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) draw_px(img, cfg, r + i, c + j, 0.4f);
  if (open) draw_px(img, cfg, r + 1, c + 1, contains ? 0.8f : 0.1f);
}

}  // namespace detail

// Deterministic rasterization; later entities overwrite earlier ones.
inline Observation render(const WorldState& s, const PushworldConfig& cfg = {}) {
  Observation obs;
  obs.step_index = s.step_index;
  obs.image.assign(static_cast<size_t>(cfg.height) * cfg.width, 0.0f);
  if (s.variant == Variant::kPush) {
    detail::draw_square(obs.image, cfg, s.goal_xy, 1, 0.3f);
    detail::draw_square(obs.image, cfg, s.block_xy, 2, 0.6f);
  } else {
    detail::draw_box_glyph(obs.image, cfg, cfg.box_left, s.box_open.left,
                           s.box_contents.left);
    detail::draw_box_glyph(obs.image, cfg, cfg.box_right, s.box_open.right,
                           s.box_contents.right);
  }
  detail::draw_square(obs.image, cfg, s.agent_xy, 2, 1.0f);
  return obs;
}

namespace detail {
// Step of at most a_max (euclidean) toward the target.
inline void move_toward(const std::array<double, 2>& from,
                        const std::array<double, 2>& to, double a_max,
                        ToyAction& a) {
  const double dx = to[0] - from[0], dy = to[1] - from[1];
  const double n = std::sqrt(dx * dx + dy * dy);
  if (n <= a_max || n == 0.0) {
    a.dx = dx;
    a.dy = dy;
  } else {
    a.dx = dx / n * a_max;
    a.dy = dy / n * a_max;
  }
}
}  // namespace detail

// Scripted expert. push: approach the block, grasp, carry to the goal,
// release. search_box: open the right box first, then the left if empty.
inline ToyAction expert_policy(const WorldState& s,
                               const PushworldConfig& cfg = {}) {
  ToyAction a;
  if (s.variant == Variant::kPush) {
    if (!s.grasped) {
      const double d = detail::cheb(s.agent_xy, s.block_xy);
      if (d > cfg.grasp_radius * 0.6) {
        detail::move_toward(s.agent_xy, s.block_xy, cfg.a_max, a);
        a.grab = 0;
      } else {
        a.grab = 1;  // close enough: latch on
      }
    } else {
      const double d = detail::cheb(s.block_xy, s.goal_xy);
      if (d > cfg.success_eps * 0.5) {
        // steer by the block's offset so the carried block lands on the goal
        detail::move_toward(s.block_xy, s.goal_xy, cfg.a_max, a);
        a.grab = 1;
      } else {
        a.grab = 0;  // release on the goal
      }
    }
  } else {
    const auto& target = !s.box_checked.right ? cfg.box_right : cfg.box_left;
    const double d = detail::cheb(s.agent_xy, target);
    if (d > cfg.grasp_radius * 0.8) {
      detail::move_toward(s.agent_xy, target, cfg.a_max, a);
      a.grab = 0;
    } else {
      a.grab = 1;  // press to open / keep open while inspecting
    }
  }
  return a;
}

inline WorldState init_state(Variant variant, Rng& rng,
                             const PushworldConfig& cfg = {},
                             bool search_block_always_left = false) {
  WorldState s;
  s.variant = variant;
  if (variant == Variant::kPush) {
    for (;;) {
      s.agent_xy = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
      s.block_xy = {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
      s.goal_xy = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
      if (detail::cheb(s.agent_xy, s.block_xy) >= 0.2 &&
          detail::cheb(s.block_xy, s.goal_xy) >= 0.25)
        break;
    }
  } else {
    s.agent_xy = {rng.uniform(0.35, 0.65), rng.uniform(0.1, 0.25)};
    const bool left = search_block_always_left || rng.bernoulli(0.5);
    s.box_contents.left = left;
    s.box_contents.right = !left;
    s.block_xy = left ? cfg.box_left : cfg.box_right;
    s.goal_xy = {0.5, 0.5};  // unused in this variant
  }
  return s;
}

struct RolloutResult {
  Episode episode;
  WorldState final_state;
};

template <class Policy>
RolloutResult run_episode(WorldState s, Policy&& policy, int horizon,
                          const PushworldConfig& cfg = {}) {
  RolloutResult r;
  r.episode.observations.push_back(render(s, cfg));
  for (int t = 0; t < horizon; ++t) {
    const ToyAction a = policy(s);
    s = step(s, a, cfg);
    r.episode.actions.push_back(a);
    r.episode.observations.push_back(render(s, cfg));
    if (is_success(s, cfg)) {
      r.episode.success = true;
      break;
    }
  }
  r.final_state = s;
  return r;
}

// n reproducible expert episodes, all successful. A failed expert rollout is
// dropped and regenerated from a derived seed (counted, should not happen).
inline std::vector<Episode> generate_demos(Variant variant, int n,
                                           uint64_t seed,
                                           const PushworldConfig& cfg = {},
                                           int* regenerated = nullptr) {
  check(n >= 1, "generate_demos requires n >= 1");
  std::vector<Episode> out;
  out.reserve(static_cast<size_t>(n));
  const int horizon =
      variant == Variant::kPush ? cfg.horizon_push : cfg.horizon_search;
  Rng root(seed);
  for (int i = 0; i < n; ++i) {
    for (uint64_t attempt = 0;; ++attempt) {
      Rng rng = root.derive(static_cast<uint64_t>(i), attempt);
      WorldState s0 = init_state(variant, rng, cfg);
      auto r = run_episode(
          s0, [&](const WorldState& ws) { return expert_policy(ws, cfg); },
          horizon, cfg);
      if (r.episode.success) {
        r.episode.task_id = static_cast<int>(variant);
        r.episode.rng_seed = seed + static_cast<uint64_t>(i);
        out.push_back(std::move(r.episode));
        break;
      }
      if (regenerated) ++(*regenerated);
    }
  }
  return out;
}

}  // namespace arwm
