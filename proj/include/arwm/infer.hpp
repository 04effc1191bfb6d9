// Copyright (c) 2026 ARWM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Closed-loop inference. Synchronous mode alternates predict / execute with
// an append-only KV cache. Asynchronous mode runs an executor thread and a
// predictor thread: while a chunk executes, the predictor grounds itself on
// the newest real observations, imagines the outcome of the executing chunk
// with a forward-dynamics pass (or reuses its stale forecast in the naive
// ablation), and predicts the next chunk one step ahead. With zero predict
// latency the lookahead is pointless and the pipeline degenerates to the
// synchronous data flow, which keeps the two modes bit-identical there.
#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "arwm/codec.hpp"
#include "arwm/flow.hpp"
#include "arwm/model.hpp"
#include "arwm/pushworld.hpp"
#include "arwm/seqlayout.hpp"

namespace arwm {

struct InferConfig {
  int K = 2;  // deployment chunk size
  int video_steps = 3;
  float video_s_stop = 0.6f;
  int action_steps = 10;  // always integrates to s = 1
  int rollout_video_steps = 10;
  GuidanceConfig guidance;       // video 5.0, action 1.0
  int history_window_frames = 0;  // 0 = full history, N = truncated baseline
};

// ---------------------------------------------------------------------------
// KV cache
// ---------------------------------------------------------------------------

// Cached joint-attention keys/values plus, per token, the slot metadata and
// the raw inputs that produced it (needed to rebuild truncated windows and
// to cross-check against full recomputation).
struct KVCache {
  ModelConfig cfg;
  KVSnapshot snap;
  std::vector<Slot> meta;
  std::vector<float> video_rows;   // one d_frame row per cached video token
  std::vector<float> action_rows;  // one 30-dim row per cached action token
  std::vector<float> video_s, action_s;
  int task_row = 1;

  explicit KVCache(const ModelConfig& c, int task) : cfg(c), task_row(task) {
    snap.k.resize(static_cast<size_t>(c.n_layers));
    snap.v.resize(static_cast<size_t>(c.n_layers));
  }

  int64_t length() const { return snap.length; }

  int last_video_frame() const {
    int f = -1;
    for (const auto& s : meta)
      if (s.modality == Modality::kVideo) f = std::max(f, s.frame_index);
    return f;
  }
  int last_chunk_id() const {
    int c = -1;
    for (const auto& s : meta) c = std::max(c, s.chunk_id);
    return c;
  }

  void validate() const {
    check(static_cast<int64_t>(meta.size()) == snap.length,
          "cache metadata length mismatch");
    int prev_chunk = -1;
    for (const auto& s : meta) {
      check(s.chunk_id >= prev_chunk || s.chunk_id >= 0,
            "cache chunk ids malformed");
      prev_chunk = std::max(prev_chunk, s.chunk_id);
    }
  }
};

namespace detail {

// Mask for new tokens attending [cache | new]: chunk-monotone everywhere,
// bidirectional within a chunk.
inline MaskMatrix cached_mask(const std::vector<Slot>& cache_meta,
                              const std::vector<Slot>& new_meta) {
  const int64_t Lc = static_cast<int64_t>(cache_meta.size());
  const int64_t Ln = static_cast<int64_t>(new_meta.size());
  MaskMatrix m = MaskMatrix::full(Ln, Lc + Ln, false);
  for (int64_t i = 0; i < Ln; ++i) {
    for (int64_t j = 0; j < Lc; ++j)
      if (cache_meta[j].chunk_id <= new_meta[i].chunk_id) m.set(i, j, true);
    for (int64_t j = 0; j < Ln; ++j)
      if (new_meta[j].chunk_id <= new_meta[i].chunk_id) m.set(i, Lc + j, true);
  }
  return m;
}

struct NewTokens {
  std::vector<Slot> meta;
  StreamInputs in;  // positions are relative to the new-token group
};

// Lays out a group of new tokens. Video rows and action rows follow the
// interleaved order given by `slots`.
inline NewTokens build_tokens(const ModelConfig& cfg,
                              const std::vector<Slot>& slots,
                              const std::vector<float>& video_rows,
                              const std::vector<float>& action_rows,
                              const std::vector<float>& video_s,
                              const std::vector<float>& action_s,
                              int task_row) {
  NewTokens t;
  t.meta = slots;
  int64_t vi = 0, ai = 0;
  for (size_t i = 0; i < slots.size(); ++i) {
    const Slot& s = slots[i];
    if (s.modality == Modality::kVideo) {
      t.in.video_pos.push_back(static_cast<int64_t>(i));
      t.in.video_frame.push_back(s.frame_index);
      t.in.video_s.push_back(video_s[static_cast<size_t>(vi)]);
      t.in.video_task.push_back(task_row);
      ++vi;
    } else {
      t.in.action_pos.push_back(static_cast<int64_t>(i));
      t.in.action_frame.push_back(s.frame_index);
      t.in.action_sub.push_back(s.sub_index);
      t.in.action_s.push_back(action_s[static_cast<size_t>(ai)]);
      ++ai;
    }
  }
  t.in.video_x = Tensor::from_data({vi, cfg.d_frame()},
                                   std::vector<float>(video_rows));
  t.in.action_x = Tensor::from_data({ai, kActionDim},
                                    std::vector<float>(action_rows));
  return t;
}

}  // namespace detail

// Runs the new tokens through the model against the cache and appends their
// keys/values and metadata. Used for grounding real observations and
// executed or imagined content.
inline void cache_append(MoTParamsT<float>& params, KVCache& cache,
                         const detail::NewTokens& tokens) {
  NoGradGuard ng;
  auto mask = detail::cached_mask(cache.meta, tokens.meta);
  auto r = forward(cache.cfg, params, tokens.in, mask,
                   cache.length() ? &cache.snap : nullptr, /*want_kv=*/true);
  for (int l = 0; l < cache.cfg.n_layers; ++l) {
    auto& k = cache.snap.k[static_cast<size_t>(l)];
    auto& v = cache.snap.v[static_cast<size_t>(l)];
    k.insert(k.end(), r.new_k[static_cast<size_t>(l)].begin(),
             r.new_k[static_cast<size_t>(l)].end());
    v.insert(v.end(), r.new_v[static_cast<size_t>(l)].begin(),
             r.new_v[static_cast<size_t>(l)].end());
  }
  cache.snap.length += static_cast<int64_t>(tokens.meta.size());
  cache.meta.insert(cache.meta.end(), tokens.meta.begin(), tokens.meta.end());
  size_t vi = 0, ai = 0;
  for (const auto& s : tokens.meta) {
    if (s.modality == Modality::kVideo) {
      const float* row =
          tokens.in.video_x.data().data() + (vi * cache.cfg.d_frame());
      cache.video_rows.insert(cache.video_rows.end(), row,
                              row + cache.cfg.d_frame());
      cache.video_s.push_back(tokens.in.video_s[vi]);
      ++vi;
    } else {
      const float* row = tokens.in.action_x.data().data() + (ai * kActionDim);
      cache.action_rows.insert(cache.action_rows.end(), row,
                               row + kActionDim);
      cache.action_s.push_back(tokens.in.action_s[ai]);
      ++ai;
    }
  }
  cache.validate();
}

inline void cache_append_frame(MoTParamsT<float>& params, KVCache& cache,
                               const std::vector<float>& z, int frame,
                               int chunk, float s_embed = 1.0f) {
  Slot slot;
  slot.modality = Modality::kVideo;
  slot.frame_index = frame;
  slot.chunk_id = chunk;
  auto tokens = detail::build_tokens(cache.cfg, {slot}, z, {}, {s_embed}, {},
                                     cache.task_row);
  cache_append(params, cache, tokens);
}

// Appends one executed/imagined chunk in interleaved layout order:
// [a_t,1..tau, z_{t+1}, ..., a_{t+K-1},tau, z_{t+K}].
inline void cache_append_chunk(MoTParamsT<float>& params, KVCache& cache,
                               const std::vector<float>& frames,  // K x d_frame
                               const std::vector<float>& actions,  // tauK x 30
                               int first_action_frame, int chunk_id,
                               float frame_s_embed = 1.0f) {
  const ModelConfig& cfg = cache.cfg;
  const int K = static_cast<int>(frames.size()) / cfg.d_frame();
  std::vector<Slot> slots;
  std::vector<float> vrows, arows, vs, as;
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < cfg.tau; ++j) {
      Slot a;
      a.modality = Modality::kAction;
      a.frame_index = first_action_frame + i;
      a.sub_index = j;
      a.chunk_id = chunk_id;
      slots.push_back(a);
      const float* row =
          actions.data() + (static_cast<size_t>(i) * cfg.tau + j) * kActionDim;
      arows.insert(arows.end(), row, row + kActionDim);
      as.push_back(1.0f);
    }
    Slot z;
    z.modality = Modality::kVideo;
    z.frame_index = first_action_frame + i + 1;
    z.chunk_id = chunk_id;
    slots.push_back(z);
    const float* row = frames.data() + static_cast<size_t>(i) * cfg.d_frame();
    vrows.insert(vrows.end(), row, row + cfg.d_frame());
    vs.push_back(frame_s_embed);
  }
  auto tokens =
      detail::build_tokens(cfg, slots, vrows, arows, vs, as, cache.task_row);
  cache_append(params, cache, tokens);
}

// ---------------------------------------------------------------------------
// Velocity wrappers and chunk prediction
// ---------------------------------------------------------------------------

// One denoiser evaluation for the video slots of the active chunk.
// extra_* lets callers place already-denoised or grounded tokens of the same
// chunk into the context (actions for the FDM pass, nothing otherwise).
inline Tensor predict_video_velocity(MoTParamsT<float>& params, KVCache& cache,
                                     const std::vector<float>& x_noisy,
                                     const std::vector<Slot>& video_slots,
                                     float s, int task_row) {
  NoGradGuard ng;
  std::vector<float> vs(video_slots.size(), s);
  auto tokens = detail::build_tokens(cache.cfg, video_slots, x_noisy, {}, vs,
                                     {}, task_row);
  auto mask = detail::cached_mask(cache.meta, tokens.meta);
  auto r = forward(cache.cfg, params, tokens.in, mask,
                   cache.length() ? &cache.snap : nullptr);
  return r.video_velocity;
}

// One denoiser evaluation for the action slots of the active chunk, with the
// (partially denoised) predicted frames sitting at their layout slots.
inline Tensor predict_action_velocity(MoTParamsT<float>& params,
                                      KVCache& cache,
                                      const std::vector<float>& z_chunk,
                                      const std::vector<Slot>& video_slots,
                                      float z_s,
                                      const std::vector<float>& a_noisy,
                                      const std::vector<Slot>& action_slots,
                                      float s, int task_row) {
  NoGradGuard ng;
  std::vector<Slot> slots = video_slots;
  slots.insert(slots.end(), action_slots.begin(), action_slots.end());
  std::vector<float> vs(video_slots.size(), z_s);
  std::vector<float> as(action_slots.size(), s);
  auto tokens =
      detail::build_tokens(cache.cfg, slots, z_chunk, a_noisy, vs, as,
                           task_row);
  auto mask = detail::cached_mask(cache.meta, tokens.meta);
  auto r = forward(cache.cfg, params, tokens.in, mask,
                   cache.length() ? &cache.snap : nullptr);
  return r.action_velocity;
}

struct ChunkPrediction {
  std::vector<float> frames;   // K x d_frame at s_stop (or 1.0)
  std::vector<float> actions;  // tauK x 30, fully denoised, normalized
  int first_action_frame = 0;
  int chunk_id = 0;
};

inline int64_t& predict_chunk_clamp_warnings() {
  thread_local int64_t n = 0;
  return n;
}

// Alg. 1 lines 4-7: integrate the video chunk to s_stop under video CFG,
// then decode the action chunk to s = 1 conditioned on the partially
// denoised frames. The cache is not modified.
inline ChunkPrediction predict_chunk(MoTParamsT<float>& params, KVCache& cache,
                                     const InferConfig& icfg, int K, Rng rng,
                                     float video_s_stop_override = -1.0f) {
  const ModelConfig& cfg = cache.cfg;
  if (K < cfg.k_lo || K > cfg.k_hi) {
    ++predict_chunk_clamp_warnings();
    K = std::clamp(K, cfg.k_lo, cfg.k_hi);
  }
  const float s_stop =
      video_s_stop_override > 0 ? video_s_stop_override : icfg.video_s_stop;
  const int t = cache.last_video_frame();
  check(t >= 0, "predict_chunk needs at least one grounded frame");
  const int chunk_id = cache.last_chunk_id() + 1;

  ChunkPrediction out;
  out.first_action_frame = t;
  out.chunk_id = chunk_id;

  std::vector<Slot> video_slots;
  for (int i = 0; i < K; ++i) {
    Slot s;
    s.modality = Modality::kVideo;
    s.frame_index = t + 1 + i;
    s.chunk_id = chunk_id;
    video_slots.push_back(s);
  }
  std::vector<Slot> action_slots;
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < cfg.tau; ++j) {
      Slot s;
      s.modality = Modality::kAction;
      s.frame_index = t + i;
      s.sub_index = j;
      s.chunk_id = chunk_id;
      action_slots.push_back(s);
    }

  // video phase
  {
    std::vector<float> x(static_cast<size_t>(K) * cfg.d_frame());
    Rng nrng = rng.derive(1);
    for (auto& v : x) v = static_cast<float>(nrng.normal());
    const float h = s_stop / static_cast<float>(icfg.video_steps);
    for (int step = 0; step < icfg.video_steps; ++step) {
      const float s = h * static_cast<float>(step);
      auto v_cond =
          predict_video_velocity(params, cache, x, video_slots, s,
                                 cache.task_row);
      Tensor v = v_cond;
      if (icfg.guidance.video_scale != 1.0) {
        auto v_uncond =
            predict_video_velocity(params, cache, x, video_slots, s, 0);
        v = cfg_combine(v_cond, v_uncond,
                        static_cast<float>(icfg.guidance.video_scale));
      }
      for (size_t i = 0; i < x.size(); ++i) x[i] += h * v.data()[i];
    }
    out.frames = x;
  }

  // action phase
  {
    std::vector<float> a(static_cast<size_t>(K) * cfg.tau * kActionDim);
    Rng nrng = rng.derive(2);
    for (auto& v : a) v = static_cast<float>(nrng.normal());
    const float h = 1.0f / static_cast<float>(icfg.action_steps);
    for (int step = 0; step < icfg.action_steps; ++step) {
      const float s = h * static_cast<float>(step);
      auto v_cond = predict_action_velocity(params, cache, out.frames,
                                            video_slots, s_stop, a,
                                            action_slots, s, cache.task_row);
      Tensor v = v_cond;
      if (icfg.guidance.action_scale != 1.0) {
        auto v_uncond = predict_action_velocity(params, cache, out.frames,
                                                video_slots, s_stop, a,
                                                action_slots, s, 0);
        v = cfg_combine(v_cond, v_uncond,
                        static_cast<float>(icfg.guidance.action_scale));
      }
      for (size_t i = 0; i < a.size(); ++i) a[i] += h * v.data()[i];
    }
    out.actions = a;
  }
  return out;
}

// Alg. 2's FDM grounding: imagine the visual outcome of the executing action
// chunk from grounded feedback. The cache must already contain the grounded
// frames and the executing actions (same chunk id as the frames being
// imagined). Partial denoise to s_stop, conditional path only.
inline std::vector<float> fdm_ground(MoTParamsT<float>& params, KVCache& cache,
                                     const InferConfig& icfg, int K,
                                     int first_frame, int chunk_id, Rng rng) {
  const ModelConfig& cfg = cache.cfg;
  std::vector<Slot> video_slots;
  for (int i = 0; i < K; ++i) {
    Slot s;
    s.modality = Modality::kVideo;
    s.frame_index = first_frame + i;
    s.chunk_id = chunk_id;
    video_slots.push_back(s);
  }
  std::vector<float> x(static_cast<size_t>(K) * cfg.d_frame());
  Rng nrng = rng.derive(1);
  for (auto& v : x) v = static_cast<float>(nrng.normal());
  const float h = icfg.video_s_stop / static_cast<float>(icfg.video_steps);
  for (int step = 0; step < icfg.video_steps; ++step) {
    const float s = h * static_cast<float>(step);
    auto v = predict_video_velocity(params, cache, x, video_slots, s,
                                    cache.task_row);
    for (size_t i = 0; i < x.size(); ++i) x[i] += h * v.data()[i];
  }
  return x;
}

// ---------------------------------------------------------------------------
// Episode runners
// ---------------------------------------------------------------------------

struct LatencyModel {
  double predict_latency = 0.0;  // env-steps-equivalent cost per chunk
  double execute_latency = 1.0;  // env steps per action
};

struct EpisodeResult {
  bool success = false;
  int steps = 0;  // executed env actions
  int chunks = 0;
  double wall_steps = 0.0;        // virtual pipeline time in env steps
  double actions_per_step = 0.0;  // throughput against the virtual clock
  std::vector<ToyAction> executed;
  std::vector<WorldState> states;
};

namespace detail {

inline ToyAction to_env_action(const std::vector<float>& a_norm, size_t idx,
                               const QuantileStats& stats) {
  UnifiedAction u;
  std::copy_n(a_norm.data() + idx * kActionDim, kActionDim, u.v.begin());
  return unpack_toy_action(denormalize_action(u, stats));
}

inline std::vector<float> encode_obs(const Observation& obs,
                                     const CodecConfig& codec) {
  return encode_frame(obs, codec).tokens;
}

// Serial pipeline timing on the synthetic latency model.
inline double sync_wall(int chunks, int actions_per_chunk,
                        const LatencyModel& lat) {
  return chunks * (lat.predict_latency +
                   actions_per_chunk * lat.execute_latency);
}

inline double async_wall(int chunks, int actions_per_chunk,
                         const LatencyModel& lat) {
  // cold-start predict fills the pipe; afterwards prediction of chunk i+1
  // overlaps the execution of chunk i, gated on the observations of i-1
  const double exec = actions_per_chunk * lat.execute_latency;
  double exec_done_prev = 0.0;             // exec_done(i-1)
  double pred_done = lat.predict_latency;  // chunk 0 ready after cold start
  for (int i = 0; i < chunks; ++i) {
    const double obs_ready = exec_done_prev;  // observations of chunk i-1
    const double exec_start = std::max(exec_done_prev, pred_done);
    const double exec_done = exec_start + exec;
    const double pred_start =
        std::max(pred_done, i == 0 ? exec_start : obs_ready);
    pred_done = pred_start + lat.predict_latency;
    exec_done_prev = exec_done;
  }
  return exec_done_prev;
}

}  // namespace detail

struct RunContext {
  ModelConfig mcfg;
  InferConfig icfg;
  QuantileStats stats;
  CodecConfig codec;
  PushworldConfig env_cfg;
  Variant variant = Variant::kPush;
  int max_steps = 60;
  // optional mid-episode disturbance: teleports the block at this env step
  int perturb_step = -1;
  double perturb_distance = 0.3;
};

namespace detail {

inline void maybe_perturb(WorldState& state, const RunContext& ctx, int step,
                          Rng& rng) {
  if (ctx.perturb_step < 0 || step != ctx.perturb_step) return;
  if (state.variant != Variant::kPush || state.grasped) return;
  for (int tries = 0; tries < 32; ++tries) {
    std::array<double, 2> p{rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
    if (cheb(p, state.agent_xy) >= ctx.perturb_distance * 0.8 &&
        cheb(p, state.block_xy) >= ctx.perturb_distance * 0.8) {
      state.block_xy = p;
      return;
    }
  }
}

// Rebuilds a truncated cache holding the last `window` frames (and the
// executed actions between them) as grounding context, frames relabeled
// from zero. window = 1 keeps just the newest frame.
inline KVCache rebuild_window_cache(
    MoTParamsT<float>& params, const ModelConfig& mcfg, int task_row,
    const std::vector<std::vector<float>>& frames,
    const std::vector<std::vector<float>>& action_groups, int window) {
  KVCache cache(mcfg, task_row);
  const int total = static_cast<int>(frames.size());
  const int start = std::max(0, total - window);
  cache_append_frame(params, cache, frames[static_cast<size_t>(start)], 0, 0);
  for (int f = start + 1; f < total; ++f) {
    cache_append_chunk(params, cache, frames[static_cast<size_t>(f)],
                       action_groups[static_cast<size_t>(f - 1)],
                       f - start - 1, f - start);
  }
  return cache;
}

}  // namespace detail

// Alg. 1: predict a chunk, execute its actions against the environment,
// encode the real observations, append them to the cache, repeat.
inline EpisodeResult run_sync_episode(MoTParamsT<float>& params,
                                      const RunContext& ctx, uint64_t seed,
                                      const LatencyModel& lat = {}) {
  Rng root(seed);
  Rng env_rng = root.derive(100);
  WorldState state = init_state(ctx.variant, env_rng, ctx.env_cfg,
                                ctx.variant == Variant::kSearchBox);
  Rng perturb_rng = root.derive(300);

  EpisodeResult result;
  result.states.push_back(state);

  const int tau = ctx.mcfg.tau;
  KVCache full_cache(ctx.mcfg, /*task=*/static_cast<int>(ctx.variant) + 1);
  std::vector<std::vector<float>> frames;       // real sparsified latents
  std::vector<std::vector<float>> action_groups;  // executed, normalized

  auto z0 = detail::encode_obs(render(state, ctx.env_cfg), ctx.codec);
  frames.push_back(z0);
  cache_append_frame(params, full_cache, z0, 0, 0);

  bool done = false;
  while (!done && result.steps < ctx.max_steps) {
    const int chunk_index = result.chunks;
    ChunkPrediction pred;
    if (ctx.icfg.history_window_frames > 0) {
      KVCache window = detail::rebuild_window_cache(
          params, ctx.mcfg, full_cache.task_row, frames, action_groups,
          ctx.icfg.history_window_frames);
      pred = predict_chunk(params, window, ctx.icfg, ctx.icfg.K,
                           root.derive(1, static_cast<uint64_t>(chunk_index)));
    } else {
      pred = predict_chunk(params, full_cache, ctx.icfg, ctx.icfg.K,
                           root.derive(1, static_cast<uint64_t>(chunk_index)));
    }
    ++result.chunks;

    const int K = static_cast<int>(pred.frames.size()) / ctx.mcfg.d_frame();
    std::vector<float> real_frames;
    std::vector<float> executed_norm;
    int executed_in_chunk = 0;
    for (int i = 0; i < K && !done; ++i) {
      for (int j = 0; j < tau && !done; ++j) {
        const size_t idx = static_cast<size_t>(i) * tau + j;
        ToyAction act = detail::to_env_action(pred.actions, idx, ctx.stats);
        detail::maybe_perturb(state, ctx, result.steps, perturb_rng);
        state = step(state, act, ctx.env_cfg);
        result.executed.push_back(act);
        result.states.push_back(state);
        // store the executed action in normalized space for the cache
        UnifiedAction u;
        std::copy_n(pred.actions.data() + idx * kActionDim, kActionDim,
                    u.v.begin());
        executed_norm.insert(executed_norm.end(), u.v.begin(), u.v.end());
        ++result.steps;
        ++executed_in_chunk;
        if (is_success(state, ctx.env_cfg)) {
          result.success = true;
          done = true;
        }
        if (result.steps >= ctx.max_steps) done = true;
      }
      if (executed_in_chunk % tau == 0 && executed_in_chunk > 0 &&
          static_cast<int>(real_frames.size()) / ctx.mcfg.d_frame() < i + 1) {
        auto z = detail::encode_obs(render(state, ctx.env_cfg), ctx.codec);
        real_frames.insert(real_frames.end(), z.begin(), z.end());
      }
    }
    // ground completed frame boundaries
    const int full_frames =
        static_cast<int>(real_frames.size()) / ctx.mcfg.d_frame();
    if (!done && full_frames == K) {
      const int first_action_frame = static_cast<int>(frames.size()) - 1;
      if (ctx.icfg.history_window_frames == 0)
        cache_append_chunk(params, full_cache, real_frames, executed_norm,
                           first_action_frame, chunk_index + 1);
      for (int i = 0; i < K; ++i) {
        frames.emplace_back(
            real_frames.begin() + static_cast<size_t>(i) * ctx.mcfg.d_frame(),
            real_frames.begin() +
                static_cast<size_t>(i + 1) * ctx.mcfg.d_frame());
        action_groups.emplace_back(
            executed_norm.begin() +
                static_cast<size_t>(i) * tau * kActionDim,
            executed_norm.begin() +
                static_cast<size_t>(i + 1) * tau * kActionDim);
      }
    }
    if (static_cast<int>(frames.size()) + ctx.icfg.K + 1 >=
        ctx.mcfg.max_frames)
      break;  // out of trained positions
  }
  const int per_chunk = ctx.icfg.K * tau;
  result.wall_steps = detail::sync_wall(result.chunks, per_chunk, lat);
  result.actions_per_step =
      result.wall_steps > 0 ? result.steps / result.wall_steps : 0.0;
  return result;
}

// ---------------------------------------------------------------------------
// Asynchronous pipeline
// ---------------------------------------------------------------------------

enum class AsyncMode { kNaive, kFdmGrounded };

// Bounded single-producer single-consumer observation queue with strictly
// increasing step indices.
class ObsQueue {
 public:
  explicit ObsQueue(size_t capacity = 256) : capacity_(capacity) {}

  void push(int step_index, Observation obs) {
    std::unique_lock<std::mutex> lk(m_);
    cv_push_.wait(lk, [&] { return q_.size() < capacity_ || closed_; });
    if (closed_) return;
    check(step_index > last_pushed_, "observation indices must increase");
    last_pushed_ = step_index;
    q_.emplace_back(step_index, std::move(obs));
    cv_pop_.notify_one();
  }

  // blocks until an observation arrives or the queue closes
  std::optional<std::pair<int, Observation>> pop(
      std::chrono::milliseconds timeout = std::chrono::milliseconds(30000)) {
    std::unique_lock<std::mutex> lk(m_);
    if (!cv_pop_.wait_for(lk, timeout, [&] { return !q_.empty() || closed_; }))
      throw ContractError("observation queue deadlock timeout");
    if (q_.empty()) return std::nullopt;
    auto out = std::move(q_.front());
    q_.pop_front();
    check(out.first > last_popped_, "observation indices must increase");
    last_popped_ = out.first;
    cv_push_.notify_one();
    return out;
  }

  void close() {
    std::lock_guard<std::mutex> lk(m_);
    closed_ = true;
    cv_pop_.notify_all();
    cv_push_.notify_all();
  }

 private:
  std::mutex m_;
  std::condition_variable cv_pop_, cv_push_;
  std::deque<std::pair<int, Observation>> q_;
  size_t capacity_;
  bool closed_ = false;
  int last_pushed_ = -1;
  int last_popped_ = -1;
};

namespace detail {

// chunk hand-off from predictor to executor
struct ChunkChannel {
  std::mutex m;
  std::condition_variable cv;
  std::deque<ChunkPrediction> q;
  bool closed = false;

  void push(ChunkPrediction c) {
    {
      std::lock_guard<std::mutex> lk(m);
      q.push_back(std::move(c));
    }
    cv.notify_one();
  }
  std::optional<ChunkPrediction> pop() {
    std::unique_lock<std::mutex> lk(m);
    if (!cv.wait_for(lk, std::chrono::milliseconds(30000),
                     [&] { return !q.empty() || closed; }))
      throw ContractError("chunk channel deadlock timeout");
    if (q.empty()) return std::nullopt;
    auto out = std::move(q.front());
    q.pop_front();
    return out;
  }
  void close() {
    {
      std::lock_guard<std::mutex> lk(m);
      closed = true;
    }
    cv.notify_all();
  }
};

}  // namespace detail

// Alg. 2. The executor thread runs action chunks and feeds observations back
// through the queue; the predictor grounds real feedback, imagines the
// executing chunk's outcome (FDM mode) or reuses its stale forecast (naive
// mode), then predicts the next chunk. Prediction looks one chunk ahead only
// when the latency model says prediction actually costs time.
inline EpisodeResult run_async_episode(MoTParamsT<float>& params,
                                       const RunContext& ctx, AsyncMode mode,
                                       const LatencyModel& lat,
                                       uint64_t seed) {
  Rng root(seed);
  Rng env_rng = root.derive(100);
  WorldState state0 = init_state(ctx.variant, env_rng, ctx.env_cfg,
                                 ctx.variant == Variant::kSearchBox);

  const int tau = ctx.mcfg.tau;
  const int K = ctx.icfg.K;
  const int task_row = static_cast<int>(ctx.variant) + 1;
  const bool lookahead = lat.predict_latency > 0.0;

  EpisodeResult result;
  result.states.push_back(state0);

  ObsQueue obs_q;
  detail::ChunkChannel chunks;
  std::atomic<bool> stop{false};

  // ---- executor: owns the environment -------------------------------------
  std::mutex exec_m;
  WorldState state = state0;
  Rng perturb_rng = root.derive(300);
  std::thread executor([&] {
    int step_count = 0;
    while (!stop.load()) {
      auto chunk = chunks.pop();
      if (!chunk.has_value()) break;
      const int n_actions =
          static_cast<int>(chunk->actions.size()) / kActionDim;
      for (int i = 0; i < n_actions; ++i) {
        ToyAction act = detail::to_env_action(chunk->actions,
                                              static_cast<size_t>(i),
                                              ctx.stats);
        detail::maybe_perturb(state, ctx, step_count, perturb_rng);
        state = step(state, act, ctx.env_cfg);
        ++step_count;
        {
          std::lock_guard<std::mutex> lk(exec_m);
          result.executed.push_back(act);
          result.states.push_back(state);
          result.steps = step_count;
        }
        obs_q.push(step_count, render(state, ctx.env_cfg));
        if (is_success(state, ctx.env_cfg)) {
          std::lock_guard<std::mutex> lk(exec_m);
          result.success = true;
          stop.store(true);
          break;
        }
        if (step_count >= ctx.max_steps) {
          stop.store(true);
          break;
        }
      }
      {
        std::lock_guard<std::mutex> lk(exec_m);
        result.chunks += 1;
      }
      if (stop.load()) break;
    }
    obs_q.close();
  });

  // ---- predictor: owns the model and caches --------------------------------
  auto encode = [&](const Observation& o) {
    return detail::encode_obs(o, ctx.codec);
  };

  // per-chunk records; chunk_frames[c] holds the real frames observed while
  // chunk c executed (chunk 0 is the initial frame alone)
  std::vector<std::vector<float>> chunk_frames;   // flattened K x d_frame
  std::vector<std::vector<float>> chunk_actions;  // flattened tauK x 30
  chunk_frames.push_back(encode(render(state0, ctx.env_cfg)));
  chunk_actions.push_back({});

  KVCache full_cache(ctx.mcfg, task_row);
  cache_append_frame(params, full_cache, chunk_frames[0], 0, 0);

  // cold start (Alg. 2 line 2)
  ChunkPrediction pred =
      predict_chunk(params, full_cache, ctx.icfg, K, root.derive(1, 0));
  std::vector<float> stale_forecast = pred.frames;
  chunk_actions.push_back(pred.actions);
  chunks.push(pred);

  // waits for the tau*K observations of one executing chunk and returns the
  // sparsified frames; false when the episode ended first
  auto await_chunk_frames = [&](std::vector<float>& out) {
    for (int i = 0; i < K * tau; ++i) {
      auto item = obs_q.pop();
      if (!item.has_value()) return false;
      if (item->first % tau == 0) {
        auto z = encode(item->second);
        out.insert(out.end(), z.begin(), z.end());
      }
    }
    return static_cast<int>(out.size()) == K * ctx.mcfg.d_frame();
  };

  int executing = 1;  // chunk index currently executing
  while (!stop.load()) {
    if (!lookahead) {
      // prediction costs nothing: wait for the executing chunk's own
      // observations and keep the full grounded history, like sync mode
      std::vector<float> got;
      if (!await_chunk_frames(got) || stop.load()) break;
      chunk_frames.push_back(got);
      cache_append_chunk(params, full_cache, got,
                         chunk_actions[static_cast<size_t>(executing)],
                         (executing - 1) * K, executing);
      if (full_cache.last_video_frame() + K + 1 >= ctx.mcfg.max_frames) break;
      pred = predict_chunk(params, full_cache, ctx.icfg, K,
                           root.derive(1, static_cast<uint64_t>(executing)));
      chunk_actions.push_back(pred.actions);
      chunks.push(pred);
      ++executing;
      continue;
    }

    // lookahead: while chunk `executing` runs, ground the observations of
    // chunk executing-1, imagine the executing chunk's outcome, and predict
    // chunk executing+1. History before the grounded chunk is discarded.
    if (executing >= 2) {
      std::vector<float> got;
      if (!await_chunk_frames(got) || stop.load()) break;
      chunk_frames.push_back(got);
    }
    const int grounded_chunk = executing - 1;  // newest fully observed chunk

    // window: anchor frame, grounded chunk, executing actions + imagination
    KVCache window(ctx.mcfg, task_row);
    int base_frame = 0;  // window-relative index of the anchor frame
    if (grounded_chunk == 0) {
      cache_append_frame(params, window, chunk_frames[0], 0, 0);
      base_frame = 0;
    } else {
      const auto& anchor_src =
          chunk_frames[static_cast<size_t>(grounded_chunk - 1)];
      std::vector<float> anchor(
          anchor_src.end() - ctx.mcfg.d_frame(), anchor_src.end());
      cache_append_frame(params, window, anchor, 0, 0);
      cache_append_chunk(params, window,
                         chunk_frames[static_cast<size_t>(grounded_chunk)],
                         chunk_actions[static_cast<size_t>(grounded_chunk)],
                         0, 1);
      base_frame = K;
    }
    const int exec_chunk_id = window.last_chunk_id() + 1;
    {
      // executing actions enter as context of the chunk being imagined
      std::vector<Slot> slots;
      std::vector<float> arows, as;
      const auto& acts = chunk_actions[static_cast<size_t>(executing)];
      for (int i = 0; i < K; ++i)
        for (int j = 0; j < tau; ++j) {
          Slot sl;
          sl.modality = Modality::kAction;
          sl.frame_index = base_frame + i;
          sl.sub_index = j;
          sl.chunk_id = exec_chunk_id;
          slots.push_back(sl);
          const float* row =
              acts.data() + (static_cast<size_t>(i) * tau + j) * kActionDim;
          arows.insert(arows.end(), row, row + kActionDim);
          as.push_back(1.0f);
        }
      cache_append(params, window,
                   detail::build_tokens(ctx.mcfg, slots, {}, arows, {}, as,
                                        task_row));
    }
    std::vector<float> imagined;
    if (mode == AsyncMode::kFdmGrounded) {
      imagined =
          fdm_ground(params, window, ctx.icfg, K, base_frame + 1,
                     exec_chunk_id,
                     root.derive(2, static_cast<uint64_t>(executing)));
    } else {
      imagined = stale_forecast;  // never re-grounded
    }
    {
      std::vector<Slot> slots;
      std::vector<float> vs;
      for (int i = 0; i < K; ++i) {
        Slot sl;
        sl.modality = Modality::kVideo;
        sl.frame_index = base_frame + 1 + i;
        sl.chunk_id = exec_chunk_id;
        slots.push_back(sl);
        vs.push_back(ctx.icfg.video_s_stop);
      }
      cache_append(params, window,
                   detail::build_tokens(ctx.mcfg, slots, imagined, {}, vs, {},
                                        task_row));
    }

    pred = predict_chunk(params, window, ctx.icfg, K,
                         root.derive(1, static_cast<uint64_t>(executing)));
    stale_forecast = pred.frames;
    chunk_actions.push_back(pred.actions);
    chunks.push(pred);
    ++executing;
  }
  chunks.close();
  stop.store(true);
  obs_q.close();
  executor.join();

  const int per_chunk = K * tau;
  result.wall_steps = detail::async_wall(result.chunks, per_chunk, lat);
  result.actions_per_step =
      result.wall_steps > 0 ? result.steps / result.wall_steps : 0.0;
  return result;
}

// Open-loop imagination: fully denoise each video chunk and feed predictions
// back as context, decoding frames through the codec.
inline std::vector<Observation> rollout_video(MoTParamsT<float>& params,
                                              const RunContext& ctx,
                                              const Observation& first_obs,
                                              int horizon_frames,
                                              uint64_t seed) {
  std::vector<Observation> out;
  if (horizon_frames <= 0) return out;
  Rng root(seed);
  KVCache cache(ctx.mcfg, static_cast<int>(ctx.variant) + 1);
  auto z0 = detail::encode_obs(first_obs, ctx.codec);
  cache_append_frame(params, cache, z0, 0, 0);

  InferConfig icfg = ctx.icfg;
  icfg.video_steps = icfg.rollout_video_steps;

  int produced = 0;
  int chunk = 0;
  while (produced < horizon_frames) {
    auto pred = predict_chunk(params, cache, icfg, ctx.icfg.K,
                              root.derive(1, static_cast<uint64_t>(chunk)),
                              /*video_s_stop_override=*/1.0f);
    const int K = static_cast<int>(pred.frames.size()) / ctx.mcfg.d_frame();
    for (int i = 0; i < K && produced < horizon_frames; ++i) {
      LatentFrame z;
      z.n = ctx.mcfg.n_tokens;
      z.d = ctx.mcfg.d_latent;
      z.tokens.assign(
          pred.frames.begin() + static_cast<size_t>(i) * ctx.mcfg.d_frame(),
          pred.frames.begin() +
              static_cast<size_t>(i + 1) * ctx.mcfg.d_frame());
      out.push_back(decode_frame(z, ctx.codec));
      ++produced;
    }
    cache_append_chunk(params, cache, pred.frames, pred.actions,
                       pred.first_action_frame, pred.chunk_id,
                       /*frame_s_embed=*/1.0f);
    ++chunk;
    if (cache.last_video_frame() + ctx.icfg.K + 1 >= ctx.mcfg.max_frames)
      break;
  }
  return out;
}

}  // namespace arwm
