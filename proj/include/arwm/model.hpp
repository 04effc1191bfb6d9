// Copyright (c) 2026 ARWM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dual-stream Mixture-of-Transformers denoiser. A wide video stream and a
// narrow action stream each keep their own projections, norms and MLPs; per
// layer the action stream's Q/K/V are bridged up to the video width, joint
// masked attention runs over the interleaved sequence, and action outputs
// return through the bridge into a residual at the action width. Each latent
// frame enters as a single attention token (a linear map of its N x D_latent
// tokens); actions enter through the MLP tokenizer. Flow time is injected as
// an additive sinusoidal embedding per token and per stream; the task id is
// added to every video token, with a reserved null row for guidance dropout.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "arwm/checkpoint.hpp"
#include "arwm/codec.hpp"
#include "arwm/seqlayout.hpp"
#include "arwm/tensor.hpp"

namespace arwm {

struct ModelConfig {
  int d_v = 128;
  int d_a = 32;
  int n_layers = 4;
  int n_heads = 4;
  int tau = 2;
  int n_tokens = 16;
  int d_latent = 16;
  int k_lo = 1;
  int k_hi = 4;
  int n_tasks = 2;
  int max_frames = 64;
  int mlp_ratio = 4;
  int tokenizer_hidden = 256;

  int d_frame() const { return n_tokens * d_latent; }

  void validate() const {
    check(d_v % n_heads == 0, "n_heads must divide d_v");
    check(d_a <= d_v, "action width must not exceed video width");
    check(1 <= k_lo && k_lo <= k_hi && k_hi <= 8, "chunk range within [1,8]");
  }
};

enum class ActionInit {
  kScaledCopy,   // bilinear-resampled video weights, scaled by sqrt(d_v/d_a)
  kInterpCopy,   // resampled without the variance-preserving scale
  kRandom,       // fresh draws with the video stream's init recipe
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <class R>
struct StreamLayerT {
  TensorT<R> ln1_g, ln1_b;
  TensorT<R> wq, wk, wv, bq, bk, bv;
  TensorT<R> wo, bo;
  TensorT<R> ln2_g, ln2_b;
  TensorT<R> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <class R>
struct MoTLayerT {
  StreamLayerT<R> video;
  StreamLayerT<R> action;
  TensorT<R> bridge_in_w, bridge_in_b;    // d_a -> d_v
  TensorT<R> bridge_out_w, bridge_out_b;  // d_v -> d_a
};

template <class R>
struct MoTParamsT {
  std::vector<MoTLayerT<R>> layers;
  TensorT<R> embed_video_w, embed_video_b;  // d_frame -> d_v
  ActionTokenizerT<R> tokenizer;            // 30 -> hidden -> d_a
  TensorT<R> pos_video_frame;               // max_frames x d_v
  TensorT<R> pos_action_frame;              // max_frames x d_a
  TensorT<R> pos_action_sub;                // tau x d_a
  TensorT<R> task_table;                    // (n_tasks + 1) x d_v, row 0 null
  TensorT<R> final_ln_v_g, final_ln_v_b;
  TensorT<R> final_ln_a_g, final_ln_a_b;
  TensorT<R> head_video_w, head_video_b;    // d_v -> d_frame
  TensorT<R> head_action_w, head_action_b;  // d_a -> 30
  // flow-time-gated skip from the noisy input to the velocity output; the
  // trunk then only has to carry the content prediction, which is far lower
  // dimensional than the noise it would otherwise need to pass through
  TensorT<R> head_video_skip, head_action_skip;  // kTimeFeatDim -> 1
};

constexpr int kTimeFeatDim = 32;

namespace detail {

// stddev < 0 selects fan-in scaling per matrix; a fixed positive stddev is
// used by tests probing the width-dependent output statistics
template <class R>
StreamLayerT<R> init_stream_layer(int d, int mlp_ratio, Rng& rng,
                                  R stddev = R(-1)) {
  StreamLayerT<R> s;
  auto ones = [&](int n) {
    auto t = TensorT<R>::zeros({n}, true);
    for (auto& v : t.data()) v = R(1);
    return t;
  };
  auto sd = [&](int fan_in) {
    return stddev > R(0)
               ? stddev
               : static_cast<R>(1.0 / std::sqrt(static_cast<double>(fan_in)));
  };
  s.ln1_g = ones(d);
  s.ln1_b = TensorT<R>::zeros({d}, true);
  s.wq = TensorT<R>::randn({d, d}, rng, sd(d), true);
  s.wk = TensorT<R>::randn({d, d}, rng, sd(d), true);
  s.wv = TensorT<R>::randn({d, d}, rng, sd(d), true);
  s.bq = TensorT<R>::zeros({d}, true);
  s.bk = TensorT<R>::zeros({d}, true);
  s.bv = TensorT<R>::zeros({d}, true);
  s.wo = TensorT<R>::randn({d, d}, rng, sd(d), true);
  s.bo = TensorT<R>::zeros({d}, true);
  s.ln2_g = ones(d);
  s.ln2_b = TensorT<R>::zeros({d}, true);
  s.mlp_w1 = TensorT<R>::randn({d, d * mlp_ratio}, rng, sd(d), true);
  s.mlp_b1 = TensorT<R>::zeros({d * mlp_ratio}, true);
  s.mlp_w2 = TensorT<R>::randn({d * mlp_ratio, d}, rng, sd(d * mlp_ratio), true);
  s.mlp_b2 = TensorT<R>::zeros({d}, true);
  return s;
}

// Origin-aligned bilinear resampling of a matrix onto a smaller grid.
// Integer downsampling ratios land exactly on source entries, which keeps
// per-entry variance intact for the scaled-copy initialization.
template <class R>
TensorT<R> bilinear_resample(const TensorT<R>& src, int64_t rows,
                             int64_t cols) {
  const int64_t r0 = src.rank() == 2 ? src.dim(0) : src.dim(0);
  const int64_t c0 = src.rank() == 2 ? src.dim(1) : 1;
  auto at = [&](int64_t i, int64_t j) { return src.data()[i * c0 + j]; };
  TensorT<R> out = TensorT<R>::zeros(
      src.rank() == 2 ? Shape{rows, cols} : Shape{rows}, true);
  for (int64_t i = 0; i < rows; ++i) {
    const double py = static_cast<double>(i) * r0 / rows;
    const int64_t y0 = std::min<int64_t>(static_cast<int64_t>(py), r0 - 1);
    const int64_t y1 = std::min<int64_t>(y0 + 1, r0 - 1);
    const R wy = static_cast<R>(py - static_cast<double>(y0));
    for (int64_t j = 0; j < cols; ++j) {
      const double px = static_cast<double>(j) * c0 / cols;
      const int64_t x0 = std::min<int64_t>(static_cast<int64_t>(px), c0 - 1);
      const int64_t x1 = std::min<int64_t>(x0 + 1, c0 - 1);
      const R wx = static_cast<R>(px - static_cast<double>(x0));
      const R top = (R(1) - wx) * at(y0, x0) + wx * at(y0, x1);
      const R bot = (R(1) - wx) * at(y1, x0) + wx * at(y1, x1);
      out.data()[i * cols + j] = (R(1) - wy) * top + wy * bot;
    }
  }
  return out;
}

}  // namespace detail

// Resample every video-stream weight matrix onto the action shape and apply
// the variance-preserving factor alpha = sqrt(d_v / d_a); biases and norm
// gains are resampled without scaling.
template <class R>
StreamLayerT<R> init_action_stream(const StreamLayerT<R>& video, int d_v,
                                   int d_a, int mlp_ratio, bool scaled = true) {
  using detail::bilinear_resample;
  const R alpha =
      scaled ? static_cast<R>(std::sqrt(static_cast<double>(d_v) / d_a))
             : R(1);
  StreamLayerT<R> a;
  auto mat = [&](const TensorT<R>& src, int64_t r, int64_t c) {
    auto t = bilinear_resample(src, r, c);
    for (auto& v : t.data()) v *= alpha;
    return t;
  };
  auto vec = [&](const TensorT<R>& src, int64_t n) {
    return bilinear_resample(src, n, 1);
  };
  a.ln1_g = vec(video.ln1_g, d_a);
  a.ln1_b = vec(video.ln1_b, d_a);
  a.wq = mat(video.wq, d_a, d_a);
  a.wk = mat(video.wk, d_a, d_a);
  a.wv = mat(video.wv, d_a, d_a);
  a.bq = vec(video.bq, d_a);
  a.bk = vec(video.bk, d_a);
  a.bv = vec(video.bv, d_a);
  a.wo = mat(video.wo, d_a, d_a);
  a.bo = vec(video.bo, d_a);
  a.ln2_g = vec(video.ln2_g, d_a);
  a.ln2_b = vec(video.ln2_b, d_a);
  a.mlp_w1 = mat(video.mlp_w1, d_a, static_cast<int64_t>(d_a) * mlp_ratio);
  a.mlp_b1 = vec(video.mlp_b1, static_cast<int64_t>(d_a) * mlp_ratio);
  a.mlp_w2 = mat(video.mlp_w2, static_cast<int64_t>(d_a) * mlp_ratio, d_a);
  a.mlp_b2 = vec(video.mlp_b2, d_a);
  return a;
}

template <class R>
MoTParamsT<R> init_params(const ModelConfig& cfg, Rng& rng,
                          ActionInit mode = ActionInit::kScaledCopy,
                          R stddev = R(-1)) {
  cfg.validate();
  MoTParamsT<R> p;
  p.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& layer : p.layers) {
    layer.video =
        detail::init_stream_layer<R>(cfg.d_v, cfg.mlp_ratio, rng, stddev);
    switch (mode) {
      case ActionInit::kScaledCopy:
        layer.action = init_action_stream(layer.video, cfg.d_v, cfg.d_a,
                                          cfg.mlp_ratio, true);
        break;
      case ActionInit::kInterpCopy:
        layer.action = init_action_stream(layer.video, cfg.d_v, cfg.d_a,
                                          cfg.mlp_ratio, false);
        break;
      case ActionInit::kRandom:
        layer.action =
            detail::init_stream_layer<R>(cfg.d_a, cfg.mlp_ratio, rng, stddev);
        break;
    }
    // fan-in bridge init keeps cross-modal signal on par with in-stream paths
    layer.bridge_in_w = TensorT<R>::randn(
        {cfg.d_a, cfg.d_v}, rng,
        static_cast<R>(1.0 / std::sqrt(static_cast<double>(cfg.d_a))), true);
    layer.bridge_in_b = TensorT<R>::zeros({cfg.d_v}, true);
    layer.bridge_out_w = TensorT<R>::randn(
        {cfg.d_v, cfg.d_a}, rng,
        static_cast<R>(1.0 / std::sqrt(static_cast<double>(cfg.d_v))), true);
    layer.bridge_out_b = TensorT<R>::zeros({cfg.d_a}, true);
  }
  // fan-in scaled input paths keep content on par with the time signal
  p.embed_video_w = TensorT<R>::randn(
      {cfg.d_frame(), cfg.d_v}, rng,
      static_cast<R>(1.0 / std::sqrt(static_cast<double>(cfg.d_frame()))),
      true);
  p.embed_video_b = TensorT<R>::zeros({cfg.d_v}, true);
  p.tokenizer = ActionTokenizerT<R>::init_fan_in(cfg.d_a, rng,
                                                 cfg.tokenizer_hidden);
  p.pos_video_frame =
      TensorT<R>::randn({cfg.max_frames, cfg.d_v}, rng, R(0.1), true);
  p.pos_action_frame =
      TensorT<R>::randn({cfg.max_frames, cfg.d_a}, rng, R(0.1), true);
  p.pos_action_sub =
      TensorT<R>::randn({std::max(cfg.tau, 1), cfg.d_a}, rng, R(0.1), true);
  p.task_table =
      TensorT<R>::randn({cfg.n_tasks + 1, cfg.d_v}, rng, R(0.1), true);
  auto ones = [&](int n) {
    auto t = TensorT<R>::zeros({n}, true);
    for (auto& v : t.data()) v = R(1);
    return t;
  };
  p.final_ln_v_g = ones(cfg.d_v);
  p.final_ln_v_b = TensorT<R>::zeros({cfg.d_v}, true);
  p.final_ln_a_g = ones(cfg.d_a);
  p.final_ln_a_b = TensorT<R>::zeros({cfg.d_a}, true);
  // velocity heads start at zero so the initial prediction is the zero field
  p.head_video_w = TensorT<R>::zeros({cfg.d_v, cfg.d_frame()}, true);
  p.head_video_b = TensorT<R>::zeros({cfg.d_frame()}, true);
  p.head_action_w = TensorT<R>::zeros({cfg.d_a, kActionDim}, true);
  p.head_action_b = TensorT<R>::zeros({kActionDim}, true);
  p.head_video_skip = TensorT<R>::zeros({kTimeFeatDim, 1}, true);
  p.head_action_skip = TensorT<R>::zeros({kTimeFeatDim, 1}, true);
  return p;
}

// Named views over every trainable tensor, in checkpoint order.
template <class R>
std::vector<std::pair<std::string, TensorT<R>>> named_params(
    MoTParamsT<R>& p) {
  std::vector<std::pair<std::string, TensorT<R>>> out;
  auto add = [&](const std::string& name, const TensorT<R>& t) {
    out.emplace_back(name, t);
  };
  for (size_t i = 0; i < p.layers.size(); ++i) {
    const std::string base = "mot.layer" + std::to_string(i) + ".";
    auto stream = [&](const std::string& prefix, StreamLayerT<R>& s) {
      add(prefix + "ln1.g", s.ln1_g);
      add(prefix + "ln1.b", s.ln1_b);
      add(prefix + "qkv.wq", s.wq);
      add(prefix + "qkv.wk", s.wk);
      add(prefix + "qkv.wv", s.wv);
      add(prefix + "qkv.bq", s.bq);
      add(prefix + "qkv.bk", s.bk);
      add(prefix + "qkv.bv", s.bv);
      add(prefix + "out.w", s.wo);
      add(prefix + "out.b", s.bo);
      add(prefix + "ln2.g", s.ln2_g);
      add(prefix + "ln2.b", s.ln2_b);
      add(prefix + "mlp.w1", s.mlp_w1);
      add(prefix + "mlp.b1", s.mlp_b1);
      add(prefix + "mlp.w2", s.mlp_w2);
      add(prefix + "mlp.b2", s.mlp_b2);
    };
    stream(base + "video.", p.layers[i].video);
    stream(base + "action.", p.layers[i].action);
    add(base + "bridge.in.w", p.layers[i].bridge_in_w);
    add(base + "bridge.in.b", p.layers[i].bridge_in_b);
    add(base + "bridge.out.w", p.layers[i].bridge_out_w);
    add(base + "bridge.out.b", p.layers[i].bridge_out_b);
  }
  add("embed.video.w", p.embed_video_w);
  add("embed.video.b", p.embed_video_b);
  add("embed.action.w1", p.tokenizer.w1);
  add("embed.action.b1", p.tokenizer.b1);
  add("embed.action.w2", p.tokenizer.w2);
  add("embed.action.b2", p.tokenizer.b2);
  add("pos.video.frame", p.pos_video_frame);
  add("pos.action.frame", p.pos_action_frame);
  add("pos.action.sub", p.pos_action_sub);
  add("cond.task_table", p.task_table);
  add("final.video.g", p.final_ln_v_g);
  add("final.video.b", p.final_ln_v_b);
  add("final.action.g", p.final_ln_a_g);
  add("final.action.b", p.final_ln_a_b);
  add("head.video", p.head_video_w);
  add("head.video.b", p.head_video_b);
  add("head.action", p.head_action_w);
  add("head.action.b", p.head_action_b);
  add("head.video.skip", p.head_video_skip);
  add("head.action.skip", p.head_action_skip);
  return out;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

// Sinusoidal flow-time embedding (parameter free). Damped so the additive
// time signal does not drown the content embeddings before the first norm.
constexpr double kTimeEmbedScale = 0.5;

template <class R>
std::vector<R> time_embedding(R s, int d) {
  std::vector<R> e(static_cast<size_t>(d), R(0));
  const int half = d / 2;
  const double pos = static_cast<double>(s) * 10.0;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[static_cast<size_t>(i)] =
        static_cast<R>(kTimeEmbedScale * std::sin(pos * freq));
    e[static_cast<size_t>(half + i)] =
        static_cast<R>(kTimeEmbedScale * std::cos(pos * freq));
  }
  return e;
}

// Model-facing description of one attention sequence. Token `i` of the joint
// sequence is video_pos/action_pos row `r` of its stream; every token carries
// its own flow time (clean context enters at s = 1).
template <class R>
struct StreamInputsT {
  std::vector<int64_t> video_pos, action_pos;  // joint-sequence positions
  TensorT<R> video_x;   // (Lv, d_frame) latent frames
  TensorT<R> action_x;  // (La, 30) normalized unified actions
  std::vector<int64_t> video_frame, action_frame, action_sub;
  std::vector<R> video_s, action_s;
  std::vector<int64_t> video_task;  // task-table row per video token (0=null)

  int64_t joint_length() const {
    return static_cast<int64_t>(video_pos.size() + action_pos.size());
  }
};

using StreamInputs = StreamInputsT<float>;

// Per-layer joint-attention keys/values of already-processed tokens.
template <class R>
struct KVSnapshotT {
  int64_t length = 0;
  std::vector<std::vector<R>> k, v;  // per layer, length * d_v
};

using KVSnapshot = KVSnapshotT<float>;

template <class R>
struct ForwardResultT {
  TensorT<R> video_velocity;   // (Lv, d_frame)
  TensorT<R> action_velocity;  // (La, 30)
  // joint-sequence K/V per layer for the *new* tokens, for cache appends
  std::vector<std::vector<R>> new_k, new_v;
};

using ForwardResult = ForwardResultT<float>;

// Joint forward over an interleaved sequence. `mask` has one row per new
// joint token and one column per cache token followed by the new tokens.
// With a cache present the pass must run under NoGradGuard semantics
// (the cache holds raw activations with no graph history).
template <class R>
ForwardResultT<R> forward(const ModelConfig& cfg, MoTParamsT<R>& p,
                          const StreamInputsT<R>& in, const MaskMatrix& mask,
                          const KVSnapshotT<R>* cache = nullptr,
                          bool want_kv = false) {
  const int64_t Lv = static_cast<int64_t>(in.video_pos.size());
  const int64_t La = static_cast<int64_t>(in.action_pos.size());
  const int64_t L = Lv + La;
  const int64_t Lc = cache ? cache->length : 0;
  check_dims(mask.rows == L && mask.cols == Lc + L, "forward mask shape");
  check_dims(!in.video_pos.empty() || !in.action_pos.empty(),
             "forward needs at least one token");
  if (Lv) {
    check_dims(in.video_x.dim(0) == Lv && in.video_x.dim(1) == cfg.d_frame(),
               "video input shape");
    check_dims(static_cast<int64_t>(in.video_s.size()) == Lv &&
                   static_cast<int64_t>(in.video_frame.size()) == Lv &&
                   static_cast<int64_t>(in.video_task.size()) == Lv,
               "video metadata length");
  }
  if (La) {
    check_dims(in.action_x.dim(0) == La && in.action_x.dim(1) == kActionDim,
               "action input shape");
    check_dims(static_cast<int64_t>(in.action_s.size()) == La &&
                   static_cast<int64_t>(in.action_frame.size()) == La &&
                   static_cast<int64_t>(in.action_sub.size()) == La,
               "action metadata length");
  }
  for (int64_t f : in.video_frame)
    check(f >= 0 && f < cfg.max_frames, "video frame index out of range");
  for (int64_t f : in.action_frame)
    check(f >= 0 && f < cfg.max_frames, "action frame index out of range");

  ForwardResultT<R> result;

  // ---- input embeddings -------------------------------------------------
  TensorT<R> hv, ha;
  if (Lv) {
    hv = linear(in.video_x, p.embed_video_w, p.embed_video_b);
    hv = add(hv, row_gather(p.pos_video_frame, in.video_frame));
    hv = add(hv, row_gather(p.task_table, in.video_task));
    TensorT<R> te = TensorT<R>::zeros({Lv, cfg.d_v});
    for (int64_t i = 0; i < Lv; ++i) {
      auto e = time_embedding<R>(in.video_s[static_cast<size_t>(i)], cfg.d_v);
      std::copy(e.begin(), e.end(), te.data().begin() + i * cfg.d_v);
    }
    hv = add(hv, te);
  }
  if (La) {
    ha = p.tokenizer.forward(in.action_x);
    ha = add(ha, row_gather(p.pos_action_frame, in.action_frame));
    ha = add(ha, row_gather(p.pos_action_sub, in.action_sub));
    TensorT<R> te = TensorT<R>::zeros({La, cfg.d_a});
    for (int64_t i = 0; i < La; ++i) {
      auto e = time_embedding<R>(in.action_s[static_cast<size_t>(i)], cfg.d_a);
      std::copy(e.begin(), e.end(), te.data().begin() + i * cfg.d_a);
    }
    ha = add(ha, te);
  }

  if (want_kv) {
    result.new_k.resize(static_cast<size_t>(cfg.n_layers));
    result.new_v.resize(static_cast<size_t>(cfg.n_layers));
  }

  // ---- MoT layers --------------------------------------------------------
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& lay = p.layers[static_cast<size_t>(l)];
    TensorT<R> qj = TensorT<R>::zeros({L, cfg.d_v});
    TensorT<R> kj, vj;

    TensorT<R> hvn, han;
    if (Lv) {
      hvn = layernorm(hv, lay.video.ln1_g, lay.video.ln1_b);
      auto qv = linear(hvn, lay.video.wq, lay.video.bq);
      auto kv = linear(hvn, lay.video.wk, lay.video.bk);
      auto vv = linear(hvn, lay.video.wv, lay.video.bv);
      qj = row_scatter(qv, in.video_pos, L);
      kj = row_scatter(kv, in.video_pos, L);
      vj = row_scatter(vv, in.video_pos, L);
    }
    if (La) {
      han = layernorm(ha, lay.action.ln1_g, lay.action.ln1_b);
      auto qa = linear(linear(han, lay.action.wq, lay.action.bq),
                       lay.bridge_in_w, lay.bridge_in_b);
      auto ka = linear(linear(han, lay.action.wk, lay.action.bk),
                       lay.bridge_in_w, lay.bridge_in_b);
      auto va = linear(linear(han, lay.action.wv, lay.action.bv),
                       lay.bridge_in_w, lay.bridge_in_b);
      auto qs = row_scatter(qa, in.action_pos, L);
      auto ks = row_scatter(ka, in.action_pos, L);
      auto vs = row_scatter(va, in.action_pos, L);
      qj = Lv ? add(qj, qs) : qs;
      kj = Lv ? add(kj, ks) : ks;
      vj = Lv ? add(vj, vs) : vs;
    }

    TensorT<R> k_all = kj, v_all = vj;
    if (cache && Lc) {
      // prepend raw cached K/V; inference path, no graph behind these rows
      k_all = TensorT<R>::zeros({Lc + L, cfg.d_v});
      v_all = TensorT<R>::zeros({Lc + L, cfg.d_v});
      std::copy(cache->k[static_cast<size_t>(l)].begin(),
                cache->k[static_cast<size_t>(l)].end(), k_all.data().begin());
      std::copy(cache->v[static_cast<size_t>(l)].begin(),
                cache->v[static_cast<size_t>(l)].end(), v_all.data().begin());
      std::copy(kj.data().begin(), kj.data().end(),
                k_all.data().begin() + Lc * cfg.d_v);
      std::copy(vj.data().begin(), vj.data().end(),
                v_all.data().begin() + Lc * cfg.d_v);
    }
    if (want_kv) {
      result.new_k[static_cast<size_t>(l)] = kj.data();
      result.new_v[static_cast<size_t>(l)] = vj.data();
    }

    auto attn = softmax_attention(qj, k_all, v_all, mask, cfg.n_heads);

    if (Lv) {
      auto ov = row_gather(attn, in.video_pos);
      hv = add(hv, linear(ov, lay.video.wo, lay.video.bo));
      auto hn2 = layernorm(hv, lay.video.ln2_g, lay.video.ln2_b);
      auto mid = gelu(linear(hn2, lay.video.mlp_w1, lay.video.mlp_b1));
      hv = add(hv, linear(mid, lay.video.mlp_w2, lay.video.mlp_b2));
    }
    if (La) {
      auto oa = row_gather(attn, in.action_pos);
      auto back = linear(oa, lay.bridge_out_w, lay.bridge_out_b);
      ha = add(ha, linear(back, lay.action.wo, lay.action.bo));
      auto hn2 = layernorm(ha, lay.action.ln2_g, lay.action.ln2_b);
      auto mid = gelu(linear(hn2, lay.action.mlp_w1, lay.action.mlp_b1));
      ha = add(ha, linear(mid, lay.action.mlp_w2, lay.action.mlp_b2));
    }
  }

  // ---- velocity heads ----------------------------------------------------
  auto time_feats = [](const std::vector<R>& svals) {
    const int64_t n = static_cast<int64_t>(svals.size());
    TensorT<R> f = TensorT<R>::zeros({n, kTimeFeatDim});
    for (int64_t i = 0; i < n; ++i) {
      auto e = time_embedding<R>(svals[static_cast<size_t>(i)], kTimeFeatDim);
      std::copy(e.begin(), e.end(), f.data().begin() + i * kTimeFeatDim);
    }
    return f;
  };
  if (Lv) {
    auto hn = layernorm(hv, p.final_ln_v_g, p.final_ln_v_b);
    auto gate = matmul(time_feats(in.video_s), p.head_video_skip);
    result.video_velocity = add(linear(hn, p.head_video_w, p.head_video_b),
                                scale_rows(in.video_x, gate));
  } else {
    result.video_velocity = TensorT<R>::zeros({0, cfg.d_frame()});
  }
  if (La) {
    auto hn = layernorm(ha, p.final_ln_a_g, p.final_ln_a_b);
    auto gate = matmul(time_feats(in.action_s), p.head_action_skip);
    result.action_velocity = add(linear(hn, p.head_action_w, p.head_action_b),
                                 scale_rows(in.action_x, gate));
  } else {
    result.action_velocity = TensorT<R>::zeros({0, kActionDim});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint round trip
// ---------------------------------------------------------------------------

inline std::vector<NamedTensor> params_to_tensors(MoTParamsT<float>& p,
                                                  const ModelConfig& cfg) {
  std::vector<NamedTensor> out;
  NamedTensor meta;
  meta.name = "meta.config";
  meta.shape = {13};
  meta.data = {static_cast<float>(cfg.d_v),
               static_cast<float>(cfg.d_a),
               static_cast<float>(cfg.n_layers),
               static_cast<float>(cfg.n_heads),
               static_cast<float>(cfg.tau),
               static_cast<float>(cfg.n_tokens),
               static_cast<float>(cfg.d_latent),
               static_cast<float>(cfg.k_lo),
               static_cast<float>(cfg.k_hi),
               static_cast<float>(cfg.n_tasks),
               static_cast<float>(cfg.max_frames),
               static_cast<float>(cfg.tokenizer_hidden),
               static_cast<float>(cfg.mlp_ratio)};
  out.push_back(std::move(meta));
  for (auto& [name, t] : named_params(p)) {
    NamedTensor nt;
    nt.name = name;
    nt.shape = t.shape();
    nt.data = t.data();
    out.push_back(std::move(nt));
  }
  return out;
}

inline ModelConfig config_from_tensors(const std::vector<NamedTensor>& ts) {
  for (const auto& t : ts)
    if (t.name == "meta.config") {
      check(t.data.size() >= 13, "bad meta.config tensor");
      ModelConfig cfg;
      cfg.d_v = static_cast<int>(t.data[0]);
      cfg.d_a = static_cast<int>(t.data[1]);
      cfg.n_layers = static_cast<int>(t.data[2]);
      cfg.n_heads = static_cast<int>(t.data[3]);
      cfg.tau = static_cast<int>(t.data[4]);
      cfg.n_tokens = static_cast<int>(t.data[5]);
      cfg.d_latent = static_cast<int>(t.data[6]);
      cfg.k_lo = static_cast<int>(t.data[7]);
      cfg.k_hi = static_cast<int>(t.data[8]);
      cfg.n_tasks = static_cast<int>(t.data[9]);
      cfg.max_frames = static_cast<int>(t.data[10]);
      cfg.tokenizer_hidden = static_cast<int>(t.data[11]);
      cfg.mlp_ratio = static_cast<int>(t.data[12]);
      return cfg;
    }
  throw ContractError("checkpoint has no meta.config tensor");
}

inline void params_from_tensors(MoTParamsT<float>& p,
                                const std::vector<NamedTensor>& ts) {
  auto named = named_params(p);
  for (auto& [name, t] : named) {
    bool found = false;
    for (const auto& nt : ts) {
      if (nt.name != name) continue;
      check_dims(nt.shape == t.shape(), "checkpoint shape mismatch: " + name);
      t.data() = nt.data;
      found = true;
      break;
    }
    check(found, "checkpoint missing tensor: " + name);
  }
}

}  // namespace arwm
