// Copyright (c) 2026 ARWM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Teacher-forcing training over packed interleaved sequences.
//
// Each training segment is a random window of an episode laid out as
// [z_0, a_0*, z_1, ...] with sampled chunk sizes. Tokens appear in two
// roles inside one forward pass: a context copy of every slot (clean, or
// video re-noised by the history augmentation) and a target copy of every
// chunk>=1 slot (noised at its chunk's flow time). The mask wires targets to
// strictly-earlier context plus same-chunk targets, which reproduces the
// inference-time attention pattern exactly; chunk 0 is pure grounding
// context, as it is at inference. The forward-dynamics loss runs a second
// pass whose video targets may also attend the *clean* same-chunk actions.
#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "arwm/codec.hpp"
#include "arwm/flow.hpp"
#include "arwm/model.hpp"
#include "arwm/optim.hpp"
#include "arwm/pushworld.hpp"
#include "arwm/seqlayout.hpp"

namespace arwm {

struct TrainConfig {
  float peak_lr = 3e-3f;
  int warmup_steps = 50;
  int steps = 1500;
  float weight_decay = 0.01f;
  float clip_norm = 2.0f;
  float adam_beta2 = 0.99f;
  float lambda_inv = 1.0f;
  float lambda_fdm = 0.0f;  // enabled in the post-training phase
  float p_aug = 0.5f;
  float s_aug_lo = 0.5f;
  float s_aug_hi = 1.0f;
  float cond_dropout = 0.1f;
  int k_lo = 1;
  int k_hi = 4;
  int batch_episodes = 6;
  int max_window_frames = 16;
  int64_t max_pack_slots = 512;
  float val_frac = 0.1f;
  int val_every = 50;
  uint64_t seed = 0;

  void validate() const {
    check(p_aug >= 0 && p_aug <= 1 && cond_dropout >= 0 && cond_dropout <= 1,
          "probabilities must lie in [0,1]");
    check(lambda_inv >= 0 && lambda_fdm >= 0, "loss weights must be >= 0");
    check(0 <= s_aug_lo && s_aug_lo <= s_aug_hi && s_aug_hi <= 1,
          "bad s_aug range");
  }
};

// Episode after sparsification and normalization: frames[f] is the latent of
// observation f*tau, action group f holds the tau actions bridging frame f
// to frame f+1.
struct PreparedEpisode {
  std::vector<float> frames;   // (n_frames) x d_frame
  std::vector<float> actions;  // (n_frames-1) x tau x 30
  int n_frames = 0;
  int task_id = 0;
};

inline PreparedEpisode prepare_episode(const Episode& ep, int tau,
                                       const QuantileStats& stats,
                                       const CodecConfig& codec = {}) {
  PreparedEpisode out;
  out.task_id = ep.task_id;
  const int groups = static_cast<int>(ep.actions.size()) / tau;
  out.n_frames = groups + 1;
  const int d_frame = codec.n_tokens() * codec.d_latent();
  out.frames.reserve(static_cast<size_t>(out.n_frames) * d_frame);
  for (int f = 0; f < out.n_frames; ++f) {
    auto z = encode_frame(ep.observations[static_cast<size_t>(f) * tau], codec);
    out.frames.insert(out.frames.end(), z.tokens.begin(), z.tokens.end());
  }
  out.actions.reserve(static_cast<size_t>(groups) * tau * kActionDim);
  for (int i = 0; i < groups * tau; ++i) {
    auto u = normalize_action(pack_toy_action(ep.actions[static_cast<size_t>(i)]),
                              stats);
    out.actions.insert(out.actions.end(), u.v.begin(), u.v.end());
  }
  return out;
}

// One windowed episode inside a packed batch.
struct TrainSegment {
  InterleavedSequence seq;
  std::vector<float> ctx_frames;    // window frames, possibly re-noised
  std::vector<float> clean_frames;  // pristine window frames
  std::vector<float> actions;       // window action slots (pad rows zero)
  float ctx_video_s = 1.0f;         // s_aug when augmentation fired
  int task_row = 0;                 // 0 = null condition
  std::vector<float> s_video, s_action;  // per chunk
  std::vector<float> video_eps;          // per frame x d_frame
  std::vector<float> action_eps;         // per action slot x 30
  int episode_index = 0;
};

struct TrainBatch {
  std::vector<std::vector<TrainSegment>> packs;
};

inline TrainSegment make_segment(const PreparedEpisode& ep,
                                 const TrainConfig& cfg,
                                 const ModelConfig& mcfg, Rng& rng,
                                 int episode_index) {
  TrainSegment seg;
  seg.episode_index = episode_index;
  const int d_frame = mcfg.d_frame();
  const int tau = mcfg.tau;

  // random window of at least two frames
  const int max_w = std::min(cfg.max_window_frames, ep.n_frames);
  Rng wrng = rng.derive(1);
  const int w = static_cast<int>(wrng.uniform_int(2, std::max(2, max_w)));
  const int start =
      static_cast<int>(wrng.uniform_int(0, ep.n_frames - w));
  const bool terminal = start + w == ep.n_frames;
  const int action_groups = terminal ? w - 1 : w;

  auto sizes = sample_chunk_sizes(w, cfg.k_lo, cfg.k_hi, wrng);
  // chunk 0 is pure grounding context; keep at least one target chunk
  if (sizes.size() == 1) {
    sizes[0] -= 1;
    sizes.insert(sizes.begin(), 1);
  }
  seg.seq = build_layout(w, tau, sizes, action_groups);

  seg.clean_frames.assign(
      ep.frames.begin() + static_cast<size_t>(start) * d_frame,
      ep.frames.begin() + static_cast<size_t>(start + w) * d_frame);
  seg.actions.assign(static_cast<size_t>(w) * tau * kActionDim, 0.0f);
  std::copy(ep.actions.begin() + static_cast<size_t>(start) * tau * kActionDim,
            ep.actions.begin() +
                static_cast<size_t>(start + action_groups) * tau * kActionDim,
            seg.actions.begin());

  // Eq. 10 augmentation of the context video copies
  Rng arng = rng.derive(2);
  auto clean = Tensor::from_data({w, d_frame}, seg.clean_frames);
  auto [aug, s_aug] =
      noisy_history_augment(clean, cfg.p_aug, cfg.s_aug_lo, cfg.s_aug_hi, arng);
  seg.ctx_frames = aug.data();
  seg.ctx_video_s = s_aug.value_or(1.0f);

  Rng drng = rng.derive(3);
  seg.task_row = drng.bernoulli(cfg.cond_dropout) ? 0 : ep.task_id + 1;

  // per-chunk flow times, drawn independently per modality
  Rng srng = rng.derive(4);
  for (size_t c = 0; c < sizes.size(); ++c) {
    seg.s_video.push_back(
        static_cast<float>(sample_flow_time(FlowTimeSampler::kUniform, srng)));
    seg.s_action.push_back(
        static_cast<float>(sample_flow_time(FlowTimeSampler::kUniform, srng)));
  }

  Rng nrng = rng.derive(5);
  seg.video_eps.resize(static_cast<size_t>(w) * d_frame);
  for (auto& v : seg.video_eps) v = static_cast<float>(nrng.normal());
  seg.action_eps.resize(static_cast<size_t>(w) * tau * kActionDim);
  for (auto& v : seg.action_eps) v = static_cast<float>(nrng.normal());
  return seg;
}

inline TrainBatch make_batch(const std::vector<PreparedEpisode>& episodes,
                             const TrainConfig& cfg, const ModelConfig& mcfg,
                             Rng& rng) {
  check(!episodes.empty(), "make_batch needs episodes");
  TrainBatch batch;
  std::vector<TrainSegment> segments;
  for (int b = 0; b < cfg.batch_episodes; ++b) {
    const int e =
        static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(episodes.size()) - 1));
    Rng erng = rng.derive(static_cast<uint64_t>(b), 77);
    segments.push_back(make_segment(episodes[static_cast<size_t>(e)], cfg,
                                    mcfg, erng, e));
  }
  // greedy first-fit packing on layout slot counts
  std::vector<std::vector<TrainSegment>> packs;
  std::vector<int64_t> sizes;
  for (auto& seg : segments) {
    const int64_t len = seg.seq.length();
    bool placed = false;
    for (size_t i = 0; i < packs.size(); ++i) {
      if (sizes[i] + len <= cfg.max_pack_slots) {
        packs[i].push_back(seg);
        sizes[i] += len;
        placed = true;
        break;
      }
    }
    if (!placed) {
      packs.push_back({seg});
      sizes.push_back(len);
    }
  }
  batch.packs = std::move(packs);
  return batch;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct LossValues {
  double dyn = 0, inv = 0, fdm = 0, total = 0;
};

namespace detail {

// Joint-token assembly for one pack. Context copies of every non-padding
// slot come first, then the requested target copies.
struct PackTokens {
  StreamInputs in;
  std::vector<float> video_targets;   // per video target row, d_frame
  std::vector<float> action_targets;  // per action target row, 30
  std::vector<int64_t> video_target_rows,
      action_target_rows;  // rows in the stream tensors
};

enum class TargetMode { kJoint, kFdm };

inline PackTokens assemble_pack(const std::vector<TrainSegment>& pack,
                                const ModelConfig& mcfg, MaskMatrix& mask_out,
                                TargetMode mode) {
  const int d_frame = mcfg.d_frame();
  PackTokens out;
  StreamInputs& in = out.in;
  std::vector<float> vx, ax;

  struct TokenRef {
    int segment;
    int chunk;
    bool target;
    Modality modality;
  };
  std::vector<TokenRef> refs;

  int64_t joint = 0;
  for (size_t si = 0; si < pack.size(); ++si) {
    const TrainSegment& seg = pack[si];
    const auto& seq = seg.seq;
    // context copies
    for (int64_t i = 0; i < seq.length(); ++i) {
      const Slot& s = seq.slots[i];
      if (s.padding) continue;
      if (s.modality == Modality::kVideo) {
        in.video_pos.push_back(joint);
        in.video_frame.push_back(s.frame_index);
        in.video_s.push_back(seg.ctx_video_s);
        in.video_task.push_back(seg.task_row);
        const float* row = seg.ctx_frames.data() +
                           static_cast<size_t>(s.frame_index) * d_frame;
        vx.insert(vx.end(), row, row + d_frame);
      } else {
        in.action_pos.push_back(joint);
        in.action_frame.push_back(s.frame_index);
        in.action_sub.push_back(s.sub_index);
        in.action_s.push_back(1.0f);
        const size_t slot =
            static_cast<size_t>(s.frame_index) * mcfg.tau + s.sub_index;
        const float* row = seg.actions.data() + slot * kActionDim;
        ax.insert(ax.end(), row, row + kActionDim);
      }
      refs.push_back({static_cast<int>(si), s.chunk_id, false, s.modality});
      ++joint;
    }
    // target copies: every chunk >= 1 slot (video only in FDM mode)
    for (int64_t i = 0; i < seq.length(); ++i) {
      const Slot& s = seq.slots[i];
      if (s.padding || s.chunk_id < 1) continue;
      if (s.modality == Modality::kVideo) {
        const float sv = seg.s_video[static_cast<size_t>(s.chunk_id)];
        in.video_pos.push_back(joint);
        in.video_frame.push_back(s.frame_index);
        in.video_s.push_back(sv);
        in.video_task.push_back(seg.task_row);
        const float* x1 = seg.clean_frames.data() +
                          static_cast<size_t>(s.frame_index) * d_frame;
        const float* eps = seg.video_eps.data() +
                           static_cast<size_t>(s.frame_index) * d_frame;
        for (int j = 0; j < d_frame; ++j) {
          vx.push_back((1.0f - sv) * eps[j] + sv * x1[j]);
          out.video_targets.push_back(x1[j] - eps[j]);
        }
        out.video_target_rows.push_back(
            static_cast<int64_t>(in.video_pos.size()) - 1);
      } else {
        if (mode == TargetMode::kFdm) continue;
        const float sa = seg.s_action[static_cast<size_t>(s.chunk_id)];
        in.action_pos.push_back(joint);
        in.action_frame.push_back(s.frame_index);
        in.action_sub.push_back(s.sub_index);
        in.action_s.push_back(sa);
        const size_t slot =
            static_cast<size_t>(s.frame_index) * mcfg.tau + s.sub_index;
        const float* x1 = seg.actions.data() + slot * kActionDim;
        const float* eps = seg.action_eps.data() + slot * kActionDim;
        for (int j = 0; j < kActionDim; ++j) {
          ax.push_back((1.0f - sa) * eps[j] + sa * x1[j]);
          out.action_targets.push_back(x1[j] - eps[j]);
        }
        out.action_target_rows.push_back(
            static_cast<int64_t>(in.action_pos.size()) - 1);
      }
      refs.push_back({static_cast<int>(si), s.chunk_id, true, s.modality});
      ++joint;
    }
  }
  in.video_x = Tensor::from_data(
      {static_cast<int64_t>(in.video_pos.size()), d_frame}, std::move(vx));
  in.action_x = Tensor::from_data(
      {static_cast<int64_t>(in.action_pos.size()), kActionDim}, std::move(ax));

  // mask: context is chunk-causal; targets read strictly-earlier context and
  // same-chunk targets; in FDM mode video targets also read the clean
  // same-chunk action context (the executed actions being grounded on)
  mask_out = MaskMatrix::full(joint, joint, false);
  for (int64_t i = 0; i < joint; ++i) {
    const TokenRef& a = refs[static_cast<size_t>(i)];
    for (int64_t j = 0; j < joint; ++j) {
      const TokenRef& b = refs[static_cast<size_t>(j)];
      if (a.segment != b.segment) continue;
      bool allow = false;
      if (!a.target && !b.target) {
        allow = b.chunk <= a.chunk;
      } else if (a.target && !b.target) {
        allow = b.chunk < a.chunk;
        if (mode == TargetMode::kFdm && b.chunk == a.chunk &&
            b.modality == Modality::kAction)
          allow = true;
      } else if (a.target && b.target) {
        // chunk-parallel generation: targets co-attend within their chunk,
        // except that video targets never read action targets - at
        // inference the video phase runs before any action tokens exist
        // (the actions-conditioned video pathway is the FDM pass instead)
        allow = b.chunk == a.chunk &&
                !(a.modality == Modality::kVideo &&
                  b.modality == Modality::kAction);
      }
      if (allow) mask_out.set(i, j, true);
    }
  }
  return out;
}

struct PackLoss {
  Tensor dyn_sse, inv_sse;  // graph scalars
  int64_t dyn_count = 0, inv_count = 0;
  bool has_dyn = false, has_inv = false;
};

inline PackLoss pack_joint_loss(const std::vector<TrainSegment>& pack,
                                const ModelConfig& mcfg,
                                MoTParamsT<float>& params) {
  MaskMatrix mask;
  PackTokens t = assemble_pack(pack, mcfg, mask, TargetMode::kJoint);
  auto r = forward(mcfg, params, t.in, mask);
  PackLoss loss;
  if (!t.video_target_rows.empty()) {
    auto pred = row_gather(r.video_velocity, t.video_target_rows);
    auto tgt = Tensor::from_data(pred.shape(), t.video_targets);
    loss.dyn_sse = sum_sq_error(pred, tgt);
    loss.dyn_count = pred.numel();
    loss.has_dyn = true;
  }
  if (!t.action_target_rows.empty()) {
    auto pred = row_gather(r.action_velocity, t.action_target_rows);
    auto tgt = Tensor::from_data(pred.shape(), t.action_targets);
    loss.inv_sse = sum_sq_error(pred, tgt);
    loss.inv_count = pred.numel();
    loss.has_inv = true;
  }
  return loss;
}

inline PackLoss pack_fdm_loss(const std::vector<TrainSegment>& pack,
                              const ModelConfig& mcfg,
                              MoTParamsT<float>& params) {
  MaskMatrix mask;
  PackTokens t = assemble_pack(pack, mcfg, mask, TargetMode::kFdm);
  auto r = forward(mcfg, params, t.in, mask);
  PackLoss loss;
  if (!t.video_target_rows.empty()) {
    auto pred = row_gather(r.video_velocity, t.video_target_rows);
    auto tgt = Tensor::from_data(pred.shape(), t.video_targets);
    loss.dyn_sse = sum_sq_error(pred, tgt);
    loss.dyn_count = pred.numel();
    loss.has_dyn = true;
  }
  return loss;
}

}  // namespace detail

// Computes {L_dyn, L_inv, L_fdm, total}. When `graph_total` is non-null the
// weighted total is returned as a graph scalar ready for backward().
inline LossValues compute_losses(MoTParamsT<float>& params,
                                 const ModelConfig& mcfg,
                                 const TrainBatch& batch, float lambda_inv,
                                 float lambda_fdm,
                                 Tensor* graph_total = nullptr) {
  Tensor dyn_sum, inv_sum, fdm_sum;
  int64_t dyn_n = 0, inv_n = 0, fdm_n = 0;
  auto accumulate = [](Tensor& acc, const Tensor& term) {
    acc = acc.defined() ? add(acc, term) : term;
  };
  for (const auto& pack : batch.packs) {
    auto jl = detail::pack_joint_loss(pack, mcfg, params);
    if (jl.has_dyn) {
      accumulate(dyn_sum, jl.dyn_sse);
      dyn_n += jl.dyn_count;
    }
    if (jl.has_inv) {
      accumulate(inv_sum, jl.inv_sse);
      inv_n += jl.inv_count;
    }
    if (lambda_fdm > 0) {
      auto fl = detail::pack_fdm_loss(pack, mcfg, params);
      if (fl.has_dyn) {
        accumulate(fdm_sum, fl.dyn_sse);
        fdm_n += fl.dyn_count;
      }
    }
  }
  LossValues v;
  Tensor total;
  if (dyn_n) {
    auto dyn = scale(dyn_sum, 1.0f / static_cast<float>(dyn_n));
    v.dyn = dyn.item();
    accumulate(total, dyn);
  }
  if (inv_n) {
    auto inv = scale(inv_sum, 1.0f / static_cast<float>(inv_n));
    v.inv = inv.item();
    accumulate(total, scale(inv, lambda_inv));
  }
  if (fdm_n) {
    auto fdm = scale(fdm_sum, 1.0f / static_cast<float>(fdm_n));
    v.fdm = fdm.item();
    accumulate(total, scale(fdm, lambda_fdm));
  }
  check(total.defined(), "batch produced no supervised slots");
  v.total = total.item();
  check(std::isfinite(v.total), "non-finite training loss");
  if (graph_total) *graph_total = total;
  return v;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct MetricsRow {
  int step = 0;
  double dyn = 0, inv = 0, fdm = 0, total = 0, val_total = 0;
  double grad_norm = 0, lr = 0;
};

inline std::string metrics_csv_header() {
  return "step,L_dyn,L_inv,L_fdm,total,val_total,grad_norm,lr";
}

inline std::string metrics_csv_row(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g",
                r.step, r.dyn, r.inv, r.fdm, r.total, r.val_total, r.grad_norm,
                r.lr);
  return buf;
}

struct TrainResult {
  MoTParamsT<float> params;
  QuantileStats stats;
  std::vector<MetricsRow> metrics;
  bool aborted = false;
  std::string abort_reason;
};

inline QuantileStats fit_quantiles_from_episodes(
    const std::vector<Episode>& episodes) {
  std::vector<UnifiedAction> samples;
  for (const auto& ep : episodes)
    for (const auto& a : ep.actions) samples.push_back(pack_toy_action(a));
  return fit_quantiles(samples);
}

inline TrainResult train(const TrainConfig& cfg, const ModelConfig& mcfg,
                         const std::vector<Episode>& demos,
                         ActionInit init_mode = ActionInit::kScaledCopy) {
  cfg.validate();
  mcfg.validate();
  check(!demos.empty(), "train needs demonstrations");

  Rng root(cfg.seed);

  // 90/10 split on a seeded shuffle
  std::vector<int> order(demos.size());
  for (size_t i = 0; i < demos.size(); ++i) order[i] = static_cast<int>(i);
  Rng srng = root.derive(11);
  for (size_t i = order.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(srng.uniform_int(0, static_cast<int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  const size_t n_val =
      std::max<size_t>(demos.size() >= 10 ? 1 : 0,
                       static_cast<size_t>(cfg.val_frac * demos.size()));
  std::vector<const Episode*> train_eps, val_eps;
  for (size_t i = 0; i < order.size(); ++i) {
    if (i < n_val)
      val_eps.push_back(&demos[static_cast<size_t>(order[i])]);
    else
      train_eps.push_back(&demos[static_cast<size_t>(order[i])]);
  }
  if (val_eps.empty()) val_eps = train_eps;

  TrainResult result;
  {
    std::vector<UnifiedAction> samples;
    for (const auto* ep : train_eps)
      for (const auto& a : ep->actions) samples.push_back(pack_toy_action(a));
    result.stats = fit_quantiles(samples);
  }

  CodecConfig codec;
  auto prepare_all = [&](const std::vector<const Episode*>& eps) {
    std::vector<PreparedEpisode> out;
    for (const auto* ep : eps) {
      if (static_cast<int>(ep->actions.size()) < mcfg.tau) continue;  // skipped
      out.push_back(prepare_episode(*ep, mcfg.tau, result.stats, codec));
    }
    return out;
  };
  auto train_data = prepare_all(train_eps);
  auto val_data = prepare_all(val_eps);
  check(!train_data.empty(), "no usable training episodes");

  Rng irng = root.derive(13);
  result.params = init_params<float>(mcfg, irng, init_mode);

  std::vector<Tensor> param_list;
  for (auto& [name, t] : named_params(result.params)) param_list.push_back(t);
  AdamW::Config ocfg;
  ocfg.lr = cfg.peak_lr;
  ocfg.beta2 = cfg.adam_beta2;
  ocfg.weight_decay = cfg.weight_decay;
  ocfg.clip_norm = cfg.clip_norm;
  AdamW opt(param_list, ocfg);

  auto eval_val = [&]() {
    NoGradGuard ng;
    Rng vrng = root.derive(17);
    TrainConfig vcfg = cfg;
    vcfg.p_aug = 0;  // validation monitors the clean flow-matching loss
    vcfg.cond_dropout = 0;
    vcfg.batch_episodes =
        std::min<int>(8, static_cast<int>(val_data.size()) * 2);
    auto vb = make_batch(val_data, vcfg, mcfg, vrng);
    return compute_losses(result.params, mcfg, vb, cfg.lambda_inv,
                          cfg.lambda_fdm)
        .total;
  };

  double val_total = eval_val();
  const double val_initial = val_total;

  for (int step = 0; step < cfg.steps; ++step) {
    Rng brng = root.derive(1000 + static_cast<uint64_t>(step));
    auto batch = make_batch(train_data, cfg, mcfg, brng);

    opt.zero_grad();
    Tensor total;
    auto losses = compute_losses(result.params, mcfg, batch, cfg.lambda_inv,
                                 cfg.lambda_fdm, &total);
    backward(total);
    const float lr =
        lr_at_step(cfg.peak_lr, step, cfg.warmup_steps, cfg.steps);
    const float gnorm = opt.step(lr);

    if ((step + 1) % cfg.val_every == 0 || step + 1 == cfg.steps) {
      val_total = eval_val();
      if (val_total > 10.0 * val_initial + 1e-9) {
        result.aborted = true;
        result.abort_reason = "validation loss diverged";
      }
    }
    MetricsRow row;
    row.step = step + 1;
    row.dyn = losses.dyn;
    row.inv = losses.inv;
    row.fdm = losses.fdm;
    row.total = losses.total;
    row.val_total = val_total;
    row.grad_norm = gnorm;
    row.lr = lr;
    result.metrics.push_back(row);
    if (result.aborted) break;
  }
  return result;
}

}  // namespace arwm
