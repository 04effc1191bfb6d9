// Copyright (c) 2026 ARWM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Interleaved video-action token layouts. Per frame f the slot order is
// [z_f, a_{f,1} .. a_{f,tau}]; chunk sizes partition frames. A video slot
// carries its frame's chunk id, while action slots carry the chunk id of the
// *next* frame: the actions between z_f and z_{f+1} are generated together
// with z_{f+1}, so one autoregressive step (one chunk) is the contiguous
// range [a_t, z_{t+1}, ..., a_{t+K-1}, z_{t+K}] and inverse dynamics can
// attend the predicted frames of its own chunk. The trailing action group of
// the final frame stays in the last chunk.
#pragma once

#include <cstdint>
#include <vector>

#include "arwm/rng.hpp"
#include "arwm/tensor.hpp"

namespace arwm {

enum class Modality : uint8_t { kVideo = 0, kAction = 1 };

struct Slot {
  Modality modality = Modality::kVideo;
  int frame_index = 0;
  int sub_index = 0;  // 0..tau-1 for action slots, 0 for video
  int chunk_id = 0;
  bool padding = false;  // action slot with no recorded action behind it
};

struct InterleavedSequence {
  std::vector<Slot> slots;
  int tau = 0;
  int n_frames = 0;
  std::vector<int> chunk_sizes;

  int64_t length() const { return static_cast<int64_t>(slots.size()); }
  int n_chunks() const { return static_cast<int>(chunk_sizes.size()); }
  int64_t video_slot(int frame) const {
    return static_cast<int64_t>(frame) * (1 + tau);
  }
  int64_t action_slot(int frame, int sub) const {
    return static_cast<int64_t>(frame) * (1 + tau) + 1 + sub;
  }
};

// n_action_groups limits which frames carry real actions; action slots of
// later frames are marked padding (excluded from attention and losses).
inline InterleavedSequence build_layout(int n_frames, int tau,
                                        const std::vector<int>& chunk_sizes,
                                        int n_action_groups = -1) {
  check(n_frames >= 1 && tau >= 0, "layout needs frames and tau >= 0");
  int total = 0;
  for (int k : chunk_sizes) {
    check(k > 0, "chunk sizes must be positive");
    total += k;
  }
  check(total == n_frames, "chunk sizes must sum to the frame count");
  if (n_action_groups < 0) n_action_groups = n_frames;

  std::vector<int> chunk_of_frame(static_cast<size_t>(n_frames));
  {
    int f = 0;
    for (size_t c = 0; c < chunk_sizes.size(); ++c)
      for (int i = 0; i < chunk_sizes[c]; ++i)
        chunk_of_frame[static_cast<size_t>(f++)] = static_cast<int>(c);
  }

  InterleavedSequence seq;
  seq.tau = tau;
  seq.n_frames = n_frames;
  seq.chunk_sizes = chunk_sizes;
  seq.slots.reserve(static_cast<size_t>(n_frames) * (1 + tau));
  for (int f = 0; f < n_frames; ++f) {
    Slot z;
    z.modality = Modality::kVideo;
    z.frame_index = f;
    z.chunk_id = chunk_of_frame[static_cast<size_t>(f)];
    seq.slots.push_back(z);
    const int action_chunk =
        chunk_of_frame[static_cast<size_t>(std::min(f + 1, n_frames - 1))];
    for (int j = 0; j < tau; ++j) {
      Slot a;
      a.modality = Modality::kAction;
      a.frame_index = f;
      a.sub_index = j;
      a.chunk_id = action_chunk;
      a.padding = f >= n_action_groups;
      seq.slots.push_back(a);
    }
  }
  return seq;
}

// allow[i][j] iff chunk_id(j) <= chunk_id(i): earlier chunks are clean
// context, the same chunk is fully bidirectional. Padding slots attend only
// themselves and are invisible to everyone else.
inline MaskMatrix build_chunk_causal_mask(const InterleavedSequence& seq) {
  const int64_t L = seq.length();
  MaskMatrix m = MaskMatrix::full(L, L, false);
  for (int64_t i = 0; i < L; ++i) {
    if (seq.slots[i].padding) {
      m.set(i, i, true);
      continue;
    }
    for (int64_t j = 0; j < L; ++j) {
      if (seq.slots[j].padding) continue;
      if (seq.slots[j].chunk_id <= seq.slots[i].chunk_id) m.set(i, j, true);
    }
  }
  return m;
}

// i.i.d. uniform draws in [k_lo, k_hi]; the last chunk truncates to fit.
inline std::vector<int> sample_chunk_sizes(int n_frames, int k_lo, int k_hi,
                                           Rng& rng) {
  check(1 <= k_lo && k_lo <= k_hi, "bad chunk size range");
  std::vector<int> sizes;
  int remaining = n_frames;
  while (remaining > 0) {
    int k = static_cast<int>(rng.uniform_int(k_lo, k_hi));
    if (k > remaining) k = remaining;
    sizes.push_back(k);
    remaining -= k;
  }
  return sizes;
}

// ---------------------------------------------------------------------------
// Packing
// ---------------------------------------------------------------------------

struct PackedLayout {
  std::vector<InterleavedSequence> segments;  // attention never crosses these
  std::vector<int> episode_index;             // provenance per segment

  int64_t length() const {
    int64_t n = 0;
    for (const auto& s : segments) n += s.length();
    return n;
  }
};

// Split a layout at chunk boundaries into pieces of at most max_len slots.
// Frame and chunk ids relabel from zero within each piece.
inline std::vector<InterleavedSequence> split_at_chunk_boundary(
    const InterleavedSequence& seq, int64_t max_len) {
  const int64_t per_frame = 1 + seq.tau;
  std::vector<InterleavedSequence> out;
  std::vector<int> pending;
  int64_t pending_frames = 0;
  int frame_base = 0;
  auto flush = [&]() {
    if (pending.empty()) return;
    const int start_group_cap = seq.n_frames;  // padding recomputed below
    (void)start_group_cap;
    InterleavedSequence piece = build_layout(
        static_cast<int>(pending_frames), seq.tau, pending);
    // carry over padding flags from the source layout
    for (int f = 0; f < piece.n_frames; ++f)
      for (int j = 0; j < seq.tau; ++j)
        piece.slots[piece.action_slot(f, j)].padding =
            seq.slots[seq.action_slot(frame_base + f, j)].padding;
    out.push_back(std::move(piece));
    frame_base += static_cast<int>(pending_frames);
    pending.clear();
    pending_frames = 0;
  };
  for (int k : seq.chunk_sizes) {
    check(static_cast<int64_t>(k) * per_frame <= max_len,
          "single chunk exceeds the packing budget");
    if ((pending_frames + k) * per_frame > max_len) flush();
    pending.push_back(k);
    pending_frames += k;
  }
  flush();
  return out;
}

// Greedy first-fit packing into batches of at most max_len total slots.
inline std::vector<PackedLayout> pack_layouts(
    const std::vector<InterleavedSequence>& layouts, int64_t max_len) {
  std::vector<PackedLayout> packs;
  for (size_t e = 0; e < layouts.size(); ++e) {
    std::vector<InterleavedSequence> pieces;
    if (layouts[e].length() > max_len)
      pieces = split_at_chunk_boundary(layouts[e], max_len);
    else
      pieces.push_back(layouts[e]);
    for (auto& piece : pieces) {
      bool placed = false;
      for (auto& pack : packs) {
        if (pack.length() + piece.length() <= max_len) {
          pack.segments.push_back(piece);
          pack.episode_index.push_back(static_cast<int>(e));
          placed = true;
          break;
        }
      }
      if (!placed) {
        PackedLayout pack;
        pack.segments.push_back(piece);
        pack.episode_index.push_back(static_cast<int>(e));
        packs.push_back(std::move(pack));
      }
    }
  }
  return packs;
}

// Block-diagonal composition of per-segment chunk-causal masks.
inline MaskMatrix build_packed_mask(const PackedLayout& pack) {
  const int64_t L = pack.length();
  MaskMatrix m = MaskMatrix::full(L, L, false);
  int64_t off = 0;
  for (const auto& seg : pack.segments) {
    MaskMatrix sub = build_chunk_causal_mask(seg);
    for (int64_t i = 0; i < seg.length(); ++i)
      for (int64_t j = 0; j < seg.length(); ++j)
        if (sub.at(i, j)) m.set(off + i, off + j, true);
    off += seg.length();
  }
  return m;
}

}  // namespace arwm
