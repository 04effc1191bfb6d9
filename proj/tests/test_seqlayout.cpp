// Copyright (c) 2026 ARWM Authors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "arwm/seqlayout.hpp"

using namespace arwm;

TEST_CASE("layout structure") {
  SECTION("two frames tau=4 in singleton chunks") {
    auto seq = build_layout(2, 4, {1, 1});
    REQUIRE(seq.length() == 10);
    REQUIRE(seq.slots[0].modality == Modality::kVideo);
    for (int j = 1; j <= 4; ++j) {
      REQUIRE(seq.slots[j].modality == Modality::kAction);
      REQUIRE(seq.slots[j].frame_index == 0);
      REQUIRE(seq.slots[j].sub_index == j - 1);
    }
    REQUIRE(seq.slots[5].modality == Modality::kVideo);
    REQUIRE(seq.slots[5].frame_index == 1);
  }
  SECTION("tau=1 single frame") {
    auto seq = build_layout(1, 1, {1});
    REQUIRE(seq.length() == 2);
    REQUIRE(seq.slots[0].modality == Modality::kVideo);
    REQUIRE(seq.slots[1].modality == Modality::kAction);
  }
  SECTION("one chunk of two frames shares chunk id zero everywhere") {
    auto seq = build_layout(2, 2, {2});
    for (const auto& s : seq.slots) REQUIRE(s.chunk_id == 0);
  }
  SECTION("actions group with the next frame's chunk") {
    auto seq = build_layout(3, 2, {1, 2});
    REQUIRE(seq.slots[seq.video_slot(0)].chunk_id == 0);
    REQUIRE(seq.slots[seq.action_slot(0, 0)].chunk_id == 1);
    REQUIRE(seq.slots[seq.video_slot(1)].chunk_id == 1);
    REQUIRE(seq.slots[seq.action_slot(1, 1)].chunk_id == 1);
    REQUIRE(seq.slots[seq.video_slot(2)].chunk_id == 1);
    REQUIRE(seq.slots[seq.action_slot(2, 0)].chunk_id == 1);  // clamped
  }
  SECTION("length formula holds for random layouts") {
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
      const int n = static_cast<int>(rng.uniform_int(1, 20));
      const int tau = static_cast<int>(rng.uniform_int(0, 4));
      auto sizes = sample_chunk_sizes(n, 1, 4, rng);
      auto seq = build_layout(n, tau, sizes);
      REQUIRE(seq.length() == static_cast<int64_t>(n) * (1 + tau));
    }
  }
  SECTION("bad chunk sizes rejected") {
    REQUIRE_THROWS_AS(build_layout(3, 2, {1, 1}), ContractError);
    REQUIRE_THROWS_AS(build_layout(3, 2, {0, 3}), ContractError);
  }
}

TEST_CASE("chunk-causal mask") {
  SECTION("two singleton video chunks form a causal 2x2") {
    auto seq = build_layout(2, 0, {1, 1});
    auto m = build_chunk_causal_mask(seq);
    REQUIRE(m.at(0, 0) == 1);
    REQUIRE(m.at(0, 1) == 0);
    REQUIRE(m.at(1, 0) == 1);
    REQUIRE(m.at(1, 1) == 1);
  }
  SECTION("mask is reflexive and chunk-monotone") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
      const int n = static_cast<int>(rng.uniform_int(2, 12));
      auto seq = build_layout(n, 2, sample_chunk_sizes(n, 1, 4, rng));
      auto m = build_chunk_causal_mask(seq);
      for (int64_t i = 0; i < seq.length(); ++i) {
        REQUIRE(m.at(i, i) == 1);
        for (int64_t j = 0; j < seq.length(); ++j)
          if (m.at(i, j))
            REQUIRE(seq.slots[j].chunk_id <= seq.slots[i].chunk_id);
      }
    }
  }
  SECTION("padding slots are isolated") {
    auto seq = build_layout(2, 2, {1, 1}, /*n_action_groups=*/1);
    auto m = build_chunk_causal_mask(seq);
    const auto pad = seq.action_slot(1, 0);
    REQUIRE(seq.slots[pad].padding);
    for (int64_t i = 0; i < seq.length(); ++i) {
      if (i == pad) continue;
      REQUIRE(m.at(i, pad) == 0);
      REQUIRE(m.at(pad, i) == 0);
    }
    REQUIRE(m.at(pad, pad) == 1);
  }
}

TEST_CASE("chunk size sampling") {
  Rng rng(11);
  SECTION("degenerate range gives all ones") {
    auto sizes = sample_chunk_sizes(5, 1, 1, rng);
    REQUIRE(sizes == std::vector<int>{1, 1, 1, 1, 1});
  }
  SECTION("truncation at the tail") {
    // draw until a truncation case appears, then verify the invariant
    for (int trial = 0; trial < 100; ++trial) {
      auto sizes = sample_chunk_sizes(5, 4, 4, rng);
      REQUIRE(sizes == std::vector<int>{4, 1});
    }
  }
  SECTION("histogram is close to uniform over [1,4]") {
    std::array<int, 5> counts{};
    int draws = 0;
    Rng r2(13);
    while (draws < 100000) {
      auto sizes = sample_chunk_sizes(1000000, 1, 4, r2);
      for (size_t i = 0; i + 1 < sizes.size() && draws < 100000; ++i) {
        counts[static_cast<size_t>(sizes[i])]++;
        ++draws;
      }
    }
    for (int k = 1; k <= 4; ++k) {
      const double frac = static_cast<double>(counts[k]) / draws;
      REQUIRE(frac == Catch::Approx(0.25).margin(0.03));
    }
  }
}

TEST_CASE("packing") {
  SECTION("one small layout packs alone") {
    auto seq = build_layout(3, 2, {1, 2});
    auto packs = pack_layouts({seq}, 100);
    REQUIRE(packs.size() == 1);
    REQUIRE(packs[0].segments.size() == 1);
    REQUIRE(packs[0].length() == seq.length());
  }
  SECTION("two short layouts share a pack with a block-diagonal mask") {
    auto a = build_layout(1, 1, {1});  // length 2
    auto b = build_layout(1, 1, {1});
    auto packs = pack_layouts({a, b}, 10);
    REQUIRE(packs.size() == 1);
    REQUIRE(packs[0].segments.size() == 2);
    auto m = build_packed_mask(packs[0]);
    for (int64_t i = 0; i < 2; ++i)
      for (int64_t j = 2; j < 4; ++j) {
        REQUIRE(m.at(i, j) == 0);
        REQUIRE(m.at(j, i) == 0);
      }
    REQUIRE(m.at(1, 0) == 1);
    REQUIRE(m.at(3, 2) == 1);
  }
  SECTION("oversized layouts split at chunk boundaries") {
    auto seq = build_layout(8, 1, {2, 2, 2, 2});  // length 16
    auto pieces = split_at_chunk_boundary(seq, 9);
    REQUIRE(pieces.size() == 2);
    REQUIRE(pieces[0].n_frames == 4);
    REQUIRE(pieces[1].n_frames == 4);
    for (const auto& p : pieces) {
      REQUIRE(p.slots[0].frame_index == 0);
      REQUIRE(p.slots[0].chunk_id == 0);
    }
  }
}
