// Copyright (c) 2026 ARWM Authors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "arwm/episode_io.hpp"
#include "arwm/pushworld.hpp"

using namespace arwm;

TEST_CASE("step basics") {
  PushworldConfig cfg;
  WorldState s;
  s.agent_xy = {0.5, 0.5};
  s.block_xy = {0.9, 0.9};

  SECTION("no-op action only advances the step index") {
    auto s2 = step(s, {0, 0, 0}, cfg);
    REQUIRE(s2.agent_xy == s.agent_xy);
    REQUIRE(s2.block_xy == s.block_xy);
    REQUIRE(s2.grasped == s.grasped);
    REQUIRE(s2.step_index == s.step_index + 1);
  }
  SECTION("agent moves by dxy") {
    auto s2 = step(s, {0.1, 0.0, 0}, cfg);
    REQUIRE(s2.agent_xy[0] == Catch::Approx(0.6));
    REQUIRE(s2.agent_xy[1] == Catch::Approx(0.5));
  }
  SECTION("movement clips at the boundary") {
    s.agent_xy = {0.98, 0.5};
    auto s2 = step(s, {0.1, 0.0, 0}, cfg);
    REQUIRE(s2.agent_xy[0] == 1.0);
  }
  SECTION("oversized action components are clipped to a_max") {
    auto s2 = step(s, {5.0, -5.0, 0}, cfg);
    REQUIRE(s2.agent_xy[0] == Catch::Approx(0.6));
    REQUIRE(s2.agent_xy[1] == Catch::Approx(0.4));
  }
  SECTION("grasp requires proximity; grasped block follows the agent") {
    auto far = step(s, {0, 0, 1}, cfg);
    REQUIRE(!far.grasped);
    s.block_xy = {0.55, 0.5};
    auto near = step(s, {0, 0, 1}, cfg);
    REQUIRE(near.grasped);
    auto carried = step(near, {0.1, 0.0, 1}, cfg);
    REQUIRE(carried.block_xy[0] == Catch::Approx(0.65));
    auto released = step(carried, {0, 0, 0}, cfg);
    REQUIRE(!released.grasped);
  }
}

TEST_CASE("step is pure: same inputs give the same output") {
  PushworldConfig cfg;
  Rng rng(42);
  WorldState s = init_state(Variant::kPush, rng, cfg);
  ToyAction a{0.05, -0.03, 1};
  auto s1 = step(s, a, cfg);
  auto s2 = step(s, a, cfg);
  REQUIRE(s1.agent_xy == s2.agent_xy);
  REQUIRE(s1.block_xy == s2.block_xy);
  REQUIRE(s1.grasped == s2.grasped);
  REQUIRE(s1.step_index == s2.step_index);
}

TEST_CASE("render determinism and content") {
  PushworldConfig cfg;
  Rng rng(7);
  WorldState s = init_state(Variant::kPush, rng, cfg);

  auto o1 = render(s, cfg);
  auto o2 = render(s, cfg);
  REQUIRE(o1.image == o2.image);

  // agent pixel anchored at floor(xy * (H-1))
  const int c = static_cast<int>(std::floor(s.agent_xy[0] * (cfg.width - 1)));
  const int r = static_cast<int>(std::floor(s.agent_xy[1] * (cfg.height - 1)));
  REQUIRE(o1.image[r * cfg.width + c] == 1.0f);

  // background stays zero away from all entities
  int nonzero = 0;
  for (float v : o1.image) nonzero += v != 0.0f;
  REQUIRE(nonzero <= 4 + 4 + 1);  // agent + block + goal at most

  // search variant draws open/closed and content pixels
  WorldState sb = init_state(Variant::kSearchBox, rng, cfg, true);
  auto closed_img = render(sb, cfg).image;
  sb.box_open.left = true;
  auto open_img = render(sb, cfg).image;
  REQUIRE(closed_img != open_img);
}

TEST_CASE("expert terminal and approach rules") {
  PushworldConfig cfg;
  WorldState s;
  SECTION("grasped block on the goal: release") {
    s.grasped = true;
    s.block_xy = {0.5, 0.5};
    s.goal_xy = {0.5, 0.5};
    auto a = expert_policy(s, cfg);
    REQUIRE(a.grab == 0);
  }
  SECTION("distant block: full-speed approach") {
    s.agent_xy = {0.1, 0.5};
    s.block_xy = {0.9, 0.5};
    auto a = expert_policy(s, cfg);
    REQUIRE(std::sqrt(a.dx * a.dx + a.dy * a.dy) == Catch::Approx(cfg.a_max));
    REQUIRE(a.dx > 0);
  }
  SECTION("right box checked empty: next target is the left box") {
    WorldState sb;
    sb.variant = Variant::kSearchBox;
    sb.box_contents.left = true;
    sb.box_checked.right = true;
    sb.agent_xy = {0.8, 0.75};
    auto a = expert_policy(sb, cfg);
    REQUIRE(a.dx < 0);  // heading toward the left box
  }
}

TEST_CASE("expert succeeds on both variants") {
  PushworldConfig cfg;
  for (auto variant : {Variant::kPush, Variant::kSearchBox}) {
    const int horizon =
        variant == Variant::kPush ? cfg.horizon_push : cfg.horizon_search;
    Rng rng(123);
    for (int i = 0; i < 50; ++i) {
      WorldState s0 = init_state(variant, rng, cfg);
      auto r = run_episode(
          s0, [&](const WorldState& ws) { return expert_policy(ws, cfg); },
          horizon, cfg);
      REQUIRE(r.episode.success);
    }
  }
}

TEST_CASE("demo generation is reproducible and balanced") {
  PushworldConfig cfg;
  SECTION("same seed twice gives identical episodes") {
    auto a = generate_demos(Variant::kPush, 5, 99, cfg);
    auto b = generate_demos(Variant::kPush, 5, 99, cfg);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      REQUIRE(a[i].actions.size() == b[i].actions.size());
      for (size_t t = 0; t < a[i].observations.size(); ++t)
        REQUIRE(a[i].observations[t].image == b[i].observations[t].image);
    }
  }
  SECTION("all push demos succeed within the horizon") {
    auto demos = generate_demos(Variant::kPush, 100, 7, cfg);
    for (const auto& ep : demos) {
      REQUIRE(ep.success);
      REQUIRE(ep.actions.size() <= static_cast<size_t>(cfg.horizon_push));
      REQUIRE(ep.actions.size() + 1 == ep.observations.size());
    }
  }
  SECTION("search demos split roughly evenly between boxes") {
    auto demos = generate_demos(Variant::kSearchBox, 1000, 21, cfg);
    int left = 0;
    for (const auto& ep : demos) {
      // a short episode means the block was in the right box
      left += ep.actions.size() > 12 ? 1 : 0;
    }
    REQUIRE(left > 450);
    REQUIRE(left < 550);
  }
}

TEST_CASE("episode replay reproduces recorded observations bit-identically") {
  PushworldConfig cfg;
  Rng rng(5);
  WorldState s0 = init_state(Variant::kPush, rng, cfg);
  auto r = run_episode(
      s0, [&](const WorldState& ws) { return expert_policy(ws, cfg); },
      cfg.horizon_push, cfg);

  WorldState s = s0;
  REQUIRE(render(s, cfg).image == r.episode.observations[0].image);
  for (size_t t = 0; t < r.episode.actions.size(); ++t) {
    s = step(s, r.episode.actions[t], cfg);
    REQUIRE(render(s, cfg).image == r.episode.observations[t + 1].image);
  }
}

TEST_CASE("episode jsonl round trip") {
  PushworldConfig cfg;
  auto demos = generate_demos(Variant::kSearchBox, 3, 31, cfg);
  const auto path =
      (std::filesystem::temp_directory_path() / "arwm_demo_test.jsonl")
          .string();
  save_episodes(path, demos);
  auto loaded = load_episodes(path, cfg.height * cfg.width);
  REQUIRE(loaded.size() == demos.size());
  for (size_t i = 0; i < demos.size(); ++i) {
    REQUIRE(loaded[i].task_id == demos[i].task_id);
    REQUIRE(loaded[i].success == demos[i].success);
    REQUIRE(loaded[i].actions.size() == demos[i].actions.size());
    for (size_t t = 0; t < demos[i].observations.size(); ++t)
      REQUIRE(loaded[i].observations[t].image == demos[i].observations[t].image);
    for (size_t t = 0; t < demos[i].actions.size(); ++t) {
      REQUIRE(loaded[i].actions[t].dx == demos[i].actions[t].dx);
      REQUIRE(loaded[i].actions[t].grab == demos[i].actions[t].grab);
    }
  }
  std::remove(path.c_str());
}
