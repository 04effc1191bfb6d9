// Copyright (c) 2026 ARWM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Merged run configuration: model + training + inference settings, loaded
// from a JSON file with CLI-flag overrides. Unknown keys are rejected and
// the effective configuration is echoed into the output directory.
#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "arwm/infer.hpp"
#include "arwm/model.hpp"
#include "arwm/trainer.hpp"

namespace arwm {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  InferConfig infer;
  PushworldConfig env;
  uint64_t seed = 0;
  std::string out_dir = ".";

  void validate() const {
    model.validate();
    train.validate();
  }
};

namespace detail {

template <class T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown(const nlohmann::json& j,
                           std::initializer_list<const char*> known,
                           const std::string& section) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    check(ok, "unknown config key '" + it.key() + "' in " + section);
  }
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::read_key;
  using detail::reject_unknown;
  RunConfig cfg;
  reject_unknown(j, {"model", "train", "infer", "env", "seed", "out_dir"},
                 "root");
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m,
                   {"d_v", "d_a", "n_layers", "n_heads", "tau", "n_tokens",
                    "d_latent", "k_lo", "k_hi", "n_tasks", "max_frames",
                    "mlp_ratio", "tokenizer_hidden"},
                   "model");
    read_key(m, "d_v", cfg.model.d_v);
    read_key(m, "d_a", cfg.model.d_a);
    read_key(m, "n_layers", cfg.model.n_layers);
    read_key(m, "n_heads", cfg.model.n_heads);
    read_key(m, "tau", cfg.model.tau);
    read_key(m, "n_tokens", cfg.model.n_tokens);
    read_key(m, "d_latent", cfg.model.d_latent);
    read_key(m, "k_lo", cfg.model.k_lo);
    read_key(m, "k_hi", cfg.model.k_hi);
    read_key(m, "n_tasks", cfg.model.n_tasks);
    read_key(m, "max_frames", cfg.model.max_frames);
    read_key(m, "mlp_ratio", cfg.model.mlp_ratio);
    read_key(m, "tokenizer_hidden", cfg.model.tokenizer_hidden);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown(t,
                   {"peak_lr", "warmup_steps", "steps", "weight_decay",
                    "clip_norm", "adam_beta2", "lambda_inv", "lambda_fdm",
                    "p_aug", "s_aug_lo", "s_aug_hi", "cond_dropout", "k_lo",
                    "k_hi", "batch_episodes", "max_window_frames",
                    "max_pack_slots", "val_frac", "val_every"},
                   "train");
    read_key(t, "peak_lr", cfg.train.peak_lr);
    read_key(t, "warmup_steps", cfg.train.warmup_steps);
    read_key(t, "steps", cfg.train.steps);
    read_key(t, "weight_decay", cfg.train.weight_decay);
    read_key(t, "clip_norm", cfg.train.clip_norm);
    read_key(t, "adam_beta2", cfg.train.adam_beta2);
    read_key(t, "lambda_inv", cfg.train.lambda_inv);
    read_key(t, "lambda_fdm", cfg.train.lambda_fdm);
    read_key(t, "p_aug", cfg.train.p_aug);
    read_key(t, "s_aug_lo", cfg.train.s_aug_lo);
    read_key(t, "s_aug_hi", cfg.train.s_aug_hi);
    read_key(t, "cond_dropout", cfg.train.cond_dropout);
    read_key(t, "k_lo", cfg.train.k_lo);
    read_key(t, "k_hi", cfg.train.k_hi);
    read_key(t, "batch_episodes", cfg.train.batch_episodes);
    read_key(t, "max_window_frames", cfg.train.max_window_frames);
    read_key(t, "max_pack_slots", cfg.train.max_pack_slots);
    read_key(t, "val_frac", cfg.train.val_frac);
    read_key(t, "val_every", cfg.train.val_every);
  }
  if (j.contains("infer")) {
    const auto& i = j.at("infer");
    reject_unknown(i,
                   {"K", "video_steps", "video_s_stop", "action_steps",
                    "rollout_video_steps", "video_cfg_scale",
                    "action_cfg_scale", "history_window_frames"},
                   "infer");
    read_key(i, "K", cfg.infer.K);
    read_key(i, "video_steps", cfg.infer.video_steps);
    read_key(i, "video_s_stop", cfg.infer.video_s_stop);
    read_key(i, "action_steps", cfg.infer.action_steps);
    read_key(i, "rollout_video_steps", cfg.infer.rollout_video_steps);
    read_key(i, "video_cfg_scale", cfg.infer.guidance.video_scale);
    read_key(i, "action_cfg_scale", cfg.infer.guidance.action_scale);
    read_key(i, "history_window_frames", cfg.infer.history_window_frames);
  }
  if (j.contains("env")) {
    const auto& e = j.at("env");
    reject_unknown(e,
                   {"a_max", "grasp_radius", "success_eps", "horizon_push",
                    "horizon_search"},
                   "env");
    read_key(e, "a_max", cfg.env.a_max);
    read_key(e, "grasp_radius", cfg.env.grasp_radius);
    read_key(e, "success_eps", cfg.env.success_eps);
    read_key(e, "horizon_push", cfg.env.horizon_push);
    read_key(e, "horizon_search", cfg.env.horizon_search);
  }
  read_key(j, "seed", cfg.seed);
  read_key(j, "out_dir", cfg.out_dir);
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), "cannot open config file: " + path);
  return run_config_from_json(nlohmann::json::parse(is));
}

inline nlohmann::ordered_json run_config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["model"] = {{"d_v", cfg.model.d_v},
                {"d_a", cfg.model.d_a},
                {"n_layers", cfg.model.n_layers},
                {"n_heads", cfg.model.n_heads},
                {"tau", cfg.model.tau},
                {"n_tokens", cfg.model.n_tokens},
                {"d_latent", cfg.model.d_latent},
                {"k_lo", cfg.model.k_lo},
                {"k_hi", cfg.model.k_hi},
                {"n_tasks", cfg.model.n_tasks},
                {"max_frames", cfg.model.max_frames},
                {"mlp_ratio", cfg.model.mlp_ratio},
                {"tokenizer_hidden", cfg.model.tokenizer_hidden}};
  j["train"] = {{"peak_lr", cfg.train.peak_lr},
                {"warmup_steps", cfg.train.warmup_steps},
                {"steps", cfg.train.steps},
                {"weight_decay", cfg.train.weight_decay},
                {"clip_norm", cfg.train.clip_norm},
                {"adam_beta2", cfg.train.adam_beta2},
                {"lambda_inv", cfg.train.lambda_inv},
                {"lambda_fdm", cfg.train.lambda_fdm},
                {"p_aug", cfg.train.p_aug},
                {"s_aug_lo", cfg.train.s_aug_lo},
                {"s_aug_hi", cfg.train.s_aug_hi},
                {"cond_dropout", cfg.train.cond_dropout},
                {"k_lo", cfg.train.k_lo},
                {"k_hi", cfg.train.k_hi},
                {"batch_episodes", cfg.train.batch_episodes},
                {"max_window_frames", cfg.train.max_window_frames},
                {"max_pack_slots", cfg.train.max_pack_slots},
                {"val_frac", cfg.train.val_frac},
                {"val_every", cfg.train.val_every}};
  j["infer"] = {{"K", cfg.infer.K},
                {"video_steps", cfg.infer.video_steps},
                {"video_s_stop", cfg.infer.video_s_stop},
                {"action_steps", cfg.infer.action_steps},
                {"rollout_video_steps", cfg.infer.rollout_video_steps},
                {"video_cfg_scale", cfg.infer.guidance.video_scale},
                {"action_cfg_scale", cfg.infer.guidance.action_scale},
                {"history_window_frames", cfg.infer.history_window_frames}};
  j["env"] = {{"a_max", cfg.env.a_max},
              {"grasp_radius", cfg.env.grasp_radius},
              {"success_eps", cfg.env.success_eps},
              {"horizon_push", cfg.env.horizon_push},
              {"horizon_search", cfg.env.horizon_search}};
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  return j;
}

}  // namespace arwm
