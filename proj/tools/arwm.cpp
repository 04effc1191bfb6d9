// Copyright (c) 2026 ARWM Authors
// SPDX-License-Identifier: Apache-2.0
//
// arwm: data generation, normalization fitting, training, closed-loop
// evaluation, ablation suites, open-loop imagination, and checkpoint
// inspection. Every command echoes its resolved configuration and produces
// byte-identical outputs for a fixed --seed.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "arwm/config.hpp"
#include "arwm/episode_io.hpp"
#include "arwm/infer.hpp"
#include "arwm/trainer.hpp"

namespace fs = std::filesystem;
using namespace arwm;

namespace {

constexpr double kMsPerEnvStep = 10.0;

uint64_t resolve_seed(bool seed_given, uint64_t flag_seed, uint64_t cfg_seed) {
  if (seed_given) return flag_seed;
  if (const char* env = std::getenv("ARWM_SEED")) {
    return static_cast<uint64_t>(std::strtoull(env, nullptr, 10));
  }
  return cfg_seed;
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream os(fs::path(out_dir) / "config.resolved.json");
  os << run_config_to_json(cfg).dump(2) << "\n";
}

Variant parse_variant(const std::string& s) {
  if (s == "push") return Variant::kPush;
  if (s == "search_box") return Variant::kSearchBox;
  throw ContractError("unknown variant: " + s);
}

void write_pgm(const std::string& path, const Observation& obs, int h, int w) {
  std::ofstream os(path, std::ios::binary);
  os << "P5\n" << w << " " << h << "\n255\n";
  for (float v : obs.image) {
    const int b = std::clamp(static_cast<int>(v * 255.0f + 0.5f), 0, 255);
    os.put(static_cast<char>(b));
  }
}

struct WilsonCI {
  double lo = 0, hi = 0;
};

WilsonCI wilson_ci(int successes, int n, double z = 1.96) {
  if (n == 0) return {};
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2 * n)) / denom;
  const double half =
      z * std::sqrt(p * (1 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {center - half, center + half};
}

QuantileStats stats_from_checkpoint(const std::vector<NamedTensor>& ts) {
  QuantileStats stats;
  bool lo = false, hi = false;
  for (const auto& t : ts) {
    if (t.name == "norm.q_lo" && t.data.size() == kActionDim) {
      std::copy(t.data.begin(), t.data.end(), stats.q_lo.begin());
      lo = true;
    }
    if (t.name == "norm.q_hi" && t.data.size() == kActionDim) {
      std::copy(t.data.begin(), t.data.end(), stats.q_hi.begin());
      hi = true;
    }
  }
  check(lo && hi, "checkpoint lacks norm.q_lo/norm.q_hi");
  for (int d = 0; d < kActionDim; ++d)
    stats.constant[d] = stats.q_lo[d] == stats.q_hi[d];
  return stats;
}

void save_model_checkpoint(const std::string& path, MoTParamsT<float>& params,
                           const ModelConfig& mcfg,
                           const QuantileStats& stats) {
  auto tensors = params_to_tensors(params, mcfg);
  NamedTensor lo, hi;
  lo.name = "norm.q_lo";
  lo.shape = {kActionDim};
  lo.data.assign(stats.q_lo.begin(), stats.q_lo.end());
  hi.name = "norm.q_hi";
  hi.shape = {kActionDim};
  hi.data.assign(stats.q_hi.begin(), stats.q_hi.end());
  tensors.push_back(std::move(lo));
  tensors.push_back(std::move(hi));
  save_checkpoint(path, tensors);
}

struct LoadedModel {
  ModelConfig mcfg;
  MoTParamsT<float> params;
  QuantileStats stats;
};

LoadedModel load_model_checkpoint(const std::string& path) {
  auto ts = load_checkpoint(path);
  LoadedModel m;
  m.mcfg = config_from_tensors(ts);
  Rng rng(0);
  m.params = init_params<float>(m.mcfg, rng);
  params_from_tensors(m.params, ts);
  m.stats = stats_from_checkpoint(ts);
  return m;
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& variant_s, int n, uint64_t seed,
                 const std::string& out) {
  PushworldConfig env;
  int regenerated = 0;
  auto demos =
      generate_demos(parse_variant(variant_s), n, seed, env, &regenerated);
  save_episodes(out, demos);
  std::cout << "wrote " << demos.size() << " episodes to " << out;
  if (regenerated) std::cout << " (" << regenerated << " regenerated)";
  std::cout << "\n";
  return 0;
}

int cmd_fit_norm(const std::string& demos_path, const std::string& out) {
  auto demos = load_episodes(demos_path);
  auto stats = fit_quantiles_from_episodes(demos);
  std::vector<NamedTensor> ts(2);
  ts[0].name = "norm.q_lo";
  ts[0].shape = {kActionDim};
  ts[0].data.assign(stats.q_lo.begin(), stats.q_lo.end());
  ts[1].name = "norm.q_hi";
  ts[1].shape = {kActionDim};
  ts[1].data.assign(stats.q_hi.begin(), stats.q_hi.end());
  save_checkpoint(out, ts);
  std::cout << "wrote quantile stats to " << out << "\n";
  return 0;
}

int cmd_train(RunConfig cfg, const std::string& demos_path,
              const std::string& phase, const std::string& init_mode_s) {
  if (phase == "posttrain") {
    if (cfg.train.lambda_fdm == 0) cfg.train.lambda_fdm = 1.0f;
  } else {
    check(phase == "pretrain", "phase must be pretrain or posttrain");
    cfg.train.lambda_fdm = 0.0f;
  }
  ActionInit init_mode = ActionInit::kScaledCopy;
  if (init_mode_s == "interp") init_mode = ActionInit::kInterpCopy;
  else if (init_mode_s == "random") init_mode = ActionInit::kRandom;
  else check(init_mode_s == "scaled", "init must be scaled|interp|random");

  cfg.train.seed = cfg.seed;
  echo_config(cfg, cfg.out_dir);
  auto demos = load_episodes(demos_path);
  auto result = train(cfg.train, cfg.model, demos, init_mode);

  std::ofstream csv(fs::path(cfg.out_dir) / "metrics.csv");
  csv << metrics_csv_header() << "\n";
  for (const auto& row : result.metrics) csv << metrics_csv_row(row) << "\n";
  save_model_checkpoint((fs::path(cfg.out_dir) / "checkpoint.bin").string(),
                        result.params, cfg.model, result.stats);
  if (result.aborted) {
    std::cerr << "training aborted: " << result.abort_reason << "\n";
    return 3;
  }
  std::cout << "trained " << result.metrics.size() << " steps; final total "
            << (result.metrics.empty() ? 0.0 : result.metrics.back().total)
            << "\n";
  return 0;
}

struct EvalRow {
  uint64_t seed;
  std::string mode;
  int K;
  int steps;
  bool success;
  double wall_ms;
  double actions_per_sec;
};

EvalRow eval_one(LoadedModel& m, const RunConfig& cfg,
                 const std::string& mode, uint64_t seed, Variant variant,
                 double predict_latency, int perturb_step) {
  RunContext ctx;
  ctx.mcfg = m.mcfg;
  ctx.icfg = cfg.infer;
  ctx.stats = m.stats;
  ctx.env_cfg = cfg.env;
  ctx.variant = variant;
  ctx.max_steps = variant == Variant::kPush ? cfg.env.horizon_push
                                            : cfg.env.horizon_search;
  ctx.perturb_step = perturb_step;
  LatencyModel lat;
  lat.predict_latency = predict_latency;

  EpisodeResult r;
  if (mode == "sync") {
    r = run_sync_episode(m.params, ctx, seed, lat);
  } else if (mode == "async-naive") {
    r = run_async_episode(m.params, ctx, AsyncMode::kNaive, lat, seed);
  } else if (mode == "async-fdm") {
    r = run_async_episode(m.params, ctx, AsyncMode::kFdmGrounded, lat, seed);
  } else {
    throw ContractError("unknown eval mode: " + mode);
  }
  EvalRow row;
  row.seed = seed;
  row.mode = mode;
  row.K = cfg.infer.K;
  row.steps = r.steps;
  row.success = r.success;
  row.wall_ms = r.wall_steps * kMsPerEnvStep;
  row.actions_per_sec =
      row.wall_ms > 0 ? r.steps / (row.wall_ms / 1000.0) : 0.0;
  return row;
}

void write_eval_outputs(const std::string& out_dir,
                        const std::vector<EvalRow>& rows) {
  fs::create_directories(out_dir);
  std::ofstream jl(fs::path(out_dir) / "episodes.jsonl");
  int successes = 0;
  double wall = 0, aps = 0;
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["seed"] = r.seed;
    j["mode"] = r.mode;
    j["K"] = r.K;
    j["steps"] = r.steps;
    j["success"] = r.success;
    j["wall_ms"] = r.wall_ms;
    j["actions_per_sec"] = r.actions_per_sec;
    jl << j.dump() << "\n";
    successes += r.success;
    wall += r.wall_ms;
    aps += r.actions_per_sec;
  }
  std::ofstream csv(fs::path(out_dir) / "summary.csv");
  csv << "episodes,successes,success_rate,ci_lo,ci_hi,mean_wall_ms,mean_"
         "actions_per_sec\n";
  const int n = static_cast<int>(rows.size());
  const auto ci = wilson_ci(successes, n);
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%d,%.6g,%.6g,%.6g,%.6g,%.6g", n,
                successes, n ? static_cast<double>(successes) / n : 0.0,
                ci.lo, ci.hi, n ? wall / n : 0.0, n ? aps / n : 0.0);
  csv << buf << "\n";
}

int cmd_eval(RunConfig cfg, const std::string& ckpt, const std::string& mode,
             int episodes, const std::string& variant_s,
             double predict_latency, int perturb_step) {
  echo_config(cfg, cfg.out_dir);
  auto m = load_model_checkpoint(ckpt);
  std::vector<EvalRow> rows;
  for (int e = 0; e < episodes; ++e)
    rows.push_back(eval_one(m, cfg, mode, cfg.seed + static_cast<uint64_t>(e),
                            parse_variant(variant_s), predict_latency,
                            perturb_step));
  write_eval_outputs(cfg.out_dir, rows);
  int successes = 0;
  for (const auto& r : rows) successes += r.success;
  std::cout << mode << ": " << successes << "/" << episodes << " success\n";
  return 0;
}

// sync vs naive-async vs grounded-async, with and without a mid-episode
// perturbation, plus pipeline throughput on the synthetic latency model
int cmd_ablate_async(RunConfig cfg, const std::string& ckpt, int episodes,
                     const std::string& variant_s, int perturb_step) {
  echo_config(cfg, cfg.out_dir);
  auto m = load_model_checkpoint(ckpt);
  const double chunk_exec = cfg.infer.K * m.mcfg.tau;
  std::ofstream csv(fs::path(cfg.out_dir) / "ablate_async.csv");
  csv << "mode,perturbed,episodes,successes,success_rate,mean_actions_per_"
         "sec\n";
  for (const std::string mode : {"sync", "async-fdm", "async-naive"}) {
    for (int perturbed = 0; perturbed <= 1; ++perturbed) {
      int successes = 0;
      double aps = 0;
      for (int e = 0; e < episodes; ++e) {
        auto row = eval_one(m, cfg, mode, cfg.seed + static_cast<uint64_t>(e),
                            parse_variant(variant_s),
                            mode == "sync" ? chunk_exec : chunk_exec,
                            perturbed ? perturb_step : -1);
        successes += row.success;
        aps += row.actions_per_sec;
      }
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%s,%d,%d,%d,%.6g,%.6g", mode.c_str(),
                    perturbed, episodes, successes,
                    static_cast<double>(successes) / episodes,
                    aps / episodes);
      csv << buf << "\n";
    }
  }
  std::cout << "wrote " << (fs::path(cfg.out_dir) / "ablate_async.csv").string()
            << "\n";
  return 0;
}

// three action-stream initializations trained on the same data and seed
int cmd_ablate_init(RunConfig cfg, const std::string& demos_path) {
  echo_config(cfg, cfg.out_dir);
  auto demos = load_episodes(demos_path);
  cfg.train.seed = cfg.seed;
  std::ofstream csv(fs::path(cfg.out_dir) / "ablate_init.csv");
  csv << "step,scaled,interp,random\n";
  std::vector<std::vector<double>> totals;
  for (auto mode : {ActionInit::kScaledCopy, ActionInit::kInterpCopy,
                    ActionInit::kRandom}) {
    auto r = train(cfg.train, cfg.model, demos, mode);
    std::vector<double> t;
    for (const auto& row : r.metrics) t.push_back(row.total);
    totals.push_back(std::move(t));
  }
  for (size_t i = 0; i < totals[0].size(); ++i) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%zu,%.6g,%.6g,%.6g", i + 1, totals[0][i],
                  totals[1][i], totals[2][i]);
    csv << buf << "\n";
  }
  auto tail_mean = [](const std::vector<double>& v) {
    const size_t n = std::min<size_t>(20, v.size());
    double acc = 0;
    for (size_t i = v.size() - n; i < v.size(); ++i) acc += v[i];
    return acc / n;
  };
  std::ofstream sum(fs::path(cfg.out_dir) / "ablate_init_summary.csv");
  sum << "init,tail_loss\n";
  char buf[128];
  std::snprintf(buf, sizeof(buf), "scaled,%.6g\n", tail_mean(totals[0]));
  sum << buf;
  std::snprintf(buf, sizeof(buf), "interp,%.6g\n", tail_mean(totals[1]));
  sum << buf;
  std::snprintf(buf, sizeof(buf), "random,%.6g\n", tail_mean(totals[2]));
  sum << buf;
  std::cout << "scaled tail loss " << tail_mean(totals[0]) << ", random "
            << tail_mean(totals[2]) << "\n";
  return 0;
}

// action decoding error when the video context is held at a given flow time;
// compares a checkpoint trained with history augmentation against one
// trained without it, over held-out chunks
int cmd_ablate_partial(RunConfig cfg, const std::string& ckpt_aug,
                       const std::string& ckpt_noaug,
                       const std::string& demos_path, int n_chunks) {
  echo_config(cfg, cfg.out_dir);
  auto held = load_episodes(demos_path);
  std::ofstream csv(fs::path(cfg.out_dir) / "ablate_partial.csv");
  csv << "model,s_stop,action_mse,chunks\n";

  auto probe = [&](LoadedModel& m, float s_level) {
    CodecConfig codec;
    const int K = cfg.infer.K, tau = m.mcfg.tau;
    double mse_acc = 0;
    int64_t count = 0;
    int chunks_done = 0;
    Rng root(cfg.seed + 17);
    for (size_t e = 0; e < held.size() && chunks_done < n_chunks; ++e) {
      const auto& ep = held[e];
      const int F = static_cast<int>(ep.actions.size()) / tau;
      if (F < K + 1) continue;
      KVCache cache(m.mcfg, static_cast<int>(ep.task_id) + 1);
      Rng erng = root.derive(e);
      // context frames noised to the probe level, mirroring partially
      // denoised history
      auto noisy = [&](const std::vector<float>& z, Rng& r) {
        std::vector<float> out(z.size());
        for (size_t i = 0; i < z.size(); ++i)
          out[i] = (1.0f - s_level) * static_cast<float>(r.normal()) +
                   s_level * z[i];
        return out;
      };
      auto z0 = encode_frame(ep.observations[0], codec).tokens;
      cache_append_frame(m.params, cache, noisy(z0, erng), 0, 0, s_level);
      for (int c = 0; (c + 1) * K <= F && chunks_done < n_chunks; ++c) {
        const int t = c * K;
        std::vector<float> true_frames, true_actions;
        for (int i = 0; i < K; ++i) {
          auto z =
              encode_frame(ep.observations[(t + i + 1) * tau], codec).tokens;
          true_frames.insert(true_frames.end(), z.begin(), z.end());
          for (int j = 0; j < tau; ++j) {
            auto u = normalize_action(
                pack_toy_action(ep.actions[(t + i) * tau + j]), m.stats);
            true_actions.insert(true_actions.end(), u.v.begin(), u.v.end());
          }
        }
        std::vector<Slot> vslots, aslots;
        const int chunk_id = cache.last_chunk_id() + 1;
        for (int i = 0; i < K; ++i) {
          Slot s;
          s.modality = Modality::kVideo;
          s.frame_index = t + 1 + i;
          s.chunk_id = chunk_id;
          vslots.push_back(s);
          for (int j = 0; j < tau; ++j) {
            Slot a;
            a.modality = Modality::kAction;
            a.frame_index = t + i;
            a.sub_index = j;
            a.chunk_id = chunk_id;
            aslots.push_back(a);
          }
        }
        // decode the action chunk conditioned on in-chunk video at s_level
        Rng crng = root.derive(e, static_cast<uint64_t>(c));
        auto z_cond = noisy(true_frames, crng);
        std::vector<float> a(static_cast<size_t>(K * tau) * kActionDim);
        Rng nrng = crng.derive(3);
        for (auto& v : a) v = static_cast<float>(nrng.normal());
        const float h = 1.0f / cfg.infer.action_steps;
        for (int st = 0; st < cfg.infer.action_steps; ++st) {
          auto v = predict_action_velocity(
              m.params, cache, z_cond, vslots, s_level, a, aslots,
              h * static_cast<float>(st), cache.task_row);
          for (size_t i = 0; i < a.size(); ++i) a[i] += h * v.data()[i];
        }
        for (size_t i = 0; i < true_actions.size(); ++i) {
          const double d = a[i] - true_actions[i];
          mse_acc += d * d;
          ++count;
        }
        ++chunks_done;
        // ground the true content (noised to the probe level) and continue
        Rng grng = crng.derive(4);
        cache_append_chunk(m.params, cache, noisy(true_frames, grng),
                           true_actions, t, chunk_id, s_level);
      }
    }
    return std::make_pair(mse_acc / std::max<int64_t>(1, count), chunks_done);
  };

  auto m_aug = load_model_checkpoint(ckpt_aug);
  auto m_noaug = load_model_checkpoint(ckpt_noaug);
  double mse_aug_hi = 0, mse_aug_lo = 0, mse_noaug_hi = 0, mse_noaug_lo = 0;
  for (const auto& [name, model, s_level, out] :
       std::vector<std::tuple<std::string, LoadedModel*, float, double*>>{
           {"aug", &m_aug, cfg.infer.video_s_stop, &mse_aug_lo},
           {"aug", &m_aug, 1.0f, &mse_aug_hi},
           {"noaug", &m_noaug, cfg.infer.video_s_stop, &mse_noaug_lo},
           {"noaug", &m_noaug, 1.0f, &mse_noaug_hi}}) {
    auto [mse, chunks] = probe(*model, s_level);
    *out = mse;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%.3g,%.6g,%d", name.c_str(),
                  static_cast<double>(s_level), mse, chunks);
    csv << buf << "\n";
  }
  const double deg_aug = mse_aug_lo / mse_aug_hi - 1.0;
  const double deg_noaug = mse_noaug_lo / mse_noaug_hi - 1.0;
  std::cout << "aug degradation " << deg_aug << ", noaug degradation "
            << deg_noaug << "\n";
  return 0;
}

int cmd_imagine(RunConfig cfg, const std::string& ckpt, int horizon) {
  echo_config(cfg, cfg.out_dir);
  auto m = load_model_checkpoint(ckpt);
  RunContext ctx;
  ctx.mcfg = m.mcfg;
  ctx.icfg = cfg.infer;
  ctx.stats = m.stats;
  ctx.env_cfg = cfg.env;
  Rng rng(cfg.seed);
  Rng env_rng = rng.derive(100);
  auto state = init_state(Variant::kPush, env_rng, cfg.env);
  auto first = render(state, cfg.env);
  write_pgm((fs::path(cfg.out_dir) / "frame_000.pgm").string(), first,
            cfg.env.height, cfg.env.width);
  auto frames = rollout_video(m.params, ctx, first, horizon, cfg.seed);
  for (size_t i = 0; i < frames.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "frame_%03zu.pgm", i + 1);
    write_pgm((fs::path(cfg.out_dir) / name).string(), frames[i],
              cfg.env.height, cfg.env.width);
  }
  std::cout << "wrote " << frames.size() + 1 << " frames to " << cfg.out_dir
            << "\n";
  return 0;
}

int cmd_inspect(const std::string& path) {
  auto ts = load_checkpoint(path);
  std::cout << ts.size() << " tensors\n";
  for (const auto& t : ts) {
    double mn = 0, mx = 0, mean = 0;
    if (!t.data.empty()) {
      mn = mx = t.data[0];
      for (float v : t.data) {
        mn = std::min(mn, static_cast<double>(v));
        mx = std::max(mx, static_cast<double>(v));
        mean += v;
      }
      mean /= static_cast<double>(t.data.size());
    }
    std::cout << t.name << " [";
    for (size_t i = 0; i < t.shape.size(); ++i)
      std::cout << (i ? "x" : "") << t.shape[i];
    char buf[128];
    std::snprintf(buf, sizeof(buf), "] min %.4g mean %.4g max %.4g\n", mn,
                  mean, mx);
    std::cout << buf;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"autoregressive world-model workbench"};
  app.require_subcommand(1);

  std::string config_path, demos_path, out_path = "out", ckpt, ckpt_noaug;
  std::string variant = "push", mode = "sync", phase = "pretrain";
  std::string init_mode = "scaled", suite = "async";
  uint64_t seed = 0;
  bool seed_given = false;
  int n = 100, episodes = 100, horizon = 8, steps = -1;
  int perturb_step = -1, history_window = -1, k_override = -1, chunks = 50;
  double predict_latency = 0.0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--seed", seed)->each([&](const std::string&) {
      seed_given = true;
    });
    cmd->add_option("--out", out_path);
  };

  auto* gen = app.add_subcommand("gen-data", "generate expert demonstrations");
  gen->add_option("--variant", variant);
  gen->add_option("--n", n);
  add_common(gen);

  auto* fit = app.add_subcommand("fit-norm", "fit quantile normalization");
  fit->add_option("--demos", demos_path)->required();
  add_common(fit);

  auto* tr = app.add_subcommand("train", "train a world model");
  tr->add_option("--demos", demos_path)->required();
  tr->add_option("--phase", phase, "pretrain|posttrain");
  tr->add_option("--steps", steps);
  tr->add_option("--init", init_mode, "scaled|interp|random");
  add_common(tr);

  auto* ev = app.add_subcommand("eval", "closed-loop evaluation");
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--mode", mode, "sync|async-naive|async-fdm");
  ev->add_option("--episodes", episodes);
  ev->add_option("--variant", variant);
  ev->add_option("--predict-latency", predict_latency);
  ev->add_option("--perturb-step", perturb_step);
  ev->add_option("--history-window", history_window);
  ev->add_option("--K", k_override);
  add_common(ev);

  auto* ab = app.add_subcommand("ablate", "ablation suites");
  ab->add_option("--suite", suite, "init|async|partial");
  ab->add_option("--demos", demos_path);
  ab->add_option("--ckpt", ckpt);
  ab->add_option("--ckpt-noaug", ckpt_noaug);
  ab->add_option("--episodes", episodes);
  ab->add_option("--variant", variant);
  ab->add_option("--perturb-step", perturb_step);
  ab->add_option("--chunks", chunks);
  ab->add_option("--steps", steps);
  add_common(ab);

  auto* im = app.add_subcommand("imagine", "open-loop video rollout");
  im->add_option("--ckpt", ckpt)->required();
  im->add_option("--horizon", horizon);
  add_common(im);

  auto* insp = app.add_subcommand("inspect-ckpt", "list checkpoint tensors");
  std::string inspect_path;
  insp->add_option("path", inspect_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    cfg.seed = resolve_seed(seed_given, seed, cfg.seed);
    cfg.out_dir = out_path;
    if (steps > 0) cfg.train.steps = steps;
    if (history_window >= 0) cfg.infer.history_window_frames = history_window;
    if (k_override > 0) cfg.infer.K = k_override;

    if (gen->parsed()) return cmd_gen_data(variant, n, cfg.seed, out_path);
    if (fit->parsed()) return cmd_fit_norm(demos_path, out_path);
    if (tr->parsed()) return cmd_train(cfg, demos_path, phase, init_mode);
    if (ev->parsed())
      return cmd_eval(cfg, ckpt, mode, episodes, variant, predict_latency,
                      perturb_step);
    if (ab->parsed()) {
      if (suite == "async")
        return cmd_ablate_async(cfg, ckpt, episodes, variant, perturb_step);
      if (suite == "init") return cmd_ablate_init(cfg, demos_path);
      if (suite == "partial")
        return cmd_ablate_partial(cfg, ckpt, ckpt_noaug, demos_path, chunks);
      throw ContractError("unknown ablate suite: " + suite);
    }
    if (im->parsed()) return cmd_imagine(cfg, ckpt, horizon);
    if (insp->parsed()) return cmd_inspect(inspect_path);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return 3;
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    std::cerr << (msg.find("config") != std::string::npos ? "config error: "
                                                          : "error: ")
              << msg << "\n";
    return msg.find("config") != std::string::npos ? 2 : 3;
  }
  return 0;
}
