// Copyright (c) 2026 ARWM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Episode files are JSON-lines, one episode per line:
//   {task_id, seed, success, obs: base64 of H*W*T float32 little-endian,
//    actions: nested arrays}
// Frames are stored t-major: frame 0 rows first, then frame 1, ...
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "arwm/pushworld.hpp"

namespace arwm {

namespace detail {

inline const char* b64_alphabet() {
  return "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

inline std::string base64_encode(const unsigned char* data, size_t len) {
  const char* tab = b64_alphabet();
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 3 <= len; i += 3) {
    const uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out.push_back(tab[(v >> 18) & 63]);
    out.push_back(tab[(v >> 12) & 63]);
    out.push_back(tab[(v >> 6) & 63]);
    out.push_back(tab[v & 63]);
  }
  if (i + 1 == len) {
    const uint32_t v = data[i] << 16;
    out.push_back(tab[(v >> 18) & 63]);
    out.push_back(tab[(v >> 12) & 63]);
    out += "==";
  } else if (i + 2 == len) {
    const uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
    out.push_back(tab[(v >> 18) & 63]);
    out.push_back(tab[(v >> 12) & 63]);
    out.push_back(tab[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(const std::string& s) {
  std::vector<int> rev(256, -1);
  const char* tab = b64_alphabet();
  for (int i = 0; i < 64; ++i) rev[static_cast<unsigned char>(tab[i])] = i;
  std::vector<unsigned char> out;
  out.reserve(s.size() / 4 * 3);
  uint32_t buf = 0;
  int bits = 0;
  for (char c : s) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = rev[static_cast<unsigned char>(c)];
    check(v >= 0, "invalid base64 character");
    buf = (buf << 6) | static_cast<uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((buf >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace detail

inline nlohmann::ordered_json episode_to_json(const Episode& ep) {
  nlohmann::ordered_json j;
  j["task_id"] = ep.task_id;
  j["seed"] = ep.rng_seed;
  j["success"] = ep.success;
  std::vector<float> flat;
  for (const auto& obs : ep.observations)
    flat.insert(flat.end(), obs.image.begin(), obs.image.end());
  j["obs"] = detail::base64_encode(
      reinterpret_cast<const unsigned char*>(flat.data()),
      flat.size() * sizeof(float));
  nlohmann::ordered_json acts = nlohmann::ordered_json::array();
  for (const auto& a : ep.actions)
    acts.push_back({a.dx, a.dy, a.grab});
  j["actions"] = std::move(acts);
  return j;
}

inline Episode episode_from_json(const nlohmann::json& j, int frame_pixels) {
  Episode ep;
  ep.task_id = j.at("task_id").get<int>();
  ep.rng_seed = j.at("seed").get<uint64_t>();
  ep.success = j.at("success").get<bool>();
  const auto bytes = detail::base64_decode(j.at("obs").get<std::string>());
  check(bytes.size() % (sizeof(float) * frame_pixels) == 0,
        "episode obs payload is not a whole number of frames");
  const size_t n_frames = bytes.size() / (sizeof(float) * frame_pixels);
  const float* f = reinterpret_cast<const float*>(bytes.data());
  for (size_t t = 0; t < n_frames; ++t) {
    Observation obs;
    obs.step_index = static_cast<int>(t);
    obs.image.assign(f + t * frame_pixels, f + (t + 1) * frame_pixels);
    ep.observations.push_back(std::move(obs));
  }
  for (const auto& a : j.at("actions")) {
    ToyAction act;
    act.dx = a.at(0).get<double>();
    act.dy = a.at(1).get<double>();
    act.grab = a.at(2).get<double>();
    ep.actions.push_back(act);
  }
  check(ep.actions.size() + 1 == ep.observations.size(),
        "episode actions/observations length mismatch");
  return ep;
}

inline void save_episodes(const std::string& path,
                          const std::vector<Episode>& episodes) {
  std::ofstream os(path, std::ios::trunc);
  check(os.good(), "cannot open episode file for writing: " + path);
  for (const auto& ep : episodes) os << episode_to_json(ep).dump() << "\n";
  check(os.good(), "episode file write failed: " + path);
}

inline std::vector<Episode> load_episodes(const std::string& path,
                                          int frame_pixels = 16 * 16) {
  std::ifstream is(path);
  check(is.good(), "cannot open episode file: " + path);
  std::vector<Episode> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(episode_from_json(nlohmann::json::parse(line), frame_pixels));
  }
  return out;
}

}  // namespace arwm
