// Copyright (c) 2026 ARWM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat binary checkpoint: header {magic "ARWM", version u32, tensor count u32},
// then per tensor {name length u32 + utf8 name, rank u32, dims u32 each,
// float32 data little-endian}.
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "arwm/tensor.hpp"

namespace arwm {

constexpr uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, const float* p, size_t n) {
  // little-endian host assumed; dims and floats written verbatim
  os.write(reinterpret_cast<const char*>(p),
           static_cast<std::streamsize>(n * sizeof(float)));
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.good(), "cannot open checkpoint for writing: " + path);
  os.write("ARWM", 4);
  detail::write_u32(os, kCheckpointVersion);
  detail::write_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::write_u32(os, static_cast<uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::write_u32(os, static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) detail::write_u32(os, static_cast<uint32_t>(d));
    detail::write_f32(os, t.data.data(), t.data.size());
  }
  check(os.good(), "checkpoint write failed: " + path);
}

inline std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  check(is.good() && std::memcmp(magic, "ARWM", 4) == 0,
        "bad checkpoint magic: " + path);
  const uint32_t version = detail::read_u32(is);
  check(version == kCheckpointVersion, "unsupported checkpoint version");
  const uint32_t count = detail::read_u32(is);
  std::vector<NamedTensor> tensors(count);
  for (auto& t : tensors) {
    const uint32_t name_len = detail::read_u32(is);
    t.name.resize(name_len);
    is.read(t.name.data(), name_len);
    const uint32_t rank = detail::read_u32(is);
    t.shape.resize(rank);
    int64_t n = 1;
    for (auto& d : t.shape) {
      d = detail::read_u32(is);
      n *= d;
    }
    t.data.resize(static_cast<size_t>(n));
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    check(is.good(), "truncated checkpoint: " + path);
  }
  return tensors;
}

}  // namespace arwm
