// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

// Named-tensor container shared by model checkpoints and baseline artifacts.
//
// Layout (little-endian): 8-byte magic, u32 version, u32-length UTF-8 JSON
// metadata, u32 tensor count, then per tensor: u16-length name, u32 rank,
// rank x u32 extents, raw f32 values.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "kgfp/tensor.hpp"

namespace kgfp {

inline constexpr char kModelMagic[9] = "KGFPMDL1";
inline constexpr char kBaselineMagic[9] = "KGFPBSL1";

class ContainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  TensorF value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Container {
  std::uint32_t version = 1;
  std::string metadata;  // JSON text
  std::vector<NamedTensor> tensors;

  /// Throws ContainerError when no tensor has this name.
  const TensorF& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

/// Writes to path; `magic` must be 8 characters.
void write_container(const std::string& path, const char* magic, const Container& c);
/// Reads and checks the magic; throws ContainerError on any mismatch,
/// truncation or trailing data.
Container read_container(const std::string& path, const char* magic);

}  // namespace kgfp
