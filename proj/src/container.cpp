// Copyright 2026 The KGFP Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgfp/container.hpp"

#include <cstring>
#include <fstream>

#include "kgfp/binary_io.hpp"

namespace kgfp {

const TensorF& Container::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw ContainerError("missing tensor '" + name + "'");
}

bool Container::has(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void write_container(const std::string& path, const char* magic, const Container& c) {
  if (std::strlen(magic) != 8) throw std::invalid_argument("magic must be 8 bytes");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ContainerError("cannot open " + path + " for writing");
  os.write(magic, 8);
  io::put_uint<std::uint32_t>(os, c.version);
  io::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(c.metadata.size()));
  os.write(c.metadata.data(), static_cast<std::streamsize>(c.metadata.size()));
  io::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    io::put_str16(os, t.name);
    io::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t e : t.value.shape()) {
      io::put_uint<std::uint32_t>(os, static_cast<std::uint32_t>(e));
    }
    io::put_f32_array(os, t.value.data(), t.value.size());
  }
  os.flush();
  if (!os) throw ContainerError("write failed for " + path);
}

Container read_container(const std::string& path, const char* magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContainerError("cannot open " + path);
  Container c;
  try {
    char got[8];
    if (!in.read(got, 8) || std::memcmp(got, magic, 8) != 0) {
      throw ContainerError(path + ": bad magic, expected " + std::string(magic, 8));
    }
    c.version = io::get_uint<std::uint32_t>(in);
    const auto meta_len = io::get_uint<std::uint32_t>(in);
    if (meta_len > (1u << 24)) throw ContainerError(path + ": implausible metadata size");
    c.metadata.resize(meta_len);
    if (meta_len && !in.read(c.metadata.data(), meta_len)) {
      throw io::EndOfData("metadata");
    }
    const auto count = io::get_uint<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < count; ++i) {
      NamedTensor t;
      t.name = io::get_str16(in);
      const auto rank = io::get_uint<std::uint32_t>(in);
      if (rank == 0 || rank > 8) {
        throw ContainerError(path + ": tensor '" + t.name + "' has rank " +
                             std::to_string(rank));
      }
      Shape shape(rank);
      for (auto& e : shape) e = io::get_uint<std::uint32_t>(in);
      try {
        t.value = TensorF(shape);
      } catch (const ShapeError& e) {
        throw ContainerError(path + ": tensor '" + t.name + "': " + e.what());
      }
      io::get_f32_array(in, t.value.data(), t.value.size());
      c.tensors.push_back(std::move(t));
    }
  } catch (const io::EndOfData&) {
    throw ContainerError(path + ": truncated");
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ContainerError(path + ": trailing bytes");
  }
  return c;
}

}  // namespace kgfp
