#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "reglab/errors.hpp"
#include "reglab/mvol.hpp"
#include "reglab/tensor.hpp"

// Checkpoint container: named tensors plus named strings (optimizer scalars,
// RNG state). Layout:
//   magic "RLCK" | u16 version | u32 tensor count | entries | u32 string
//   count | entries; tensor entry: u16 name length, name, u16 rank, u32
//   extents, f64 data LE; string entry: u16 name length, name, u32 length,
//   bytes. Bit-exact round trip.
namespace reglab::io {

constexpr uint16_t kCkptVersion = 1;

struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> strings;
};

inline void write_checkpoint(const std::string& path, const Checkpoint& c) {
  std::string buf;
  buf.append("RLCK", 4);
  detail::put<uint16_t>(buf, kCkptVersion);
  detail::put<uint32_t>(buf, static_cast<uint32_t>(c.tensors.size()));
  for (auto& [name, t] : c.tensors) {
    detail::put<uint16_t>(buf, static_cast<uint16_t>(name.size()));
    buf.append(name);
    detail::put<uint16_t>(buf, static_cast<uint16_t>(t.ndim()));
    for (int64_t d : t.shape()) detail::put<uint32_t>(buf, static_cast<uint32_t>(d));
    for (int64_t i = 0; i < t.numel(); ++i) detail::put<double>(buf, t[i]);
  }
  detail::put<uint32_t>(buf, static_cast<uint32_t>(c.strings.size()));
  for (auto& [name, s] : c.strings) {
    detail::put<uint16_t>(buf, static_cast<uint16_t>(name.size()));
    buf.append(name);
    detail::put<uint32_t>(buf, static_cast<uint32_t>(s.size()));
    buf.append(s);
  }
  detail::write_file_atomic(path, buf);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open checkpoint: " + path);
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, "RLCK", 4) != 0)
    throw io_error("bad checkpoint magic: " + path);
  if (detail::get<uint16_t>(f, path) != kCkptVersion)
    throw io_error("unsupported checkpoint version: " + path);
  auto read_name = [&](uint16_t len) {
    std::string n(len, '\0');
    if (!f.read(n.data(), len)) throw io_error("truncated checkpoint: " + path);
    return n;
  };
  Checkpoint c;
  const uint32_t nt = detail::get<uint32_t>(f, path);
  for (uint32_t i = 0; i < nt; ++i) {
    std::string name = read_name(detail::get<uint16_t>(f, path));
    const uint16_t rank = detail::get<uint16_t>(f, path);
    Shape shape;
    for (uint16_t r = 0; r < rank; ++r) shape.push_back(detail::get<uint32_t>(f, path));
    Tensor t(shape);
    for (int64_t j = 0; j < t.numel(); ++j) t[j] = detail::get<double>(f, path);
    c.tensors.emplace(std::move(name), std::move(t));
  }
  const uint32_t ns = detail::get<uint32_t>(f, path);
  for (uint32_t i = 0; i < ns; ++i) {
    std::string name = read_name(detail::get<uint16_t>(f, path));
    const uint32_t len = detail::get<uint32_t>(f, path);
    std::string s(len, '\0');
    if (!f.read(s.data(), len)) throw io_error("truncated checkpoint: " + path);
    c.strings.emplace(std::move(name), std::move(s));
  }
  return c;
}

}  // namespace reglab::io
