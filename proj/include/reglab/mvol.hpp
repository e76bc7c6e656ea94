#pragma once

#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "reglab/errors.hpp"
#include "reglab/tensor.hpp"

// MVOL: a minimal binary volume container.
//   magic "MVOL" | u16 version | u16 ndim | u32 extents[ndim] | u32 channels |
//   u16 dtype (1 = float64 LE, 2 = int32 LE) | payload, row-major, last axis
//   fastest, channels innermost.
namespace reglab::io {

constexpr uint16_t kMvolVersion = 1;

enum class Dtype : uint16_t { f64 = 1, i32 = 2 };

struct Mvol {
  Shape dims;
  int64_t channels = 1;
  Dtype dtype = Dtype::f64;
  Tensor data;  // shape dims (channels == 1) or dims + [channels]
};

namespace detail {

template <typename T>
void put(std::string& buf, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));  // little-endian hosts only, as written
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw io_error("truncated MVOL file: " + path);
  return v;
}

// Atomic write: temp file in the target directory, then rename.
inline void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open for writing: " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw io_error("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw io_error("rename failed: " + path + ": " + ec.message());
}

}  // namespace detail

inline void write_mvol(const std::string& path, const Mvol& v) {
  int64_t payload = v.channels;
  for (int64_t d : v.dims) payload *= d;
  if (v.data.numel() != payload) throw shape_error("MVOL payload size mismatch");
  std::string buf;
  buf.append("MVOL", 4);
  detail::put<uint16_t>(buf, kMvolVersion);
  detail::put<uint16_t>(buf, static_cast<uint16_t>(v.dims.size()));
  for (int64_t d : v.dims) detail::put<uint32_t>(buf, static_cast<uint32_t>(d));
  detail::put<uint32_t>(buf, static_cast<uint32_t>(v.channels));
  detail::put<uint16_t>(buf, static_cast<uint16_t>(v.dtype));
  if (v.dtype == Dtype::f64) {
    for (int64_t i = 0; i < v.data.numel(); ++i) detail::put<double>(buf, v.data[i]);
  } else {
    for (int64_t i = 0; i < v.data.numel(); ++i)
      detail::put<int32_t>(buf, static_cast<int32_t>(v.data[i]));
  }
  detail::write_file_atomic(path, buf);
}

inline Mvol read_mvol(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open MVOL: " + path);
  char magic[4];
  if (!f.read(magic, 4) || std::memcmp(magic, "MVOL", 4) != 0)
    throw io_error("bad MVOL magic: " + path);
  if (detail::get<uint16_t>(f, path) != kMvolVersion)
    throw io_error("unsupported MVOL version: " + path);
  const uint16_t ndim = detail::get<uint16_t>(f, path);
  Mvol v;
  for (uint16_t i = 0; i < ndim; ++i)
    v.dims.push_back(detail::get<uint32_t>(f, path));
  v.channels = detail::get<uint32_t>(f, path);
  const uint16_t dt = detail::get<uint16_t>(f, path);
  if (dt != 1 && dt != 2) throw io_error("bad MVOL dtype code: " + path);
  v.dtype = static_cast<Dtype>(dt);
  Shape shape = v.dims;
  if (v.channels > 1) shape.push_back(v.channels);
  v.data = Tensor(shape);
  for (int64_t i = 0; i < v.data.numel(); ++i)
    v.data[i] = v.dtype == Dtype::f64 ? detail::get<double>(f, path)
                                      : static_cast<double>(detail::get<int32_t>(f, path));
  return v;
}

inline Mvol make_mvol(const Tensor& t, int64_t channels = 1, Dtype dtype = Dtype::f64) {
  Mvol v;
  v.channels = channels;
  v.dtype = dtype;
  v.dims.assign(t.shape().begin(), t.shape().end() - (channels > 1 ? 1 : 0));
  v.data = t;
  return v;
}

// 8-bit binary PGM preview of a 2D image, min-max normalized.
inline void write_pgm(const std::string& path, const Tensor& image) {
  if (image.ndim() != 2) throw shape_error("PGM preview expects a 2D image");
  const int64_t h = image.shape()[0], w = image.shape()[1];
  const double lo = image.min(), hi = image.max();
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  std::string buf = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (int64_t i = 0; i < image.numel(); ++i)
    buf.push_back(static_cast<char>(
        static_cast<unsigned char>(std::lround((image[i] - lo) * scale))));
  detail::write_file_atomic(path, buf);
}

// FNV-1a 64-bit digest, hex string.
inline std::string fnv1a_hex(const std::string& bytes) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

inline std::string file_digest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open for digest: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return fnv1a_hex(bytes);
}

constexpr const char* kLibraryVersion = "0.1.0";

struct RunManifest {
  std::string command;
  std::string config_hash;
  uint64_t seed = 0;
  std::string version = kLibraryVersion;
  std::string timestamp;
  std::map<std::string, std::string> inputs;   // path -> digest
  std::map<std::string, std::string> outputs;  // path -> digest
};

inline void to_json(nlohmann::json& j, const RunManifest& m) {
  j = nlohmann::json{{"command", m.command}, {"config_hash", m.config_hash},
                     {"seed", m.seed},       {"version", m.version},
                     {"timestamp", m.timestamp}, {"inputs", m.inputs},
                     {"outputs", m.outputs}};
}

inline std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_manifest(const std::string& path, const RunManifest& m) {
  nlohmann::json j = m;
  detail::write_file_atomic(path, j.dump(2) + "\n");
}

}  // namespace reglab::io
