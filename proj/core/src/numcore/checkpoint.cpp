// Copyright 2026 The avsr-stream Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "avsr/numcore/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "avsr/errors.hpp"

namespace avsr {

namespace {

constexpr char kMagic[8] = {'A', 'V', 'S', 'R', 'C', 'K', 'P', 'T'};

template <typename T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw DataError("cannot open for writing: " + path.string());
  }
  void u32(std::uint32_t v) { raw(to_le(v)); }
  void u64(std::uint64_t v) { raw(to_le(v)); }
  void f64(double d) { raw(to_le(std::bit_cast<std::uint64_t>(d))); }
  void bytes(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void magic() { out_.write(kMagic, sizeof kMagic); }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw DataError("write failed: " + path.string());
  }

 private:
  template <typename T>
  void raw(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw DataError("checkpoint not found or unreadable: " + path.string());
  }
  std::uint32_t u32() { return to_le(raw<std::uint32_t>()); }
  std::uint64_t u64() { return to_le(raw<std::uint64_t>()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::uint64_t limit = 1ULL << 30) {
    const auto n = u64();
    if (n > limit) fail("implausible string length");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) fail("truncated string");
    return s;
  }
  void magic() {
    char m[8];
    in_.read(m, sizeof m);
    if (!in_ || std::memcmp(m, kMagic, sizeof m) != 0) fail("bad magic");
  }
  [[noreturn]] void fail(const std::string& what) {
    throw DataError("checkpoint " + path_.string() + ": " + what);
  }

 private:
  template <typename T>
  T raw() {
    T v;
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in_) fail("truncated file");
    return v;
  }
  std::ifstream in_;
  std::filesystem::path path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w(path);
  w.magic();
  w.u32(kCheckpointVersion);
  w.u64(ckpt.seed);
  w.bytes(ckpt.config);
  const auto& entries = ckpt.params.entries();
  w.u64(entries.size());
  for (const auto& [name, t] : entries) {
    w.bytes(name);
    w.u64(t.rank());
    for (auto e : t.shape()) w.u64(e);
    for (double v : t.values()) w.f64(v);
  }
  w.finish(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  r.magic();
  const auto version = r.u32();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.seed = r.u64();
  ckpt.config = r.bytes();
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.bytes(4096);
    const auto rank = r.u64();
    if (rank > 8) r.fail("implausible rank for " + name);
    Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    const auto n = shape_numel(shape);
    if (n > (1ULL << 28)) r.fail("implausible size for " + name);
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    ckpt.params.add(name, Tensor(std::move(shape), std::move(values), true));
  }
  return ckpt;
}

void restore_params(ParamStore& dst, const ParamStore& src) {
  for (const auto& [name, t] : dst.entries()) {
    if (!src.contains(name)) throw DataError("checkpoint lacks parameter " + name);
  }
  dst.copy_from(src);
}

}  // namespace avsr
