#pragma once

// LMT1 tensor files and LMCK checkpoint containers. Everything is written
// little-endian regardless of host order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lemamba/tensor.hpp"

namespace lemamba {

namespace detail {

inline void put_le(std::ostream& os, std::uint64_t v, int bytes) {
  char buf[8];
  for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, bytes);
}

inline std::uint64_t get_le(std::istream& is, int bytes, const char* what) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), bytes)) throw FormatError(std::string("truncated ") + what);
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void expect_magic(std::istream& is, const char* magic) {
  char got[4];
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0)
    throw FormatError(std::string("bad magic, expected ") + magic);
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Tensor& t) {
  if (t.rank() > 255) throw FormatError("LMT1: rank above 255");
  os.write("LMT1", 4);
  detail::put_le(os, static_cast<std::uint64_t>(t.rank()), 1);
  for (auto d : t.shape()) {
    if (d > 0xffffffffLL) throw FormatError("LMT1: dimension exceeds u32");
    detail::put_le(os, static_cast<std::uint64_t>(d), 4);
  }
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * 4));
  } else {
    for (float v : t.data()) detail::put_le(os, std::bit_cast<std::uint32_t>(v), 4);
  }
  if (!os) throw FormatError("LMT1: write failed");
}

inline Tensor read_tensor(std::istream& is) {
  detail::expect_magic(is, "LMT1");
  const auto rank = detail::get_le(is, 1, "LMT1 rank");
  if (rank == 0) throw FormatError("LMT1: rank 0");
  Shape shape(rank);
  for (auto& d : shape) {
    d = static_cast<std::int64_t>(detail::get_le(is, 4, "LMT1 dims"));
    if (d == 0) throw FormatError("LMT1: zero dimension");
  }
  std::vector<float> values(numel_of(shape));
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * 4)))
      throw FormatError("truncated LMT1 payload");
  } else {
    for (auto& v : values) v = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(is, 4, "LMT1 payload")));
  }
  return Tensor(std::move(shape), std::move(values));
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  try {
    return read_tensor(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Named tensors in insertion-independent (sorted) order.
using TensorMap = std::map<std::string, Tensor>;

inline void write_checkpoint(std::ostream& os, const TensorMap& entries) {
  os.write("LMCK", 4);
  detail::put_le(os, entries.size(), 4);
  for (const auto& [name, t] : entries) {
    if (name.size() > 0xffff) throw FormatError("LMCK: name too long");
    detail::put_le(os, name.size(), 2);
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
  if (!os) throw FormatError("LMCK: write failed");
}

inline TensorMap read_checkpoint(std::istream& is) {
  detail::expect_magic(is, "LMCK");
  const auto count = detail::get_le(is, 4, "LMCK count");
  TensorMap out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = detail::get_le(is, 2, "LMCK name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(len))) throw FormatError("truncated LMCK name");
    if (!out.emplace(name, read_tensor(is)).second) throw FormatError("LMCK: duplicate entry " + name);
  }
  return out;
}

inline void save_checkpoint(const std::filesystem::path& path, const TensorMap& entries) {
  // Written to a sibling file first so a crash never leaves a torn checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw FormatError("cannot open " + tmp.string() + " for writing");
    write_checkpoint(os, entries);
  }
  std::filesystem::rename(tmp, path);
}

inline TensorMap load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  try {
    return read_checkpoint(is);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace lemamba
