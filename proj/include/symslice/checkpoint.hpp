#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "symslice/error.hpp"
#include "symslice/tensor.hpp"

// Checkpoint layout (all integers little-endian):
//   "SYMW" | u32 version | u32 tensor count
//   per tensor: u32 name length | UTF-8 name | u32 rank | u64 dims[rank] | f64 values

namespace symslice {

constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

template <class T>
void put_le(std::ostream& os, T v) {
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& is, const std::string& what) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw Error(ErrorCode::IO, "truncated checkpoint while reading " + what);
  }
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= T(bytes[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void save_tensors(const std::string& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::IO, "cannot open " + path + " for writing");
  os.write("SYMW", 4);
  detail::put_le<std::uint32_t>(os, kCheckpointVersion);
  detail::put_le<std::uint32_t>(os, std::uint32_t(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_le<std::uint32_t>(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    detail::put_le<std::uint32_t>(os, std::uint32_t(t.rank()));
    for (int d : t.shape()) detail::put_le<std::uint64_t>(os, std::uint64_t(d));
    for (double v : t.data()) detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw Error(ErrorCode::IO, "failed writing " + path);
}

inline NamedTensors load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::IO, "cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "SYMW") {
    throw Error(ErrorCode::BadMagic, path + " is not a SYMW checkpoint");
  }
  auto version = detail::get_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::VersionError, "checkpoint version " + std::to_string(version) + ", expected " +
                                             std::to_string(kCheckpointVersion));
  }
  auto count = detail::get_le<std::uint32_t>(is, "tensor count");
  NamedTensors out;
  for (std::uint32_t k = 0; k < count; ++k) {
    auto len = detail::get_le<std::uint32_t>(is, "name length");
    if (len > (1u << 16)) throw Error(ErrorCode::IO, "implausible tensor name length in " + path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw Error(ErrorCode::IO, "truncated tensor name in " + path);
    auto rank = detail::get_le<std::uint32_t>(is, "rank of " + name);
    if (rank > 8) throw Error(ErrorCode::IO, "implausible rank for " + name);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) {
      auto d = detail::get_le<std::uint64_t>(is, "dims of " + name);
      if (d > (1u << 24)) throw Error(ErrorCode::IO, "implausible dimension for " + name);
      shape.push_back(int(d));
    }
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(is, "values of " + name));
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return out;
}

}  // namespace symslice
