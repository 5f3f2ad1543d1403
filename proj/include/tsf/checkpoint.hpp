#pragma once

// Flat key -> array container for trained models.
//
// Layout (all integers and floats little-endian):
//   magic      8 bytes  "TSFCKPT\0"
//   version    u32      currently 1
//   header     u32 byte length, then UTF-8 text of `key=value\n` lines
//   n_arrays   u32
//   per array: u32 name length, name bytes, u32 rank, rank x u64 extents,
//              product(extents) x f64 IEEE-754 values (row-major)

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tsf/error.hpp"
#include "tsf/tensor.hpp"

namespace tsf {

inline constexpr std::array<char, 8> kCheckpointMagic = {'T', 'S', 'F', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, std::string> header;
  std::vector<std::pair<std::string, Tensor>> arrays;

  const Tensor& array(const std::string& name) const {
    for (const auto& [n, t] : arrays)
      if (n == name) return t;
    throw DataError("checkpoint has no array '" + name + "'");
  }

  const std::string& value(const std::string& key) const {
    auto it = header.find(key);
    if (it == header.end()) throw DataError("checkpoint header has no key '" + key + "'");
    return it->second;
  }
};

namespace detail {

template <typename U>
void put_le(std::ostream& out, U v) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw DataError("checkpoint truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

inline std::string get_bytes(std::istream& in, std::size_t n) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("checkpoint truncated");
  return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  std::string header;
  for (const auto& [k, v] : ckpt.header) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ContractError("checkpoint header entry '" + k + "' contains a reserved character");
    }
    header += k + "=" + v + "\n";
  }
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& [name, t] : ckpt.arrays) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) detail::put_le<std::uint64_t>(out, e);
    for (double v : t.data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw DataError("failed writing checkpoint");
}

inline Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kCheckpointMagic) throw DataError("not a checkpoint file");
  const auto version = detail::get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  std::istringstream header(detail::get_bytes(in, detail::get_le<std::uint32_t>(in)));
  for (std::string line; std::getline(header, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed checkpoint header line '" + line + "'");
    ckpt.header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto n_arrays = detail::get_le<std::uint32_t>(in);
  for (std::uint32_t a = 0; a < n_arrays; ++a) {
    std::string name = detail::get_bytes(in, detail::get_le<std::uint32_t>(in));
    const auto rank = detail::get_le<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(detail::get_le<std::uint64_t>(in));
    std::vector<double> data(element_count(shape));
    for (double& v : data) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(in));
    ckpt.arrays.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, ckpt);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace tsf
