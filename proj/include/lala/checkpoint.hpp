#pragma once

// Flat binary parameter container:
//   "LALA" | u32 version | repeated { u32 name_len | name bytes | u64 rows | u64 cols |
//                                    rows*cols little-endian IEEE-754 doubles }
// Records run to end of file.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "lala/tape.hpp"

namespace lala::checkpoint {

inline constexpr char kMagic[4] = {'L', 'A', 'L', 'A'};
inline constexpr std::uint32_t kVersion = 1;

class format_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
bool get(std::istream& is, T& v) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) return false;
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  std::memcpy(&v, buf, sizeof(T));
  return true;
}

}  // namespace detail

using Archive = std::map<std::string, Matrix>;

inline void write(std::ostream& os, std::span<const Parameter* const> params) {
  os.write(kMagic, 4);
  detail::put<std::uint32_t>(os, kVersion);
  for (const Parameter* p : params) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    detail::put<std::uint64_t>(os, p->value.rows());
    detail::put<std::uint64_t>(os, p->value.cols());
    for (double v : p->value.values()) detail::put<double>(os, v);
  }
}

inline Archive read(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw format_error("checkpoint: bad magic");
  std::uint32_t version = 0;
  if (!detail::get(is, version) || version != kVersion)
    throw format_error("checkpoint: unsupported version");
  Archive out;
  std::uint32_t len = 0;
  while (detail::get(is, len)) {
    std::string name(len, '\0');
    std::uint64_t rows = 0, cols = 0;
    if (!is.read(name.data(), len) || !detail::get(is, rows) || !detail::get(is, cols))
      throw format_error("checkpoint: truncated record header");
    Matrix m(rows, cols);
    for (double& v : m.values())
      if (!detail::get(is, v)) throw format_error("checkpoint: truncated values for " + name);
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

/// Copy archived values into matching parameters; every parameter must be present.
inline void restore(const Archive& archive, std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    auto it = archive.find(p->name);
    if (it == archive.end()) throw format_error("checkpoint: missing parameter " + p->name);
    if (!it->second.same_shape(p->value))
      throw format_error("checkpoint: shape mismatch for " + p->name + " (" +
                         it->second.shape_string() + " vs " + p->value.shape_string() + ")");
    p->value = it->second;
    p->zero_grad();
  }
}

inline void save_file(const std::string& path, std::span<Parameter* const> params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
  std::vector<const Parameter*> cp(params.begin(), params.end());
  write(os, cp);
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline void load_file(const std::string& path, std::span<Parameter* const> params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  restore(read(is), params);
}

}  // namespace lala::checkpoint
