#pragma once

// SINV tensor container.
//
// Layout (all integers little-endian uint32):
//   "SINV" | version | element type | rank | dims[rank] | row-major payload
// Element type 0 is IEEE-754 binary32, 1 is binary64.

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "seisinv/core/error.hpp"
#include "seisinv/core/tensor.hpp"

namespace seisinv::io {

inline constexpr std::array<char, 4> kTensorMagic{'S', 'I', 'N', 'V'};
inline constexpr std::uint32_t kTensorVersion = 1;

enum class ElementType : std::uint32_t { Float32 = 0, Float64 = 1 };

static_assert(std::endian::native == std::endian::little, "SINV I/O assumes a little-endian host");

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("truncated SINV header");
  return v;
}

template <class T>
constexpr ElementType element_type_of() {
  if constexpr (std::is_same_v<T, float>) return ElementType::Float32;
  else if constexpr (std::is_same_v<T, double>) return ElementType::Float64;
  else static_assert(sizeof(T) == 0, "SINV supports float and double tensors only");
}

}  // namespace detail

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write(kTensorMagic.data(), kTensorMagic.size());
  detail::put_u32(os, kTensorVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(detail::element_type_of<T>()));
  detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.dims()) detail::put_u32(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!os) throw DataError("failed writing SINV tensor");
}

/// Reads a tensor, converting between float and double payloads when needed.
template <class T>
Tensor<T> read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kTensorMagic) throw DataError("bad SINV magic bytes");
  const auto version = detail::get_u32(is);
  if (version != kTensorVersion) throw DataError("unsupported SINV version " + std::to_string(version));
  const auto code = detail::get_u32(is);
  const auto rank = detail::get_u32(is);
  if (rank > 16) throw DataError("implausible SINV rank " + std::to_string(rank));
  Shape dims(rank);
  for (auto& d : dims) d = detail::get_u32(is);
  const std::size_t n = shape_size(dims);
  auto read_payload = [&](auto tag) {
    using U = decltype(tag);
    std::vector<U> buf(n);
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(U))))
      throw DataError("truncated SINV payload");
    return Tensor<T>(dims, std::vector<T>(buf.begin(), buf.end()));
  };
  switch (static_cast<ElementType>(code)) {
    case ElementType::Float32: return read_payload(float{});
    case ElementType::Float64: return read_payload(double{});
  }
  throw DataError("unknown SINV element type code " + std::to_string(code));
}

template <class T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  write_tensor(os, t);
}

template <class T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path.string());
  try {
    return read_tensor<T>(is);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::string crc32_hex(const void* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, static_cast<const Bytef*>(data), static_cast<uInt>(n));
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << static_cast<std::uint32_t>(crc);
  return os.str();
}

inline std::string crc32_hex(const std::string& s) { return crc32_hex(s.data(), s.size()); }

inline std::string file_crc32(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return crc32_hex(bytes.data(), bytes.size());
}

}  // namespace seisinv::io
