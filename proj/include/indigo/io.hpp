#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <variant>

#include "indigo/tensor.hpp"

// Tensor files ("TNSR"): 4-byte magic, version u8 = 1, dtype u8 (1 = float32,
// 2 = float64), ndim u8, pad u8 = 0, then ndim little-endian u64 extents and
// the row-major little-endian payload. Round-trips are bit-identical and the
// dtype is preserved, so a loaded file is a variant over the two scalar types.

namespace indigo {

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

namespace detail {

template <typename S>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<S, float> ? 1 : 2;
}

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

template <typename S>
void put_scalar_le(std::string& out, S v) {
  using U = std::conditional_t<sizeof(S) == 4, std::uint32_t, std::uint64_t>;
  const U u = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

template <typename S>
S get_scalar_le(const unsigned char* p) {
  using U = std::conditional_t<sizeof(S) == 4, std::uint32_t, std::uint64_t>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(p[i]) << (8 * i);
  return std::bit_cast<S>(u);
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("read failed on " + path);
  return bytes;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  f.flush();
  if (!f) throw IoError("write failed on " + path);
}

}  // namespace detail

template <typename S>
void save_tensor(const std::string& path, const Tensor<S>& t) {
  std::string out;
  out.reserve(8 + 8 * t.rank() + sizeof(S) * t.numel());
  out += "TNSR";
  out.push_back(1);
  out.push_back(static_cast<char>(detail::dtype_code<S>()));
  out.push_back(static_cast<char>(t.rank()));
  out.push_back(0);
  for (std::size_t i = 0; i < t.rank(); ++i) detail::put_u64_le(out, t.extent(i));
  for (std::size_t i = 0; i < t.numel(); ++i) detail::put_scalar_le(out, t.flat(i));
  detail::write_file_bytes(path, out);
}

namespace detail {

template <typename S>
Tensor<S> decode_payload(const std::vector<unsigned char>& bytes, const std::string& path,
                         Shape shape, std::size_t off) {
  Tensor<S> t(std::move(shape));
  const std::size_t want = off + sizeof(S) * t.numel();
  if (bytes.size() != want)
    throw IoError(path + ": expected " + std::to_string(want) + " bytes, file has " +
                  std::to_string(bytes.size()) + " (payload at byte " + std::to_string(off) + ")");
  for (std::size_t i = 0; i < t.numel(); ++i)
    t.flat(i) = get_scalar_le<S>(bytes.data() + off + sizeof(S) * i);
  return t;
}

}  // namespace detail

inline AnyTensor load_tensor(const std::string& path) {
  const std::vector<unsigned char> bytes = detail::read_file_bytes(path);
  if (bytes.size() < 8)
    throw IoError(path + ": expected at least 8 header bytes, file has " +
                  std::to_string(bytes.size()));
  if (std::memcmp(bytes.data(), "TNSR", 4) != 0) throw IoError(path + ": bad magic at byte 0");
  if (bytes[4] != 1)
    throw IoError(path + ": unsupported version " + std::to_string(bytes[4]) + " at byte 4");
  const std::uint8_t dtype = bytes[5];
  if (dtype != 1 && dtype != 2)
    throw IoError(path + ": bad dtype " + std::to_string(dtype) + " at byte 5");
  const std::size_t ndim = bytes[6];
  if (bytes[7] != 0) throw IoError(path + ": nonzero pad at byte 7");
  if (bytes.size() < 8 + 8 * ndim)
    throw IoError(path + ": expected " + std::to_string(8 + 8 * ndim) +
                  " bytes of header for " + std::to_string(ndim) + " extents, file has " +
                  std::to_string(bytes.size()));
  Shape shape(ndim);
  for (std::size_t i = 0; i < ndim; ++i)
    shape[i] = static_cast<std::size_t>(detail::get_u64_le(bytes.data() + 8 + 8 * i));
  const std::size_t off = 8 + 8 * ndim;
  if (dtype == 1) return detail::decode_payload<float>(bytes, path, std::move(shape), off);
  return detail::decode_payload<double>(bytes, path, std::move(shape), off);
}

template <typename S>
Tensor<S> load_tensor_as(const std::string& path) {
  AnyTensor t = load_tensor(path);
  if (!std::holds_alternative<Tensor<S>>(t))
    throw IoError(path + ": holds " + (std::holds_alternative<Tensor<float>>(t) ? "float32" : "float64") +
                  ", wanted " + (detail::dtype_code<S>() == 1 ? "float32" : "float64"));
  return std::get<Tensor<S>>(std::move(t));
}

// Binary PGM (P5, maxval 255) of a unit-range image; values are clipped to
// [0,1] and rounded. Multi-channel images are tiled side by side.
template <typename S>
void save_pgm(const std::string& path, const Tensor<S>& img) {
  if (img.rank() != 3) throw ShapeError("save_pgm: need rank 3 (C,H,W), got " + shape_str(img.shape()));
  const std::size_t c = img.extent(0), h = img.extent(1), w = img.extent(2);
  std::string out = "P5\n" + std::to_string(c * w) + " " + std::to_string(h) + "\n255\n";
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < w; ++j) {
        const double v = std::clamp(static_cast<double>(img(ch, i, j)), 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
  detail::write_file_bytes(path, out);
}

}  // namespace indigo
