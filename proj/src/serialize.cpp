// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "mfsr/serialize.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

namespace mfsr {
namespace {

constexpr std::array<char, 4> kMagic{'M', 'F', 'T', '1'};
constexpr std::uint8_t kMaxRank = 8;

template <typename U>
void write_le(std::ostream& out, U value) {
  std::array<unsigned char, sizeof(U)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(U));
}

template <typename U>
U read_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(U))) throw FormatError("unexpected end of stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  U value;
  std::memcpy(&value, bytes.data(), sizeof(U));
  return value;
}

template <typename Stored, typename T>
BasicTensor<T> read_payload(std::istream& in, Shape shape) {
  std::vector<T> data(numel(shape));
  for (auto& v : data) v = static_cast<T>(read_le<Stored>(in));
  return BasicTensor<T>(std::move(shape), std::move(data));
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return read_le<std::uint64_t>(in); }

template <typename T>
void write_tensor(std::ostream& out, const BasicTensor<T>& tensor) {
  if (tensor.rank() > kMaxRank) throw FormatError("tensor rank exceeds MFT1 limit");
  out.write(kMagic.data(), kMagic.size());
  write_le(out, static_cast<std::uint8_t>(dtype_of<T>()));
  write_le(out, static_cast<std::uint8_t>(tensor.rank()));
  for (const auto extent : tensor.shape()) write_le(out, static_cast<std::uint64_t>(extent));
  for (const T v : tensor.data()) write_le(out, v);
  if (!out) throw FormatError("failed writing tensor");
}

template <typename T>
BasicTensor<T> read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw FormatError("bad MFT1 magic");
  const auto dtype = read_le<std::uint8_t>(in);
  const auto rank = read_le<std::uint8_t>(in);
  if (rank > kMaxRank) throw FormatError("MFT1 rank out of range");
  Shape shape(rank);
  for (auto& e : shape) e = static_cast<std::size_t>(read_le<std::uint64_t>(in));
  switch (static_cast<DType>(dtype)) {
    case DType::kF32:
      return read_payload<float, T>(in, std::move(shape));
    case DType::kF64:
      return read_payload<double, T>(in, std::move(shape));
  }
  throw FormatError("unknown MFT1 dtype tag " + std::to_string(dtype));
}

template void write_tensor(std::ostream&, const BasicTensor<float>&);
template void write_tensor(std::ostream&, const BasicTensor<double>&);
template BasicTensor<float> read_tensor(std::istream&);
template BasicTensor<double> read_tensor(std::istream&);

}  // namespace mfsr
