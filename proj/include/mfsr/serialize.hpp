// Copyright 2026 The mfsr Authors
// SPDX-License-Identifier: Apache-2.0

// MFT1 tensor blobs, little-endian:
//   "MFT1" | u8 dtype (0 = f32, 1 = f64) | u8 rank | rank x u64 extents | raw data

#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <variant>

#include "mfsr/tensor.hpp"

namespace mfsr {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() {
  return DType::kF32;
}
template <>
constexpr DType dtype_of<double>() {
  return DType::kF64;
}

template <typename T>
void write_tensor(std::ostream& out, const BasicTensor<T>& tensor);

/// Reads one MFT1 blob; converts to T when the stored dtype differs.
template <typename T>
BasicTensor<T> read_tensor(std::istream& in);

void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);

}  // namespace mfsr
