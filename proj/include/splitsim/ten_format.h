// Copyright 2026 The splitsim Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// ".ten" tensor files:
//
//   "STEN" | version u8 = 1 | rank u8 = 4 | B,C,H,W as u32 LE | f32 LE data
//
// All multi-byte fields are little-endian regardless of host order.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "splitsim/tensor.h"

namespace splitsim {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr size_t kTenHeaderBytes = 4 + 1 + 1 + 4 * 4;

// Appends the encoded tensor to `out`.
void EncodeTen(const Tensor& tensor, std::vector<uint8_t>& out);
std::vector<uint8_t> EncodeTen(const Tensor& tensor);

// Decodes one tensor starting at `bytes[*offset]` and advances *offset.
Tensor DecodeTen(std::span<const uint8_t> bytes, size_t* offset);
// Decodes a buffer holding exactly one tensor.
Tensor DecodeTen(std::span<const uint8_t> bytes);

void SaveTen(const std::filesystem::path& path, const Tensor& tensor);
Tensor LoadTen(const std::filesystem::path& path);

// Little-endian primitives shared by the other binary codecs.
namespace le {

void PutU8(std::vector<uint8_t>& out, uint8_t v);
void PutU16(std::vector<uint8_t>& out, uint16_t v);
void PutU32(std::vector<uint8_t>& out, uint32_t v);
void PutU64(std::vector<uint8_t>& out, uint64_t v);
uint8_t GetU8(std::span<const uint8_t> in, size_t* offset);
uint16_t GetU16(std::span<const uint8_t> in, size_t* offset);
uint32_t GetU32(std::span<const uint8_t> in, size_t* offset);
uint64_t GetU64(std::span<const uint8_t> in, size_t* offset);

}  // namespace le

std::vector<uint8_t> ReadFileBytes(const std::filesystem::path& path);
void WriteFileBytes(const std::filesystem::path& path,
                    std::span<const uint8_t> bytes);

}  // namespace splitsim
