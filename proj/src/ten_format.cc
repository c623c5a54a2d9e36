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

#include "splitsim/ten_format.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

namespace splitsim {

namespace le {

void PutU8(std::vector<uint8_t>& out, uint8_t v) { out.push_back(v); }

void PutU16(std::vector<uint8_t>& out, uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void PutU32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void PutU64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

namespace {

void Need(std::span<const uint8_t> in, size_t offset, size_t n) {
  if (offset + n > in.size()) {
    throw FormatError(fmt::format(
        "truncated input: need {} bytes at offset {}, have {}", n, offset,
        in.size()));
  }
}

template <typename T>
T GetLe(std::span<const uint8_t> in, size_t* offset) {
  Need(in, *offset, sizeof(T));
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<T>(in[*offset + i]) << (8 * i));
  }
  *offset += sizeof(T);
  return v;
}

}  // namespace

uint8_t GetU8(std::span<const uint8_t> in, size_t* offset) {
  return GetLe<uint8_t>(in, offset);
}
uint16_t GetU16(std::span<const uint8_t> in, size_t* offset) {
  return GetLe<uint16_t>(in, offset);
}
uint32_t GetU32(std::span<const uint8_t> in, size_t* offset) {
  return GetLe<uint32_t>(in, offset);
}
uint64_t GetU64(std::span<const uint8_t> in, size_t* offset) {
  return GetLe<uint64_t>(in, offset);
}

}  // namespace le

namespace {
constexpr char kMagic[4] = {'S', 'T', 'E', 'N'};
constexpr uint8_t kVersion = 1;
constexpr uint8_t kRank = 4;
}  // namespace

void EncodeTen(const Tensor& tensor, std::vector<uint8_t>& out) {
  const auto& s = tensor.shape();
  out.reserve(out.size() + kTenHeaderBytes + 4 * tensor.data().size());
  out.insert(out.end(), kMagic, kMagic + 4);
  le::PutU8(out, kVersion);
  le::PutU8(out, kRank);
  for (int64_t d : {s.b, s.c, s.h, s.w}) {
    if (d > UINT32_MAX) throw FormatError("dimension exceeds u32 range");
    le::PutU32(out, static_cast<uint32_t>(d));
  }
  for (float v : tensor.data()) le::PutU32(out, std::bit_cast<uint32_t>(v));
}

std::vector<uint8_t> EncodeTen(const Tensor& tensor) {
  std::vector<uint8_t> out;
  EncodeTen(tensor, out);
  return out;
}

Tensor DecodeTen(std::span<const uint8_t> bytes, size_t* offset) {
  if (*offset + kTenHeaderBytes > bytes.size()) {
    throw FormatError("ten: truncated header");
  }
  if (std::memcmp(bytes.data() + *offset, kMagic, 4) != 0) {
    throw FormatError("ten: bad magic, expected \"STEN\"");
  }
  *offset += 4;
  const uint8_t version = le::GetU8(bytes, offset);
  if (version != kVersion) {
    throw FormatError(fmt::format("ten: unsupported version {}", version));
  }
  const uint8_t rank = le::GetU8(bytes, offset);
  if (rank != kRank) {
    throw FormatError(fmt::format("ten: unsupported rank {}", rank));
  }
  TensorShape shape;
  shape.b = le::GetU32(bytes, offset);
  shape.c = le::GetU32(bytes, offset);
  shape.h = le::GetU32(bytes, offset);
  shape.w = le::GetU32(bytes, offset);
  try {
    shape.Validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("ten: ") + e.what());
  }
  const size_t payload = static_cast<size_t>(shape.numel()) * 4;
  if (*offset + payload > bytes.size()) {
    throw FormatError(fmt::format(
        "ten: header dims {} need {} payload bytes, only {} available",
        shape.ToString(), payload, bytes.size() - *offset));
  }
  std::vector<float> values(static_cast<size_t>(shape.numel()));
  for (float& v : values) v = std::bit_cast<float>(le::GetU32(bytes, offset));
  return Tensor(shape, std::move(values));
}

Tensor DecodeTen(std::span<const uint8_t> bytes) {
  size_t offset = 0;
  Tensor t = DecodeTen(bytes, &offset);
  if (offset != bytes.size()) {
    throw FormatError(fmt::format(
        "ten: {} trailing bytes after payload", bytes.size() - offset));
  }
  return t;
}

std::vector<uint8_t> ReadFileBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void WriteFileBytes(const std::filesystem::path& path,
                    std::span<const uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void SaveTen(const std::filesystem::path& path, const Tensor& tensor) {
  WriteFileBytes(path, EncodeTen(tensor));
}

Tensor LoadTen(const std::filesystem::path& path) {
  const auto bytes = ReadFileBytes(path);
  try {
    return DecodeTen(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace splitsim
