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

// Protocol messages and their byte codec.
//
// Header: type u8 | iteration u32 | site u8 | level count u8, little endian.
// BatchSelect continues with aug seed u64 | count u32 | count x index u32.
// ActShare and GradShare continue with level count x (level u8 | .ten blob).

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "splitsim/tensor.h"

namespace splitsim {

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class MessageType : uint8_t {
  kBatchSelect = 1,
  kActShare = 2,
  kGradShare = 3,
  kAck = 4,
};

std::string ToString(MessageType type);

struct Message {
  MessageType type = MessageType::kAck;
  uint32_t iteration = 0;
  uint8_t site = 0;
  // BatchSelect.
  uint64_t aug_seed = 0;
  std::vector<int64_t> indices;
  // ActShare / GradShare, keyed by encoder level.
  std::map<int, Tensor> levels;
};

Message MakeBatchSelect(uint32_t iteration, std::span<const int64_t> indices,
                        uint64_t aug_seed);
Message MakeActShare(uint32_t iteration, int site, std::map<int, Tensor> levels);
Message MakeGradShare(uint32_t iteration, int site, std::map<int, Tensor> levels);
Message MakeAck(uint32_t iteration, int site);

std::vector<uint8_t> EncodeMessage(const Message& message);
// Throws ProtocolError on unknown types or malformed payloads.
Message DecodeMessage(std::span<const uint8_t> bytes);

}  // namespace splitsim
