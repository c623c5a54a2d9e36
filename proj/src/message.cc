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

#include "splitsim/message.h"

#include <fmt/format.h>

#include "splitsim/ten_format.h"

namespace splitsim {

std::string ToString(MessageType type) {
  switch (type) {
    case MessageType::kBatchSelect:
      return "BatchSelect";
    case MessageType::kActShare:
      return "ActShare";
    case MessageType::kGradShare:
      return "GradShare";
    case MessageType::kAck:
      return "Ack";
  }
  return fmt::format("MessageType({})", static_cast<int>(type));
}

namespace {

uint8_t CheckedSite(int site) {
  if (site < 0 || site > 255) {
    throw ProtocolError(fmt::format("site id {} does not fit the wire format", site));
  }
  return static_cast<uint8_t>(site);
}

}  // namespace

Message MakeBatchSelect(uint32_t iteration, std::span<const int64_t> indices,
                        uint64_t aug_seed) {
  Message m;
  m.type = MessageType::kBatchSelect;
  m.iteration = iteration;
  m.aug_seed = aug_seed;
  m.indices.assign(indices.begin(), indices.end());
  return m;
}

Message MakeActShare(uint32_t iteration, int site, std::map<int, Tensor> levels) {
  Message m;
  m.type = MessageType::kActShare;
  m.iteration = iteration;
  m.site = CheckedSite(site);
  m.levels = std::move(levels);
  return m;
}

Message MakeGradShare(uint32_t iteration, int site, std::map<int, Tensor> levels) {
  Message m = MakeActShare(iteration, site, std::move(levels));
  m.type = MessageType::kGradShare;
  return m;
}

Message MakeAck(uint32_t iteration, int site) {
  Message m;
  m.type = MessageType::kAck;
  m.iteration = iteration;
  m.site = CheckedSite(site);
  return m;
}

std::vector<uint8_t> EncodeMessage(const Message& message) {
  std::vector<uint8_t> out;
  le::PutU8(out, static_cast<uint8_t>(message.type));
  le::PutU32(out, message.iteration);
  le::PutU8(out, message.site);
  if (message.levels.size() > 255) {
    throw ProtocolError("too many levels for one message");
  }
  le::PutU8(out, static_cast<uint8_t>(message.levels.size()));
  switch (message.type) {
    case MessageType::kBatchSelect:
      le::PutU64(out, message.aug_seed);
      le::PutU32(out, static_cast<uint32_t>(message.indices.size()));
      for (int64_t idx : message.indices) {
        if (idx < 0 || idx > static_cast<int64_t>(UINT32_MAX)) {
          throw ProtocolError(fmt::format("sample index {} out of wire range", idx));
        }
        le::PutU32(out, static_cast<uint32_t>(idx));
      }
      break;
    case MessageType::kActShare:
    case MessageType::kGradShare:
      for (const auto& [level, tensor] : message.levels) {
        le::PutU8(out, static_cast<uint8_t>(level));
        EncodeTen(tensor, out);
      }
      break;
    case MessageType::kAck:
      break;
  }
  return out;
}

Message DecodeMessage(std::span<const uint8_t> bytes) {
  try {
    size_t off = 0;
    Message m;
    const uint8_t type = le::GetU8(bytes, &off);
    if (type < 1 || type > 4) {
      throw ProtocolError(fmt::format("unknown message type {}", type));
    }
    m.type = static_cast<MessageType>(type);
    m.iteration = le::GetU32(bytes, &off);
    m.site = le::GetU8(bytes, &off);
    const uint8_t count = le::GetU8(bytes, &off);
    if (m.type == MessageType::kBatchSelect) {
      m.aug_seed = le::GetU64(bytes, &off);
      const uint32_t n = le::GetU32(bytes, &off);
      m.indices.reserve(n);
      for (uint32_t i = 0; i < n; ++i) m.indices.push_back(le::GetU32(bytes, &off));
    } else if (m.type != MessageType::kAck) {
      for (uint8_t i = 0; i < count; ++i) {
        const int level = le::GetU8(bytes, &off);
        if (m.levels.count(level)) {
          throw ProtocolError(fmt::format("duplicate level {} in {}", level, ToString(m.type)));
        }
        m.levels[level] = DecodeTen(bytes, &off);
      }
    }
    if (off != bytes.size()) {
      throw ProtocolError(fmt::format("{} has {} trailing bytes", ToString(m.type),
                                      bytes.size() - off));
    }
    return m;
  } catch (const FormatError& e) {
    throw ProtocolError(std::string("malformed message: ") + e.what());
  }
}

}  // namespace splitsim
