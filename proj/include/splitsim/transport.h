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

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <vector>

#include "splitsim/message.h"

namespace splitsim {

// In-process mailbox between numbered endpoints. Each (sender, receiver)
// pair is a FIFO; Receive blocks until a message from that sender arrives
// or the timeout expires.
class Transport {
 public:
  explicit Transport(int num_endpoints,
                     std::chrono::milliseconds timeout = std::chrono::seconds(30));
  Transport(const Transport&) = delete;
  Transport& operator=(const Transport&) = delete;

  void Send(int from, int to, const Message& message);
  // Throws ProtocolError on timeout.
  Message Receive(int to, int from);

  size_t Pending(int to, int from) const;
  uint64_t bytes_sent() const;
  int num_endpoints() const { return num_endpoints_; }

 private:
  void CheckEndpoint(int id) const;

  int num_endpoints_;
  std::chrono::milliseconds timeout_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::deque<std::vector<uint8_t>>> queues_;  // [to * n + from]
  uint64_t bytes_sent_ = 0;
};

}  // namespace splitsim
