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

#include "splitsim/transport.h"

#include <fmt/format.h>

namespace splitsim {

Transport::Transport(int num_endpoints, std::chrono::milliseconds timeout)
    : num_endpoints_(num_endpoints),
      timeout_(timeout),
      queues_(static_cast<size_t>(num_endpoints) * static_cast<size_t>(num_endpoints)) {
  if (num_endpoints < 2) {
    throw std::invalid_argument("transport needs at least two endpoints");
  }
}

void Transport::CheckEndpoint(int id) const {
  if (id < 0 || id >= num_endpoints_) {
    throw ProtocolError(fmt::format("unknown endpoint {}", id));
  }
}

void Transport::Send(int from, int to, const Message& message) {
  CheckEndpoint(from);
  CheckEndpoint(to);
  auto bytes = EncodeMessage(message);
  {
    std::lock_guard<std::mutex> lock(mu_);
    bytes_sent_ += bytes.size();
    queues_[static_cast<size_t>(to * num_endpoints_ + from)].push_back(std::move(bytes));
  }
  cv_.notify_all();
}

Message Transport::Receive(int to, int from) {
  CheckEndpoint(from);
  CheckEndpoint(to);
  std::vector<uint8_t> bytes;
  {
    std::unique_lock<std::mutex> lock(mu_);
    auto& q = queues_[static_cast<size_t>(to * num_endpoints_ + from)];
    if (!cv_.wait_for(lock, timeout_, [&q] { return !q.empty(); })) {
      throw ProtocolError(fmt::format(
          "endpoint {} timed out after {} ms waiting for endpoint {}", to,
          timeout_.count(), from));
    }
    bytes = std::move(q.front());
    q.pop_front();
  }
  return DecodeMessage(bytes);
}

size_t Transport::Pending(int to, int from) const {
  CheckEndpoint(from);
  CheckEndpoint(to);
  std::lock_guard<std::mutex> lock(mu_);
  return queues_[static_cast<size_t>(to * num_endpoints_ + from)].size();
}

uint64_t Transport::bytes_sent() const {
  std::lock_guard<std::mutex> lock(mu_);
  return bytes_sent_;
}

}  // namespace splitsim
