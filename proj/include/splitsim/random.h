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

#include <cstdint>
#include <initializer_list>
#include <random>
#include <utility>
#include <vector>

namespace splitsim {

// Independent stream identifiers mixed into derived seeds.
enum class Stream : uint64_t {
  kEncoder = 1,
  kDecoder,
  kDropout,
  kNoise,
  kAugment,
  kEpochShuffle,
  kAttackInit,
  kPhantom,
  kSplit,
  kTest,
};

uint64_t SplitMix64(uint64_t x);

// Hashes (base, stream, tags...) into a new 64-bit seed.
uint64_t DeriveSeed(uint64_t base, Stream stream,
                    std::initializer_list<uint64_t> tags = {});

// Seeded generator with distribution code of our own so that streams are
// reproducible across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t NextU64() { return engine_(); }
  // Uniform in [0, 1) with 24 random mantissa bits.
  float Uniform() {
    return static_cast<float>(NextU64() >> 40) * (1.0f / 16777216.0f);
  }
  double UniformDouble() {
    return static_cast<double>(NextU64() >> 11) * (1.0 / 9007199254740992.0);
  }
  double Uniform(double lo, double hi) { return lo + (hi - lo) * UniformDouble(); }
  // Standard normal via Box-Muller.
  double Normal();
  // Uniform integer in [0, n).
  uint64_t Below(uint64_t n);

  template <typename T>
  void Shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<size_t>(Below(i))]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace splitsim
