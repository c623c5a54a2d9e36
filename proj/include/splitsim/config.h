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

// Experiment configuration as a flat "key = value" text document.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "splitsim/attack.h"
#include "splitsim/model.h"
#include "splitsim/slproto.h"

namespace splitsim {

// Carries every problem found, one per entry.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

enum class ModelVariant { kUNetCentral, kSplitAllSkips, kSplitNoSkips, kSplitX3X4 };

std::string_view ToString(ModelVariant variant);
// Accepts unet_central, split_all_skips, split_no_skips, split_x3_x4.
ModelVariant ParseModelVariant(std::string_view name);
SkipVariant ToSkipVariant(ModelVariant variant);

enum class InterceptWhen { kNone, kFirst, kLast };

struct ExperimentConfig {
  int sites = 4;
  ModelVariant variant = ModelVariant::kSplitAllSkips;
  double dropout_p = 0.0;
  double noise_sigma = 0.0;
  int64_t batch_size = 4;
  int epochs = 3;
  uint64_t seed = 0;
  int64_t image_size = 96;
  int64_t samples = 200;
  double lr = 1e-3;
  std::string data_dir;  // empty: generate phantoms in memory
  InterceptWhen intercept = InterceptWhen::kLast;
  int64_t attack_steps = 2000;
  double attack_lr = 0.1;
  double alpha_act = 1e-3;
  double alpha_tv = 1e-4;
  double alpha_l2 = 1e-5;
  bool squared_norms = false;
  bool threaded = false;

  // Every problem found, empty when valid.
  std::vector<std::string> Problems() const;
  // Throws ConfigError listing every problem.
  void Validate() const;

  ShareGuard guard() const { return {dropout_p, noise_sigma}; }
  AttackConfig attack() const;
  ProtocolOptions protocol() const;

  // Resolved document, one key per line in a fixed order.
  std::string ToText() const;
};

// Parses a document; unknown keys, duplicates, malformed values and
// validation failures are reported together in one ConfigError.
ExperimentConfig ParseConfig(std::string_view text);
ExperimentConfig LoadConfig(const std::string& path);

// Sets one key from its text form; throws ConfigError for unknown keys or
// malformed values.
void SetConfigValue(ExperimentConfig& config, std::string_view key,
                    std::string_view value);

}  // namespace splitsim
