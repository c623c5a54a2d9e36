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

// White-box inversion of shared encoder activations.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "splitsim/metrics.h"
#include "splitsim/model.h"
#include "splitsim/tensor.h"

namespace splitsim {

struct AttackConfig {
  double alpha_act = 1e-3;
  double alpha_tv = 1e-4;
  double alpha_l2 = 1e-5;
  int64_t steps = 2000;
  double initial_rate = 0.1;
  // Use ||.||^2 instead of ||.|| for the activation and l2 terms.
  bool squared_norms = false;
  uint64_t seed = 0;

  // Throws std::invalid_argument on negative weights or steps < 1.
  void Validate() const;
};

// Anisotropic total variation divided by B*C*H*W. Requires H, W >= 2.
Tensor TotalVariation(Graph& g, const Tensor& image);

// alpha_act * ||target - candidate|| + alpha_tv * TV(image)
//   + alpha_l2 * ||image||.
Tensor InversionLoss(Graph& g, const Tensor& target, const Tensor& candidate,
                     const Tensor& image, const AttackConfig& config);

struct InversionResult {
  Tensor recovered;  // [B, C, H, W] of the encoder input
  double initial_loss = 0.0;
  double final_loss = 0.0;  // loss of the returned (best) iterate
  std::vector<double> loss_trace;
  int level = 0;
  int site = 0;
};

// Recovers the encoder input that produced `target` at `level`. The starting
// image is uniform [0,1), drawn per sample from (seed, site, level, sample).
InversionResult Invert(const Encoder& encoder, const Tensor& target, int level,
                       const AttackConfig& config, int site = 0);

// Runs Invert on each sample of the batch separately and restacks.
InversionResult InvertPerSample(const Encoder& encoder, const Tensor& target,
                                int level, const AttackConfig& config,
                                int site = 0);

struct SweepOptions {
  std::vector<int> sites;
  std::vector<int> levels;
  bool per_sample = false;
  std::string defense = "none";
  // Encoder snapshot; empty means encoders.ckpt inside the dump directory.
  std::filesystem::path snapshot;
};

struct SweepOutput {
  std::vector<InversionResult> results;  // ordered by (site, level)
  std::vector<InversionScore> scores;
};

// Inverts intercepted dumps under `dump_dir` (see intercept.h) and scores
// each inversion with SSIM against the recorded inputs.
SweepOutput LevelSweep(const std::filesystem::path& dump_dir,
                       const SweepOptions& options, const AttackConfig& config);

// Restores encoder `site` from an encoder snapshot.
Encoder LoadSiteEncoder(const std::filesystem::path& snapshot, int site);

// One "site,level,sample,defense,ssim" row per sample.
std::string SsimCsv(const std::vector<InversionScore>& scores);

}  // namespace splitsim
