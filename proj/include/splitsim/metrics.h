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

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "splitsim/tensor.h"

namespace splitsim {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
  // Min-max rescale each plane to [0, 1] before comparing.
  bool rescale = true;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
std::vector<double> GaussianTaps(int window, double sigma);

struct SsimResult {
  std::vector<double> per_sample;  // mean over channels and valid windows
  double mean = 0.0;
};

// Gaussian-window SSIM averaged over all fully-contained window positions.
// Both tensors must share a shape with H, W >= window.
SsimResult Ssim(const Tensor& a, const Tensor& b, const SsimParams& params = {});

// Channel argmax, [B,C,H,W] -> [B,1,H,W].
Tensor ArgmaxChannels(const Tensor& logits);

struct DiceScores {
  std::array<double, 3> per_class{};  // foreground classes 1..3
  double mean = 0.0;
};

// Accumulates overlap counts across batches. A class absent from both
// prediction and truth scores 1.
class DiceAccumulator {
 public:
  void Add(const Tensor& pred_labels, const Tensor& true_labels);
  DiceScores Result() const;

 private:
  std::array<int64_t, 3> inter_{};
  std::array<int64_t, 3> pred_{};
  std::array<int64_t, 3> truth_{};
};

DiceScores MeanDice(const Tensor& pred_labels, const Tensor& true_labels);

// One inversion outcome to be folded into a leakage report.
struct InversionScore {
  int site = 0;
  int level = 0;
  std::string defense;
  std::vector<double> per_sample;
};

struct LeakageRow {
  int site = 0;
  int level = 0;
  std::string defense;
  double mean_ssim = 0.0;
  std::vector<double> per_sample;
};

struct LeakageReport {
  std::vector<LeakageRow> rows;  // sorted by (site, level, defense)

  // site,level,defense,mean_ssim,per_sample (per-sample values ';'-joined)
  std::string ToCsv() const;
  // Mean SSIM per (level, defense) over sites, one line each.
  std::string Summary() const;
};

// Merges scores with equal (site, level, defense). Throws on empty input.
LeakageReport BuildLeakageReport(std::span<const InversionScore> scores);

// Formats a double with enough digits to round-trip.
std::string FormatDouble(double v);

}  // namespace splitsim
