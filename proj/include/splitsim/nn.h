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
#include <string>
#include <vector>

#include "splitsim/random.h"
#include "splitsim/tensor.h"

namespace splitsim {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedTensor>;

// Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)).
Tensor KaimingUniform(TensorShape shape, int64_t fan_in, Rng& rng);

// Two (conv3x3 -> instance norm -> LeakyReLU(0.1)) stages.
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(int64_t in_channels, int64_t out_channels, uint64_t seed);

  Tensor Forward(Graph& g, const Tensor& x) const;
  void AppendParameters(const std::string& prefix, ParameterList& out) const;
  ConvBlock Clone() const;

  int64_t in_channels() const { return in_channels_; }
  int64_t out_channels() const { return out_channels_; }

 private:
  int64_t in_channels_ = 0;
  int64_t out_channels_ = 0;
  Tensor w1_, b1_, w2_, b2_;
};

inline constexpr float kLeakySlope = 0.1f;
inline constexpr float kNormEps = 1e-5f;
inline constexpr double kDiceSmooth = 1e-5;

// Soft Dice loss over all classes (per sample, per class, then averaged)
// plus mean pixelwise cross-entropy. `labels` is [B,1,H,W] holding integer
// class ids in [0, C).
Tensor DiceCeLoss(Graph& g, const Tensor& logits, const Tensor& labels);

struct DiceCeParts {
  double dice = 0.0;  // 1 - mean soft Dice
  double ce = 0.0;
  double total() const { return dice + ce; }
};
DiceCeParts DiceCeLossParts(const Tensor& logits, const Tensor& labels);

// Throws std::invalid_argument unless every label is an integer in
// [0, num_classes).
void ValidateLabels(const Tensor& labels, int64_t num_classes);

struct AdamOptions {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Bias-corrected Adam over a fixed parameter set. Owned by one site.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamOptions options = {});

  // Throws std::logic_error if a parameter never received a gradient.
  void Step(float lr);
  int64_t step_count() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  AdamOptions options_;
  int64_t t_ = 0;
};

struct CosineSchedule {
  double initial_rate = 0.1;
  int64_t total_steps = 1;
};

// initial_rate * 0.5 * (1 + cos(pi * step / T)); 0 beyond T.
double CosineRate(const CosineSchedule& schedule, int64_t step);

// Inverted dropout. The mask is drawn from `seed` and reused by backward.
// p == 0 returns the input tensor itself.
Tensor Dropout(Graph& g, const Tensor& x, double p, uint64_t seed);

// x + N(0, sigma^2) noise with identity Jacobian. sigma == 0 returns x.
Tensor GaussianNoise(Graph& g, const Tensor& x, double sigma, uint64_t seed);

}  // namespace splitsim
