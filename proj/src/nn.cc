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

#include "splitsim/nn.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

#include <fmt/format.h>

namespace splitsim {

Tensor KaimingUniform(TensorShape shape, int64_t fan_in, Rng& rng) {
  Tensor t(shape);
  const float bound = static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  for (float& v : t.data()) v = (2.0f * rng.Uniform() - 1.0f) * bound;
  t.set_requires_grad(true);
  return t;
}

namespace {

Tensor ZeroBias(int64_t n) {
  Tensor t(TensorShape{n, 1, 1, 1});
  t.set_requires_grad(true);
  return t;
}

Tensor CloneParam(const Tensor& t) {
  Tensor c = t.Clone();
  c.set_requires_grad(t.requires_grad());
  return c;
}

}  // namespace

ConvBlock::ConvBlock(int64_t in_channels, int64_t out_channels, uint64_t seed)
    : in_channels_(in_channels), out_channels_(out_channels) {
  Rng rng(seed);
  w1_ = KaimingUniform({out_channels, in_channels, 3, 3}, in_channels * 9, rng);
  b1_ = ZeroBias(out_channels);
  w2_ = KaimingUniform({out_channels, out_channels, 3, 3}, out_channels * 9,
                       rng);
  b2_ = ZeroBias(out_channels);
}

Tensor ConvBlock::Forward(Graph& g, const Tensor& x) const {
  Tensor h = g.LeakyRelu(g.InstanceNorm(g.Conv2d(x, w1_, b1_), kNormEps),
                         kLeakySlope);
  return g.LeakyRelu(g.InstanceNorm(g.Conv2d(h, w2_, b2_), kNormEps),
                     kLeakySlope);
}

void ConvBlock::AppendParameters(const std::string& prefix,
                                 ParameterList& out) const {
  out.push_back({prefix + ".conv1.weight", w1_});
  out.push_back({prefix + ".conv1.bias", b1_});
  out.push_back({prefix + ".conv2.weight", w2_});
  out.push_back({prefix + ".conv2.bias", b2_});
}

ConvBlock ConvBlock::Clone() const {
  ConvBlock c;
  c.in_channels_ = in_channels_;
  c.out_channels_ = out_channels_;
  c.w1_ = CloneParam(w1_);
  c.b1_ = CloneParam(b1_);
  c.w2_ = CloneParam(w2_);
  c.b2_ = CloneParam(b2_);
  return c;
}

// ---------------------------------------------------------------------------
// Dice + cross-entropy

void ValidateLabels(const Tensor& labels, int64_t num_classes) {
  for (float v : labels.data()) {
    if (!(v >= 0.f) || v >= static_cast<float>(num_classes) ||
        v != std::floor(v)) {
      throw std::invalid_argument(fmt::format(
          "label value {} outside the class range [0, {})", v, num_classes));
    }
  }
}

namespace {

struct DiceCeWork {
  std::vector<float> probs;  // softmax, same layout as logits
  double dice_loss = 0.0;
  double ce = 0.0;
  // Per (b, c): intersection, prediction mass, target mass.
  std::vector<double> inter, pred, target;
};

DiceCeWork ComputeDiceCe(const Tensor& logits, const Tensor& labels) {
  const auto& s = logits.shape();
  const auto& ls = labels.shape();
  if (ls.b != s.b || ls.c != 1 || ls.h != s.h || ls.w != s.w) {
    throw ShapeError(fmt::format("dice_ce_loss: labels {} do not match logits {}",
                                 ls.ToString(), s.ToString()));
  }
  ValidateLabels(labels, s.c);
  const int64_t plane = s.h * s.w;
  DiceCeWork w;
  w.probs.resize(static_cast<size_t>(logits.numel()));
  w.inter.assign(static_cast<size_t>(s.b * s.c), 0.0);
  w.pred.assign(static_cast<size_t>(s.b * s.c), 0.0);
  w.target.assign(static_cast<size_t>(s.b * s.c), 0.0);
  auto x = logits.data();
  auto y = labels.data();
  double ce = 0.0;
  for (int64_t b = 0; b < s.b; ++b) {
    const int64_t base = b * s.c * plane;
    for (int64_t p = 0; p < plane; ++p) {
      double mx = x[static_cast<size_t>(base + p)];
      for (int64_t c = 1; c < s.c; ++c) {
        mx = std::max<double>(mx, x[static_cast<size_t>(base + c * plane + p)]);
      }
      double total = 0.0;
      for (int64_t c = 0; c < s.c; ++c) {
        total += std::exp(x[static_cast<size_t>(base + c * plane + p)] - mx);
      }
      const double log_total = std::log(total);
      const auto label = static_cast<int64_t>(y[static_cast<size_t>(b * plane + p)]);
      for (int64_t c = 0; c < s.c; ++c) {
        const size_t idx = static_cast<size_t>(base + c * plane + p);
        const double logp = x[idx] - mx - log_total;
        const double prob = std::exp(logp);
        w.probs[idx] = static_cast<float>(prob);
        const size_t bc = static_cast<size_t>(b * s.c + c);
        w.pred[bc] += prob;
        if (c == label) {
          ce -= logp;
          w.inter[bc] += prob;
          w.target[bc] += 1.0;
        }
      }
    }
  }
  const double pixels = static_cast<double>(s.b * plane);
  w.ce = ce / pixels;
  double dice_sum = 0.0;
  for (size_t bc = 0; bc < w.inter.size(); ++bc) {
    dice_sum += (2.0 * w.inter[bc] + kDiceSmooth) /
                (w.pred[bc] + w.target[bc] + kDiceSmooth);
  }
  w.dice_loss = 1.0 - dice_sum / static_cast<double>(w.inter.size());
  return w;
}

}  // namespace

DiceCeParts DiceCeLossParts(const Tensor& logits, const Tensor& labels) {
  const DiceCeWork w = ComputeDiceCe(logits, labels);
  return {w.dice_loss, w.ce};
}

Tensor DiceCeLoss(Graph& g, const Tensor& logits, const Tensor& labels) {
  DiceCeWork w = ComputeDiceCe(logits, labels);
  Tensor out = Tensor::Scalar(static_cast<float>(w.dice_loss + w.ce));
  if (!g.NeedsGrad({&logits})) return out;
  g.Record({logits}, out, [logits, labels, out, w = std::move(w)]() mutable {
    const auto& s = logits.shape();
    const int64_t plane = s.h * s.w;
    const double go = out.grad()[0];
    const double pixels = static_cast<double>(s.b * plane);
    const double dice_scale = -1.0 / static_cast<double>(s.b * s.c);
    auto y = labels.data();
    auto gx = logits.grad();
    std::vector<double> dl_dp(static_cast<size_t>(s.c));
    for (int64_t b = 0; b < s.b; ++b) {
      const int64_t base = b * s.c * plane;
      for (int64_t p = 0; p < plane; ++p) {
        const auto label = static_cast<int64_t>(y[static_cast<size_t>(b * plane + p)]);
        // dL/dp_c from the Dice term; CE is folded in at the logit level.
        double dot = 0.0;
        for (int64_t c = 0; c < s.c; ++c) {
          const size_t bc = static_cast<size_t>(b * s.c + c);
          const double den = w.pred[bc] + w.target[bc] + kDiceSmooth;
          const double t = c == label ? 1.0 : 0.0;
          const double num = 2.0 * w.inter[bc] + kDiceSmooth;
          dl_dp[static_cast<size_t>(c)] =
              dice_scale * (2.0 * t * den - num) / (den * den);
          dot += dl_dp[static_cast<size_t>(c)] *
                 w.probs[static_cast<size_t>(base + c * plane + p)];
        }
        for (int64_t c = 0; c < s.c; ++c) {
          const size_t idx = static_cast<size_t>(base + c * plane + p);
          const double prob = w.probs[idx];
          const double dice_grad =
              prob * (dl_dp[static_cast<size_t>(c)] - dot);
          const double ce_grad = (prob - (c == label ? 1.0 : 0.0)) / pixels;
          gx[idx] += static_cast<float>(go * (dice_grad + ce_grad));
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Optimisation

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.numel()), 0.f);
    v_.emplace_back(static_cast<size_t>(p.numel()), 0.f);
  }
}

void Adam::Step(float lr) {
  for (size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw std::logic_error(fmt::format(
          "adam: parameter {} {} has no gradient", i,
          params_[i].shape().ToString()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(options_.beta1),
                                    static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(options_.beta2),
                                    static_cast<double>(t_));
  const float step = static_cast<float>(lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const float b1 = options_.beta1, b2 = options_.beta2;
  for (size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i].data();
    auto g = std::as_const(params_[i]).grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (1.f - b1) * g[k];
      v[k] = b2 * v[k] + (1.f - b2) * g[k] * g[k];
      p[k] -= step * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + options_.eps);
    }
  }
}

double CosineRate(const CosineSchedule& schedule, int64_t step) {
  if (step >= schedule.total_steps) return 0.0;
  if (step <= 0) return schedule.initial_rate;
  const double frac =
      static_cast<double>(step) / static_cast<double>(schedule.total_steps);
  return schedule.initial_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

// ---------------------------------------------------------------------------
// Share-boundary perturbations

Tensor Dropout(Graph& g, const Tensor& x, double p, uint64_t seed) {
  if (!(p >= 0.0) || p >= 1.0) {
    throw std::invalid_argument(
        fmt::format("dropout probability must lie in [0, 1), got {}", p));
  }
  if (p == 0.0) return x;
  Rng rng(seed);
  const float keep_scale = static_cast<float>(1.0 / (1.0 - p));
  std::vector<float> mask(static_cast<size_t>(x.numel()));
  for (float& m : mask) m = rng.UniformDouble() < p ? 0.0f : keep_scale;
  Tensor out(x.shape());
  auto xv = x.data();
  auto yv = out.data();
  for (size_t i = 0; i < yv.size(); ++i) yv[i] = xv[i] * mask[i];
  if (g.NeedsGrad({&x})) {
    g.Record({x}, out, [x, out, mask = std::move(mask)]() mutable {
      auto go = out.grad();
      auto gx = x.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * mask[i];
    });
  }
  return out;
}

Tensor GaussianNoise(Graph& g, const Tensor& x, double sigma, uint64_t seed) {
  if (!(sigma >= 0.0)) {
    throw std::invalid_argument(
        fmt::format("noise sigma must be non-negative, got {}", sigma));
  }
  if (sigma == 0.0) return x;
  Rng rng(seed);
  Tensor out(x.shape());
  auto xv = x.data();
  auto yv = out.data();
  for (size_t i = 0; i < yv.size(); ++i) {
    yv[i] = xv[i] + static_cast<float>(sigma * rng.Normal());
  }
  if (g.NeedsGrad({&x})) {
    g.Record({x}, out, [x, out]() mutable {
      auto go = out.grad();
      auto gx = x.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
    });
  }
  return out;
}

}  // namespace splitsim
