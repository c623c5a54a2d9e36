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

#include "splitsim/metrics.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <tuple>

#include <fmt/format.h>

#include "splitsim/nn.h"

namespace splitsim {

std::vector<double> GaussianTaps(int window, double sigma) {
  std::vector<double> taps(static_cast<size_t>(window));
  const double centre = (window - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < window; ++i) {
    const double d = i - centre;
    taps[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += taps[static_cast<size_t>(i)];
  }
  for (double& t : taps) t /= total;
  return taps;
}

namespace {

std::vector<double> RescaledPlane(const float* src, int64_t n, bool rescale) {
  std::vector<double> out(src, src + n);
  if (!rescale) return out;
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  const double mn = *lo, range = *hi - *lo;
  for (double& v : out) v = range > 0.0 ? (v - mn) / range : 0.0;
  return out;
}

// Separable "valid" filtering of an h x w plane.
std::vector<double> FilterValid(const std::vector<double>& in, int64_t h,
                                int64_t w, const std::vector<double>& taps) {
  const auto k = static_cast<int64_t>(taps.size());
  const int64_t oh = h - k + 1, ow = w - k + 1;
  std::vector<double> tmp(static_cast<size_t>(h * ow), 0.0);
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int64_t i = 0; i < k; ++i) acc += taps[static_cast<size_t>(i)] * in[static_cast<size_t>(y * w + x + i)];
      tmp[static_cast<size_t>(y * ow + x)] = acc;
    }
  }
  std::vector<double> out(static_cast<size_t>(oh * ow), 0.0);
  for (int64_t y = 0; y < oh; ++y) {
    for (int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int64_t i = 0; i < k; ++i) acc += taps[static_cast<size_t>(i)] * tmp[static_cast<size_t>((y + i) * ow + x)];
      out[static_cast<size_t>(y * ow + x)] = acc;
    }
  }
  return out;
}

double SsimPlane(const float* pa, const float* pb, int64_t h, int64_t w,
                 const SsimParams& params, const std::vector<double>& taps) {
  const int64_t n = h * w;
  const auto a = RescaledPlane(pa, n, params.rescale);
  const auto b = RescaledPlane(pb, n, params.rescale);
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = FilterValid(a, h, w, taps);
  const auto mu_b = FilterValid(b, h, w, taps);
  const auto e_aa = FilterValid(aa, h, w, taps);
  const auto e_bb = FilterValid(bb, h, w, taps);
  const auto e_ab = FilterValid(ab, h, w, taps);
  const double c1 = params.c1(), c2 = params.c2();
  double total = 0.0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

}  // namespace

SsimResult Ssim(const Tensor& a, const Tensor& b, const SsimParams& params) {
  const auto& s = a.shape();
  if (s != b.shape()) {
    throw ShapeError(fmt::format("ssim: shape mismatch {} vs {}", s.ToString(),
                                 b.shape().ToString()));
  }
  if (s.h < params.window || s.w < params.window) {
    throw ShapeError(fmt::format("ssim: spatial size {}x{} is below the {}x{} window",
                                 s.h, s.w, params.window, params.window));
  }
  const auto taps = GaussianTaps(params.window, params.sigma);
  SsimResult result;
  const int64_t plane = s.h * s.w;
  for (int64_t bi = 0; bi < s.b; ++bi) {
    double acc = 0.0;
    for (int64_t c = 0; c < s.c; ++c) {
      const int64_t off = (bi * s.c + c) * plane;
      acc += SsimPlane(a.data().data() + off, b.data().data() + off, s.h, s.w,
                       params, taps);
    }
    result.per_sample.push_back(acc / static_cast<double>(s.c));
  }
  double total = 0.0;
  for (double v : result.per_sample) total += v;
  result.mean = total / static_cast<double>(result.per_sample.size());
  return result;
}

Tensor ArgmaxChannels(const Tensor& logits) {
  const auto& s = logits.shape();
  Tensor out(TensorShape{s.b, 1, s.h, s.w});
  for (int64_t b = 0; b < s.b; ++b) {
    for (int64_t y = 0; y < s.h; ++y) {
      for (int64_t x = 0; x < s.w; ++x) {
        int64_t best = 0;
        for (int64_t c = 1; c < s.c; ++c) {
          if (logits.at(b, c, y, x) > logits.at(b, best, y, x)) best = c;
        }
        out.at(b, 0, y, x) = static_cast<float>(best);
      }
    }
  }
  return out;
}

void DiceAccumulator::Add(const Tensor& pred_labels, const Tensor& true_labels) {
  if (pred_labels.shape() != true_labels.shape()) {
    throw ShapeError(fmt::format("dice: shape mismatch {} vs {}",
                                 pred_labels.shape().ToString(),
                                 true_labels.shape().ToString()));
  }
  ValidateLabels(pred_labels, 4);
  ValidateLabels(true_labels, 4);
  auto p = pred_labels.data();
  auto t = true_labels.data();
  for (size_t i = 0; i < p.size(); ++i) {
    const int pc = static_cast<int>(p[i]);
    const int tc = static_cast<int>(t[i]);
    if (pc > 0) ++pred_[static_cast<size_t>(pc - 1)];
    if (tc > 0) ++truth_[static_cast<size_t>(tc - 1)];
    if (pc > 0 && pc == tc) ++inter_[static_cast<size_t>(pc - 1)];
  }
}

DiceScores DiceAccumulator::Result() const {
  DiceScores scores;
  double total = 0.0;
  for (size_t c = 0; c < 3; ++c) {
    const int64_t den = pred_[c] + truth_[c];
    scores.per_class[c] =
        den == 0 ? 1.0 : 2.0 * static_cast<double>(inter_[c]) / static_cast<double>(den);
    total += scores.per_class[c];
  }
  scores.mean = total / 3.0;
  return scores;
}

DiceScores MeanDice(const Tensor& pred_labels, const Tensor& true_labels) {
  DiceAccumulator acc;
  acc.Add(pred_labels, true_labels);
  return acc.Result();
}

std::string FormatDouble(double v) { return fmt::format("{:.9g}", v); }

LeakageReport BuildLeakageReport(std::span<const InversionScore> scores) {
  if (scores.empty()) {
    throw std::invalid_argument("leakage report needs at least one inversion result");
  }
  std::map<std::tuple<int, int, std::string>, std::vector<double>> grouped;
  for (const auto& s : scores) {
    auto& dst = grouped[{s.site, s.level, s.defense}];
    dst.insert(dst.end(), s.per_sample.begin(), s.per_sample.end());
  }
  LeakageReport report;
  for (auto& [key, values] : grouped) {
    LeakageRow row;
    std::tie(row.site, row.level, row.defense) = key;
    double total = 0.0;
    for (double v : values) total += v;
    row.mean_ssim = values.empty() ? 0.0 : total / static_cast<double>(values.size());
    row.per_sample = std::move(values);
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string LeakageReport::ToCsv() const {
  std::string out = "site,level,defense,mean_ssim,per_sample\n";
  for (const auto& r : rows) {
    std::string samples;
    for (size_t i = 0; i < r.per_sample.size(); ++i) {
      if (i) samples += ';';
      samples += FormatDouble(r.per_sample[i]);
    }
    out += fmt::format("{},{},{},{},{}\n", r.site, r.level, r.defense,
                       FormatDouble(r.mean_ssim), samples);
  }
  return out;
}

std::string LeakageReport::Summary() const {
  std::map<std::pair<std::string, int>, std::pair<double, int>> agg;
  for (const auto& r : rows) {
    auto& a = agg[{r.defense, r.level}];
    a.first += r.mean_ssim;
    a.second += 1;
  }
  std::string out = "defense            level  sites  mean_ssim\n";
  for (const auto& [key, value] : agg) {
    out += fmt::format("{:<18} {:>5}  {:>5}  {:.4f}\n", key.first, key.second,
                       value.second, value.first / value.second);
  }
  return out;
}

}  // namespace splitsim
