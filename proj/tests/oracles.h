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


// Brute-force reference implementations shared by unit and acceptance tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "splitsim/tensor.h"

namespace splitsim::testing {

// Anisotropic total variation by direct summation, divided by numel.
inline double LoopTv(const Tensor& t) {
  const auto& s = t.shape();
  double acc = 0.0;
  for (int64_t b = 0; b < s.b; ++b) {
    for (int64_t c = 0; c < s.c; ++c) {
      for (int64_t y = 0; y < s.h; ++y) {
        for (int64_t x = 0; x < s.w; ++x) {
          if (y + 1 < s.h) acc += std::fabs(static_cast<double>(t.at(b, c, y + 1, x)) - t.at(b, c, y, x));
          if (x + 1 < s.w) acc += std::fabs(static_cast<double>(t.at(b, c, y, x + 1)) - t.at(b, c, y, x));
        }
      }
    }
  }
  return acc / static_cast<double>(s.numel());
}

// Independent SSIM: 2-D Gaussian window evaluated directly at every valid
// position, population statistics, min-max rescaled inputs.
inline double DirectSsim(const Tensor& a, const Tensor& b) {
  const int64_t h = a.shape().h, w = a.shape().w;
  const int k = 11;
  const double sigma = 1.5;
  std::vector<double> w2(k * k);
  double norm = 0.0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const double di = i - 5, dj = j - 5;
      w2[static_cast<size_t>(i * k + j)] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
      norm += w2[static_cast<size_t>(i * k + j)];
    }
  }
  auto rescale = [](const Tensor& t) {
    auto d = t.data();
    const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
    std::vector<double> out;
    for (float v : d) out.push_back((static_cast<double>(v) - *lo) / (static_cast<double>(*hi) - *lo));
    return out;
  };
  const auto x = rescale(a), y = rescale(b);
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  int64_t count = 0;
  for (int64_t r = 0; r + k <= h; ++r) {
    for (int64_t c = 0; c + k <= w; ++c) {
      double mx = 0, my = 0;
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          const double wt = w2[static_cast<size_t>(i * k + j)] / norm;
          mx += wt * x[static_cast<size_t>((r + i) * w + c + j)];
          my += wt * y[static_cast<size_t>((r + i) * w + c + j)];
        }
      }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          const double wt = w2[static_cast<size_t>(i * k + j)] / norm;
          const double dx = x[static_cast<size_t>((r + i) * w + c + j)] - mx;
          const double dy = y[static_cast<size_t>((r + i) * w + c + j)] - my;
          vx += wt * dx * dx;
          vy += wt * dy * dy;
          cxy += wt * dx * dy;
        }
      }
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace splitsim::testing
