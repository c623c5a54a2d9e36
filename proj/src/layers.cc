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

#include <algorithm>
#include <cmath>
#include <vector>

#include <fmt/format.h>

#include "splitsim/tensor.h"

namespace splitsim {

Tensor Graph::MaxPool2(const Tensor& input) {
  const auto& s = input.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("max_pool2: height and width must be even, got " +
                     s.ToString());
  }
  const int64_t oh = s.h / 2, ow = s.w / 2;
  Tensor out(TensorShape{s.b, s.c, oh, ow});
  // Flat index of the winning element per output, for gradient routing.
  std::vector<int64_t> argmax(static_cast<size_t>(out.numel()));
  auto x = input.data();
  auto y = out.data();
  int64_t o = 0;
  for (int64_t bc = 0; bc < s.b * s.c; ++bc) {
    const int64_t base = bc * s.h * s.w;
    for (int64_t i = 0; i < oh; ++i) {
      for (int64_t j = 0; j < ow; ++j, ++o) {
        int64_t best = base + (2 * i) * s.w + 2 * j;
        // Row-major window scan; strict '>' keeps the first maximum.
        for (int64_t di = 0; di < 2; ++di) {
          for (int64_t dj = 0; dj < 2; ++dj) {
            const int64_t idx = base + (2 * i + di) * s.w + 2 * j + dj;
            if (x[static_cast<size_t>(idx)] > x[static_cast<size_t>(best)]) {
              best = idx;
            }
          }
        }
        argmax[static_cast<size_t>(o)] = best;
        y[static_cast<size_t>(o)] = x[static_cast<size_t>(best)];
      }
    }
  }
  if (NeedsGrad({&input})) {
    Record({input}, out, [input, out, argmax = std::move(argmax)]() mutable {
      auto go = out.grad();
      auto g = input.grad();
      for (size_t k = 0; k < go.size(); ++k) {
        g[static_cast<size_t>(argmax[k])] += go[k];
      }
    });
  }
  return out;
}

Tensor Graph::InstanceNorm(const Tensor& input, float eps) {
  const auto& s = input.shape();
  const int64_t n = s.h * s.w;
  if (n < 2) {
    throw ShapeError("instance_norm2d: needs H*W >= 2, got " + s.ToString());
  }
  Tensor out(s);
  const int64_t slices = s.b * s.c;
  std::vector<float> inv_std(static_cast<size_t>(slices));
  auto x = input.data();
  auto y = out.data();
  for (int64_t k = 0; k < slices; ++k) {
    const float* xs = x.data() + k * n;
    float* ys = y.data() + k * n;
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += xs[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double d = xs[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(k)] = static_cast<float>(is);
    for (int64_t i = 0; i < n; ++i) {
      ys[i] = static_cast<float>((xs[i] - mean) * is);
    }
  }
  if (NeedsGrad({&input})) {
    Record({input}, out,
           [input, out, n, slices, inv_std = std::move(inv_std)]() mutable {
             auto go = out.grad();
             auto y = out.data();
             auto g = input.grad();
             for (int64_t k = 0; k < slices; ++k) {
               const float* gys = go.data() + k * n;
               const float* ys = y.data() + k * n;
               float* gxs = g.data() + k * n;
               double mean_g = 0.0, mean_gy = 0.0;
               for (int64_t i = 0; i < n; ++i) {
                 mean_g += gys[i];
                 mean_gy += static_cast<double>(gys[i]) * ys[i];
               }
               mean_g /= static_cast<double>(n);
               mean_gy /= static_cast<double>(n);
               const double is = inv_std[static_cast<size_t>(k)];
               for (int64_t i = 0; i < n; ++i) {
                 gxs[i] += static_cast<float>(
                     is * (gys[i] - mean_g - ys[i] * mean_gy));
               }
             }
           });
  }
  return out;
}

Tensor Graph::LeakyRelu(const Tensor& input, float slope) {
  Tensor out(input.shape());
  auto x = input.data();
  auto y = out.data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = x[i] >= 0.f ? x[i] : slope * x[i];
  if (NeedsGrad({&input})) {
    Record({input}, out, [input, out, slope]() mutable {
      auto go = out.grad();
      auto x = input.data();
      auto g = input.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        g[i] += x[i] >= 0.f ? go[i] : slope * go[i];
      }
    });
  }
  return out;
}

Tensor Graph::SoftmaxChannels(const Tensor& input) {
  const auto& s = input.shape();
  const int64_t plane = s.h * s.w;
  Tensor out(s);
  auto x = input.data();
  auto y = out.data();
  for (int64_t b = 0; b < s.b; ++b) {
    const int64_t base = b * s.c * plane;
    for (int64_t p = 0; p < plane; ++p) {
      float mx = x[static_cast<size_t>(base + p)];
      for (int64_t c = 1; c < s.c; ++c) {
        mx = std::max(mx, x[static_cast<size_t>(base + c * plane + p)]);
      }
      double total = 0.0;
      for (int64_t c = 0; c < s.c; ++c) {
        const size_t idx = static_cast<size_t>(base + c * plane + p);
        const float e = std::exp(x[idx] - mx);
        y[idx] = e;
        total += e;
      }
      const float inv = static_cast<float>(1.0 / total);
      for (int64_t c = 0; c < s.c; ++c) {
        y[static_cast<size_t>(base + c * plane + p)] *= inv;
      }
    }
  }
  if (NeedsGrad({&input})) {
    Record({input}, out, [input, out, s, plane]() mutable {
      auto go = out.grad();
      auto y = out.data();
      auto g = input.grad();
      for (int64_t b = 0; b < s.b; ++b) {
        const int64_t base = b * s.c * plane;
        for (int64_t p = 0; p < plane; ++p) {
          double dot = 0.0;
          for (int64_t c = 0; c < s.c; ++c) {
            const size_t idx = static_cast<size_t>(base + c * plane + p);
            dot += static_cast<double>(go[idx]) * y[idx];
          }
          for (int64_t c = 0; c < s.c; ++c) {
            const size_t idx = static_cast<size_t>(base + c * plane + p);
            g[idx] += static_cast<float>(y[idx] * (go[idx] - dot));
          }
        }
      }
    });
  }
  return out;
}

Tensor Graph::ConcatChannels(std::span<const Tensor> inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  const auto& first = inputs.front().shape();
  int64_t channels = 0;
  for (const auto& t : inputs) {
    const auto& s = t.shape();
    if (s.b != first.b || s.h != first.h || s.w != first.w) {
      throw ShapeError(fmt::format(
          "concat_channels: {} is incompatible with {} (B, H, W must match)",
          s.ToString(), first.ToString()));
    }
    channels += s.c;
  }
  const int64_t plane = first.h * first.w;
  Tensor out(TensorShape{first.b, channels, first.h, first.w});
  auto y = out.data();
  for (int64_t b = 0; b < first.b; ++b) {
    float* dst = y.data() + b * channels * plane;
    for (const auto& t : inputs) {
      const int64_t n = t.shape().c * plane;
      const float* src = t.data().data() + b * n;
      std::copy(src, src + n, dst);
      dst += n;
    }
  }
  if (NeedsGrad(inputs)) {
    std::vector<Tensor> parts(inputs.begin(), inputs.end());
    Record(parts, out, [parts, out, channels, plane]() mutable {
      auto go = out.grad();
      const int64_t batch = out.shape().b;
      for (int64_t b = 0; b < batch; ++b) {
        const float* src = go.data() + b * channels * plane;
        for (auto& t : parts) {
          const int64_t n = t.shape().c * plane;
          if (t.requires_grad()) {
            float* dst = t.grad().data() + b * n;
            for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
          }
          src += n;
        }
      }
    });
  }
  return out;
}

}  // namespace splitsim
