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

// Convolutions lowered to tiled im2col + GEMM. Tiles cover whole output rows
// so that the column buffer of one tile stays cache resident; the backward
// pass rebuilds columns per tile instead of storing them.

#include <algorithm>
#include <vector>

#include <Eigen/Core>
#include <fmt/format.h>

#include "splitsim/tensor.h"

namespace splitsim {
namespace {

using RowMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using OuterStride = Eigen::OuterStride<>;
using StridedMap = Eigen::Map<RowMatrix, 0, OuterStride>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, OuterStride>;

constexpr int64_t kTargetTilePixels = 512;

struct ConvGeometry {
  int64_t cin, cout, k, pad, stride;
  int64_t h, w, ho, wo;

  int64_t col_rows() const { return cin * k * k; }
  int64_t rows_per_tile() const {
    return std::max<int64_t>(1, kTargetTilePixels / wo);
  }
};

ConvGeometry CheckConv(const Tensor& input, const Tensor& weight,
                       const Tensor& bias, int stride) {
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  if (ws.h != ws.w || (ws.h != 3 && ws.h != 1)) {
    throw ShapeError("conv2d: kernel must be 3x3 or 1x1, got " + ws.ToString());
  }
  if (ws.c != is.c) {
    throw ShapeError(fmt::format(
        "conv2d: input has {} channels but weight {} expects {}", is.c,
        ws.ToString(), ws.c));
  }
  if (bias.defined() && bias.numel() != ws.b) {
    throw ShapeError(fmt::format("conv2d: bias has {} elements, expected {}",
                                 bias.numel(), ws.b));
  }
  if (stride != 1 && stride != 2) {
    throw ShapeError(fmt::format("conv2d: unsupported stride {}", stride));
  }
  if (stride == 2 && (is.h % 2 != 0 || is.w % 2 != 0)) {
    throw ShapeError("conv2d: stride 2 requires even height and width, got " +
                     is.ToString());
  }
  ConvGeometry g{};
  g.cin = is.c;
  g.cout = ws.b;
  g.k = ws.h;
  g.pad = ws.h / 2;
  g.stride = stride;
  g.h = is.h;
  g.w = is.w;
  g.ho = is.h / stride;
  g.wo = is.w / stride;
  return g;
}

// Fills col[(ci*k + ky)*k + kx, p] for output pixels of rows [r0, r1).
void Im2Col(const float* image, const ConvGeometry& g, int64_t r0, int64_t r1,
            float* col) {
  const int64_t tile = (r1 - r0) * g.wo;
  for (int64_t ci = 0; ci < g.cin; ++ci) {
    const float* plane = image + ci * g.h * g.w;
    for (int64_t ky = 0; ky < g.k; ++ky) {
      for (int64_t kx = 0; kx < g.k; ++kx) {
        float* dst = col + ((ci * g.k + ky) * g.k + kx) * tile;
        for (int64_t oy = r0; oy < r1; ++oy) {
          const int64_t iy = oy * g.stride + ky - g.pad;
          float* row = dst + (oy - r0) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(row, row + g.wo, 0.0f);
            continue;
          }
          const float* src = plane + iy * g.w;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * g.stride + kx - g.pad;
            row[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void Col2ImAdd(const float* col, const ConvGeometry& g, int64_t r0,
               int64_t r1, float* image) {
  const int64_t tile = (r1 - r0) * g.wo;
  for (int64_t ci = 0; ci < g.cin; ++ci) {
    float* plane = image + ci * g.h * g.w;
    for (int64_t ky = 0; ky < g.k; ++ky) {
      for (int64_t kx = 0; kx < g.k; ++kx) {
        const float* src = col + ((ci * g.k + ky) * g.k + kx) * tile;
        for (int64_t oy = r0; oy < r1; ++oy) {
          const int64_t iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          const float* row = src + (oy - r0) * g.wo;
          float* dst = plane + iy * g.w;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.w) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

namespace kernels {

void Conv2dForward(const Tensor& input, const Tensor& weight,
                   const Tensor& bias, int stride, Tensor& output) {
  const ConvGeometry g = CheckConv(input, weight, bias, stride);
  const int64_t batch = input.shape().b;
  const TensorShape out_shape{batch, g.cout, g.ho, g.wo};
  if (!output.defined() || output.shape() != out_shape) {
    output = Tensor(out_shape);
  }
  const int64_t out_plane = g.ho * g.wo;
  const int64_t rows_per_tile = g.rows_per_tile();
  std::vector<float> col(
      static_cast<size_t>(g.col_rows() * rows_per_tile * g.wo));
  ConstMatMap wmat(weight.data().data(), g.cout, g.col_rows());
  const float* x = input.data().data();
  float* y = output.data().data();

  for (int64_t b = 0; b < batch; ++b) {
    const float* image = x + b * g.cin * g.h * g.w;
    float* out = y + b * g.cout * out_plane;
    for (int64_t r0 = 0; r0 < g.ho; r0 += rows_per_tile) {
      const int64_t r1 = std::min(g.ho, r0 + rows_per_tile);
      const int64_t tile = (r1 - r0) * g.wo;
      Im2Col(image, g, r0, r1, col.data());
      ConstMatMap cmat(col.data(), g.col_rows(), tile);
      StridedMap omat(out + r0 * g.wo, g.cout, tile, OuterStride(out_plane));
      omat.noalias() = wmat * cmat;
    }
    if (bias.defined()) {
      auto bv = bias.data();
      for (int64_t co = 0; co < g.cout; ++co) {
        float* plane = out + co * out_plane;
        const float bc = bv[static_cast<size_t>(co)];
        for (int64_t p = 0; p < out_plane; ++p) plane[p] += bc;
      }
    }
  }
}

void Conv2dBackward(const Tensor& input, const Tensor& weight, int stride,
                    std::span<const float> grad_output, const Tensor* grad_input,
                    const Tensor* grad_weight, const Tensor* grad_bias) {
  const ConvGeometry g = CheckConv(input, weight, Tensor(), stride);
  const int64_t batch = input.shape().b;
  const int64_t out_plane = g.ho * g.wo;
  const int64_t rows_per_tile = g.rows_per_tile();
  const size_t col_size =
      static_cast<size_t>(g.col_rows() * rows_per_tile * g.wo);
  std::vector<float> col(grad_weight != nullptr ? col_size : 0);
  std::vector<float> dcol(grad_input != nullptr ? col_size : 0);
  ConstMatMap wmat(weight.data().data(), g.cout, g.col_rows());
  const float* x = input.data().data();
  const float* dy = grad_output.data();

  RowMatrix dw;
  if (grad_weight != nullptr) dw = RowMatrix::Zero(g.cout, g.col_rows());

  for (int64_t b = 0; b < batch; ++b) {
    const float* image = x + b * g.cin * g.h * g.w;
    const float* dout = dy + b * g.cout * out_plane;
    float* dimage = grad_input != nullptr
                        ? grad_input->grad().data() + b * g.cin * g.h * g.w
                        : nullptr;
    for (int64_t r0 = 0; r0 < g.ho; r0 += rows_per_tile) {
      const int64_t r1 = std::min(g.ho, r0 + rows_per_tile);
      const int64_t tile = (r1 - r0) * g.wo;
      ConstStridedMap domat(dout + r0 * g.wo, g.cout, tile,
                            OuterStride(out_plane));
      if (grad_weight != nullptr) {
        Im2Col(image, g, r0, r1, col.data());
        ConstMatMap cmat(col.data(), g.col_rows(), tile);
        dw.noalias() += domat * cmat.transpose();
      }
      if (grad_input != nullptr) {
        MatMap dcmat(dcol.data(), g.col_rows(), tile);
        dcmat.noalias() = wmat.transpose() * domat;
        Col2ImAdd(dcol.data(), g, r0, r1, dimage);
      }
    }
    if (grad_bias != nullptr) {
      auto gb = grad_bias->grad();
      for (int64_t co = 0; co < g.cout; ++co) {
        const float* plane = dout + co * out_plane;
        double acc = 0.0;
        for (int64_t p = 0; p < out_plane; ++p) acc += plane[p];
        gb[static_cast<size_t>(co)] += static_cast<float>(acc);
      }
    }
  }
  if (grad_weight != nullptr) {
    MatMap gw(grad_weight->grad().data(), g.cout, g.col_rows());
    gw += dw;
  }
}

}  // namespace kernels

Tensor Graph::Conv2d(const Tensor& input, const Tensor& weight,
                     const Tensor& bias, int stride) {
  Tensor out;
  kernels::Conv2dForward(input, weight, bias, stride, out);
  if (NeedsGrad({&input, &weight, &bias})) {
    Record({input, weight, bias}, out,
           [input, weight, bias, out, stride]() mutable {
             const Tensor* gi = input.requires_grad() ? &input : nullptr;
             const Tensor* gw = weight.requires_grad() ? &weight : nullptr;
             const Tensor* gb =
                 bias.defined() && bias.requires_grad() ? &bias : nullptr;
             kernels::Conv2dBackward(input, weight, stride, out.grad(), gi,
                                     gw, gb);
           });
  }
  return out;
}

Tensor Graph::ConvTranspose2x2(const Tensor& input, const Tensor& weight,
                               const Tensor& bias) {
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  if (ws.h != 2 || ws.w != 2) {
    throw ShapeError("transposed conv: kernel must be 2x2, got " +
                     ws.ToString());
  }
  if (ws.b != is.c) {
    throw ShapeError(fmt::format(
        "transposed conv: input has {} channels but weight {} expects {}",
        is.c, ws.ToString(), ws.b));
  }
  const int64_t cin = is.c;
  const int64_t cout = ws.c;
  if (bias.defined() && bias.numel() != cout) {
    throw ShapeError(fmt::format(
        "transposed conv: bias has {} elements, expected {}", bias.numel(),
        cout));
  }
  const int64_t h = is.h, w = is.w, plane = h * w;
  Tensor out(TensorShape{is.b, cout, 2 * h, 2 * w});
  RowMatrix y(cout * 4, plane);
  ConstMatMap wmat(weight.data().data(), cin, cout * 4);
  for (int64_t b = 0; b < is.b; ++b) {
    ConstMatMap xmat(input.data().data() + b * cin * plane, cin, plane);
    y.noalias() = wmat.transpose() * xmat;
    for (int64_t co = 0; co < cout; ++co) {
      const float bc = bias.defined() ? bias.data()[static_cast<size_t>(co)] : 0.f;
      for (int64_t i = 0; i < 2; ++i) {
        for (int64_t j = 0; j < 2; ++j) {
          const float* src = y.data() + (co * 4 + i * 2 + j) * plane;
          for (int64_t yy = 0; yy < h; ++yy) {
            for (int64_t xx = 0; xx < w; ++xx) {
              out.at(b, co, 2 * yy + i, 2 * xx + j) = src[yy * w + xx] + bc;
            }
          }
        }
      }
    }
  }
  if (NeedsGrad({&input, &weight, &bias})) {
    Record({input, weight, bias}, out,
           [input, weight, bias, out, cin, cout, h, w, plane]() mutable {
             auto go = out.grad();
             const int64_t batch = input.shape().b;
             RowMatrix dy(cout * 4, plane);
             RowMatrix dw;
             if (weight.requires_grad()) dw = RowMatrix::Zero(cin, cout * 4);
             ConstMatMap wmat(weight.data().data(), cin, cout * 4);
             const int64_t ow = 2 * w;
             for (int64_t b = 0; b < batch; ++b) {
               const float* gob = go.data() + b * cout * 4 * plane;
               for (int64_t co = 0; co < cout; ++co) {
                 for (int64_t i = 0; i < 2; ++i) {
                   for (int64_t j = 0; j < 2; ++j) {
                     float* dst = dy.data() + (co * 4 + i * 2 + j) * plane;
                     const float* src = gob + co * 4 * plane;
                     for (int64_t yy = 0; yy < h; ++yy) {
                       for (int64_t xx = 0; xx < w; ++xx) {
                         dst[yy * w + xx] =
                             src[(2 * yy + i) * ow + 2 * xx + j];
                       }
                     }
                   }
                 }
               }
               if (input.requires_grad()) {
                 MatMap gx(input.grad().data() + b * cin * plane, cin, plane);
                 gx.noalias() += wmat * dy;
               }
               if (weight.requires_grad()) {
                 ConstMatMap xmat(input.data().data() + b * cin * plane, cin,
                                  plane);
                 dw.noalias() += xmat * dy.transpose();
               }
               if (bias.defined() && bias.requires_grad()) {
                 auto gb = bias.grad();
                 for (int64_t co = 0; co < cout; ++co) {
                   double acc = 0.0;
                   const float* src = gob + co * 4 * plane;
                   for (int64_t p = 0; p < 4 * plane; ++p) acc += src[p];
                   gb[static_cast<size_t>(co)] += static_cast<float>(acc);
                 }
               }
             }
             if (weight.requires_grad()) {
               MatMap gw(weight.grad().data(), cin, cout * 4);
               gw += dw;
             }
           });
  }
  return out;
}

}  // namespace splitsim
