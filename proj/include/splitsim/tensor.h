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
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace splitsim {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense (batch, channel, height, width) extent.
struct TensorShape {
  int64_t b = 1;
  int64_t c = 1;
  int64_t h = 1;
  int64_t w = 1;

  int64_t numel() const { return b * c * h * w; }
  int64_t plane() const { return h * w; }
  bool operator==(const TensorShape&) const = default;
  std::string ToString() const;

  // Throws ShapeError unless every extent is >= 1 and the element count
  // does not overflow.
  void Validate() const;
};

// Reference-counted handle to an f32 buffer in row-major (B,C,H,W) order.
// Copies of a Tensor alias the same storage; use Clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorShape shape, float fill = 0.0f);
  Tensor(TensorShape shape, std::vector<float> values);

  static Tensor Scalar(float value);

  bool defined() const { return storage_ != nullptr; }
  const TensorShape& shape() const;
  int64_t numel() const { return shape().numel(); }

  std::span<float> data();
  std::span<const float> data() const;
  float& at(int64_t b, int64_t c, int64_t h, int64_t w);
  float at(int64_t b, int64_t c, int64_t h, int64_t w) const;
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  // Gradient buffer, zero-initialised on first access. Tensors are handles,
  // so the buffer stays writable through const copies held by the tape.
  std::span<float> grad() const;
  bool has_grad() const;
  void ZeroGrad();
  void ClearGrad();

  Tensor Clone() const;
  bool SameStorage(const Tensor& other) const {
    return storage_ == other.storage_;
  }

  // Bitwise equality of shape and values.
  bool BitEqual(const Tensor& other) const;

 private:
  struct Storage {
    TensorShape shape;
    std::vector<float> data;
    mutable std::vector<float> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> storage_;
};

// Reverse-mode tape. Operations are recorded in call order and replayed in
// exact reverse order by Backward(). A Graph and the tensors it produces
// belong to one thread.
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }
  size_t num_records() const { return records_.size(); }

  // True when an op over `inputs` must be recorded.
  bool NeedsGrad(std::initializer_list<const Tensor*> inputs) const;
  bool NeedsGrad(std::span<const Tensor> inputs) const;

  // Registers a backward rule. `output` is flagged requires_grad; the rule
  // reads output.grad() and accumulates into the inputs that require grad.
  void Record(std::vector<Tensor> inputs, Tensor output,
              std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1. Rejects non-scalar losses.
  void Backward(const Tensor& loss);
  // Seeds several outputs with upstream gradients of matching shape.
  void Backward(std::span<const std::pair<Tensor, Tensor>> seeds);

  // 3x3 (or 1x1) convolution, zero padding k/2. weight [Cout,Cin,k,k].
  Tensor Conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                int stride = 1);
  // 2x2 stride-2 transposed convolution. weight [Cin,Cout,2,2].
  Tensor ConvTranspose2x2(const Tensor& input, const Tensor& weight,
                          const Tensor& bias);
  Tensor MaxPool2(const Tensor& input);
  Tensor InstanceNorm(const Tensor& input, float eps = 1e-5f);
  Tensor LeakyRelu(const Tensor& input, float slope = 0.1f);
  Tensor Add(const Tensor& a, const Tensor& b);
  Tensor Sub(const Tensor& a, const Tensor& b);
  Tensor Mul(const Tensor& a, const Tensor& b);
  Tensor Scale(const Tensor& input, float factor);
  Tensor SoftmaxChannels(const Tensor& input);
  Tensor ConcatChannels(std::span<const Tensor> inputs);
  // Scalar reductions.
  Tensor Sum(const Tensor& input);
  // Euclidean norm over all elements, sqrt(sum x^2).
  Tensor Norm(const Tensor& input);
  Tensor SquaredNorm(const Tensor& input);

 private:
  struct RecordEntry {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  void Run();

  bool record_;
  std::vector<RecordEntry> records_;
};

// Kernel entry points shared by the graph ops and by test oracles that want
// the forward pass without a tape.
namespace kernels {

void Conv2dForward(const Tensor& input, const Tensor& weight,
                   const Tensor& bias, int stride, Tensor& output);
void Conv2dBackward(const Tensor& input, const Tensor& weight, int stride,
                    std::span<const float> grad_output, const Tensor* grad_input,
                    const Tensor* grad_weight, const Tensor* grad_bias);

}  // namespace kernels

}  // namespace splitsim
