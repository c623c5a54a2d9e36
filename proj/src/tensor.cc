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

#include "splitsim/tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <fmt/format.h>

namespace splitsim {

std::string TensorShape::ToString() const {
  return fmt::format("({},{},{},{})", b, c, h, w);
}

void TensorShape::Validate() const {
  if (b < 1 || c < 1 || h < 1 || w < 1) {
    throw ShapeError("tensor extents must be >= 1, got " + ToString());
  }
  constexpr int64_t kMax = std::numeric_limits<int64_t>::max();
  if (b > kMax / c || b * c > kMax / h || b * c * h > kMax / w) {
    throw ShapeError("tensor element count overflows: " + ToString());
  }
}

Tensor::Tensor(TensorShape shape, float fill) {
  shape.Validate();
  storage_ = std::make_shared<Storage>();
  storage_->shape = shape;
  storage_->data.assign(static_cast<size_t>(shape.numel()), fill);
}

Tensor::Tensor(TensorShape shape, std::vector<float> values) {
  shape.Validate();
  if (static_cast<int64_t>(values.size()) != shape.numel()) {
    throw ShapeError(fmt::format("{} values do not fill shape {}",
                                 values.size(), shape.ToString()));
  }
  storage_ = std::make_shared<Storage>();
  storage_->shape = shape;
  storage_->data = std::move(values);
}

Tensor Tensor::Scalar(float value) { return Tensor(TensorShape{}, value); }

const TensorShape& Tensor::shape() const {
  if (!storage_) throw std::logic_error("use of undefined tensor");
  return storage_->shape;
}

std::span<float> Tensor::data() { return storage_->data; }
std::span<const float> Tensor::data() const { return storage_->data; }

float& Tensor::at(int64_t b, int64_t c, int64_t h, int64_t w) {
  const auto& s = storage_->shape;
  return storage_->data[static_cast<size_t>(((b * s.c + c) * s.h + h) * s.w + w)];
}

float Tensor::at(int64_t b, int64_t c, int64_t h, int64_t w) const {
  const auto& s = storage_->shape;
  return storage_->data[static_cast<size_t>(((b * s.c + c) * s.h + h) * s.w + w)];
}

float Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on non-scalar tensor " + shape().ToString());
  }
  return storage_->data[0];
}

bool Tensor::requires_grad() const {
  return storage_ && storage_->requires_grad;
}

void Tensor::set_requires_grad(bool value) { storage_->requires_grad = value; }

std::span<float> Tensor::grad() const {
  if (storage_->grad.empty()) storage_->grad.assign(storage_->data.size(), 0.f);
  return storage_->grad;
}

bool Tensor::has_grad() const { return storage_ && !storage_->grad.empty(); }

void Tensor::ZeroGrad() {
  storage_->grad.assign(storage_->data.size(), 0.f);
}

void Tensor::ClearGrad() {
  storage_->grad.clear();
  storage_->grad.shrink_to_fit();
}

Tensor Tensor::Clone() const {
  Tensor out;
  out.storage_ = std::make_shared<Storage>();
  out.storage_->shape = storage_->shape;
  out.storage_->data = storage_->data;
  return out;
}

bool Tensor::BitEqual(const Tensor& other) const {
  if (shape() != other.shape()) return false;
  return std::memcmp(storage_->data.data(), other.storage_->data.data(),
                     storage_->data.size() * sizeof(float)) == 0;
}

// ---------------------------------------------------------------------------
// Graph

bool Graph::NeedsGrad(std::initializer_list<const Tensor*> inputs) const {
  if (!record_) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

bool Graph::NeedsGrad(std::span<const Tensor> inputs) const {
  if (!record_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
    return t.defined() && t.requires_grad();
  });
}

void Graph::Record(std::vector<Tensor> inputs, Tensor output,
                   std::function<void()> backward) {
  output.set_requires_grad(true);
  records_.push_back({std::move(inputs), std::move(output), std::move(backward)});
}

void Graph::Backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got " +
                     loss.shape().ToString());
  }
  std::pair<Tensor, Tensor> seed{loss, Tensor::Scalar(1.0f)};
  Backward(std::span<const std::pair<Tensor, Tensor>>(&seed, 1));
}

void Graph::Backward(std::span<const std::pair<Tensor, Tensor>> seeds) {
  // Every tensor the tape touched starts from zero so leaves that the seeds
  // cannot reach end up with an explicit zero gradient.
  for (auto& rec : records_) {
    rec.output.ZeroGrad();
    for (auto& in : rec.inputs) {
      if (in.requires_grad()) in.ZeroGrad();
    }
  }
  for (const auto& [out, upstream] : seeds) {
    if (out.shape() != upstream.shape()) {
      throw ShapeError("seed gradient " + upstream.shape().ToString() +
                       " does not match output " + out.shape().ToString());
    }
    Tensor target = out;
    auto g = target.grad();
    auto u = upstream.data();
    for (size_t i = 0; i < g.size(); ++i) g[i] += u[i];
  }
  Run();
}

void Graph::Run() {
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    it->backward();
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reductions

namespace {

void RequireSameShape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op,
                                 a.shape().ToString(), b.shape().ToString()));
  }
}

}  // namespace

Tensor Graph::Add(const Tensor& a, const Tensor& b) {
  RequireSameShape(a, b, "add");
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (NeedsGrad({&a, &b})) {
    Record({a, b}, out, [a, b, out]() mutable {
      auto go = out.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = t->grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += go[i];
      }
    });
  }
  return out;
}

Tensor Graph::Sub(const Tensor& a, const Tensor& b) {
  RequireSameShape(a, b, "sub");
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (NeedsGrad({&a, &b})) {
    Record({a, b}, out, [a, b, out]() mutable {
      auto go = out.grad();
      if (a.requires_grad()) {
        auto g = a.grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += go[i];
      }
      if (b.requires_grad()) {
        auto g = b.grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] -= go[i];
      }
    });
  }
  return out;
}

Tensor Graph::Mul(const Tensor& a, const Tensor& b) {
  RequireSameShape(a, b, "mul");
  Tensor out(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (NeedsGrad({&a, &b})) {
    Record({a, b}, out, [a, b, out]() mutable {
      auto go = out.grad();
      auto x = a.data();
      auto y = b.data();
      if (a.requires_grad()) {
        auto g = a.grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += go[i] * y[i];
      }
      if (b.requires_grad()) {
        auto g = b.grad();
        for (size_t i = 0; i < g.size(); ++i) g[i] += go[i] * x[i];
      }
    });
  }
  return out;
}

Tensor Graph::Scale(const Tensor& input, float factor) {
  Tensor out(input.shape());
  auto o = out.data();
  auto x = input.data();
  for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (NeedsGrad({&input})) {
    Record({input}, out, [input, out, factor]() mutable {
      auto go = out.grad();
      auto g = input.grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += go[i] * factor;
    });
  }
  return out;
}

Tensor Graph::Sum(const Tensor& input) {
  double acc = 0.0;
  for (float v : input.data()) acc += v;
  Tensor out = Tensor::Scalar(static_cast<float>(acc));
  if (NeedsGrad({&input})) {
    Record({input}, out, [input, out]() mutable {
      const float go = out.grad()[0];
      for (float& g : input.grad()) g += go;
    });
  }
  return out;
}

Tensor Graph::SquaredNorm(const Tensor& input) {
  double acc = 0.0;
  for (float v : input.data()) acc += static_cast<double>(v) * v;
  Tensor out = Tensor::Scalar(static_cast<float>(acc));
  if (NeedsGrad({&input})) {
    Record({input}, out, [input, out]() mutable {
      const float go = out.grad()[0];
      auto x = input.data();
      auto g = input.grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += 2.0f * go * x[i];
    });
  }
  return out;
}

Tensor Graph::Norm(const Tensor& input) {
  double acc = 0.0;
  for (float v : input.data()) acc += static_cast<double>(v) * v;
  const double norm = std::sqrt(acc);
  Tensor out = Tensor::Scalar(static_cast<float>(norm));
  if (NeedsGrad({&input})) {
    Record({input}, out, [input, out, norm]() mutable {
      // Subgradient 0 at the origin.
      if (norm == 0.0) return;
      const double go = out.grad()[0];
      const float k = static_cast<float>(go / norm);
      auto x = input.data();
      auto g = input.grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += k * x[i];
    });
  }
  return out;
}

}  // namespace splitsim
