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

#include "splitsim/data.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "splitsim/random.h"
#include "splitsim/ten_format.h"

namespace splitsim {
namespace {

// Mean intensity of each tissue per modality, loosely after T1, T1c, T2 and
// FLAIR contrast. Sites beyond the fourth reuse rows cyclically.
constexpr std::array<std::array<double, 6>, 4> kContrast = {{
    {0.00, 0.60, 0.20, 0.45, 0.55, 0.30},
    {0.00, 0.60, 0.20, 0.45, 0.95, 0.25},
    {0.00, 0.45, 0.95, 0.80, 0.60, 0.90},
    {0.00, 0.50, 0.15, 0.90, 0.70, 0.45},
}};

constexpr double kNoiseStd = 0.02;

struct Ellipse {
  double cx, cy, a, b, theta;

  // Coordinates in the ellipse frame, unit circle = boundary.
  std::pair<double, double> Normalized(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(theta), s = std::sin(theta);
    return {(c * dx + s * dy) / a, (-s * dx + c * dy) / b};
  }
  bool Contains(double x, double y) const {
    const auto [u, v] = Normalized(x, y);
    return u * u + v * v <= 1.0;
  }
  // Scaled copy whose centre sits at `offset` (ellipse-frame units).
  Ellipse Inner(double scale, double ou, double ov) const {
    const double c = std::cos(theta), s = std::sin(theta);
    const double dx = ou * a, dy = ov * b;
    return {cx + c * dx - s * dy, cy + s * dx + c * dy, a * scale, b * scale,
            theta};
  }
};

// Random offset of length <= max_len.
std::pair<double, double> RandomOffset(Rng& rng, double max_len) {
  const double r = max_len * std::sqrt(rng.UniformDouble());
  const double phi = 2.0 * std::numbers::pi * rng.UniformDouble();
  return {r * std::cos(phi), r * std::sin(phi)};
}

void CheckSize(int64_t size) {
  if (size < 16 || size % 16 != 0) {
    throw std::invalid_argument(fmt::format(
        "phantom size must be a positive multiple of 16, got {}", size));
  }
}

}  // namespace

PhantomSample GenPhantom(int64_t index, int num_modalities, int64_t size,
                         uint64_t seed) {
  CheckSize(size);
  if (num_modalities < 1) {
    throw std::invalid_argument("phantoms need at least one modality");
  }
  Rng rng(DeriveSeed(seed, Stream::kPhantom, {static_cast<uint64_t>(index)}));
  const double S = static_cast<double>(size);

  const Ellipse brain{S * rng.Uniform(0.46, 0.54), S * rng.Uniform(0.46, 0.54),
                      S * rng.Uniform(0.36, 0.44), S * rng.Uniform(0.30, 0.38),
                      rng.Uniform(-0.3, 0.3)};
  const double vgap = S * rng.Uniform(0.05, 0.08);
  const Ellipse ventricles[2] = {
      {brain.cx - vgap, brain.cy, S * 0.035, S * 0.09, rng.Uniform(-0.3, 0.3)},
      {brain.cx + vgap, brain.cy, S * 0.035, S * 0.09, rng.Uniform(-0.3, 0.3)}};

  // Tumor centre somewhere inside the brain, in brain-frame coordinates.
  const auto [tu, tv] = RandomOffset(rng, 0.45);
  const Ellipse centre = brain.Inner(0.0, tu, tv);
  const Ellipse edema{centre.cx, centre.cy, S * rng.Uniform(0.13, 0.20),
                      S * rng.Uniform(0.11, 0.17),
                      rng.Uniform(0.0, std::numbers::pi)};
  // Nested regions: an inner ellipse with scale s and offset |u| <= 1 - s
  // lies inside its parent.
  const double s2 = rng.Uniform(0.55, 0.75);
  const auto [u2, v2] = RandomOffset(rng, 0.5 * (1.0 - s2));
  const Ellipse enhancing = edema.Inner(s2, u2, v2);
  const double s3 = rng.Uniform(0.40, 0.60);
  const auto [u3, v3] = RandomOffset(rng, 0.5 * (1.0 - s3));
  const Ellipse core = enhancing.Inner(s3, u3, v3);

  PhantomSample sample;
  sample.tissue.resize(static_cast<size_t>(size * size));
  sample.label = Tensor(TensorShape{1, 1, size, size});
  for (int64_t y = 0; y < size; ++y) {
    for (int64_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      Tissue t = Tissue::kBackground;
      float label = 0.f;
      if (core.Contains(px, py)) {
        t = Tissue::kCore;
        label = 3.f;
      } else if (enhancing.Contains(px, py)) {
        t = Tissue::kEnhancing;
        label = 2.f;
      } else if (edema.Contains(px, py)) {
        t = Tissue::kEdema;
        label = 1.f;
      } else if (brain.Contains(px, py)) {
        t = (ventricles[0].Contains(px, py) || ventricles[1].Contains(px, py))
                ? Tissue::kCsf
                : Tissue::kBrain;
      }
      sample.tissue[static_cast<size_t>(y * size + x)] = t;
      sample.label.at(0, 0, y, x) = label;
    }
  }

  // Low-frequency bias field shared by all modalities of a sample.
  const double fx = rng.Uniform(1.0, 3.0) * 2.0 * std::numbers::pi / S;
  const double fy = rng.Uniform(1.0, 3.0) * 2.0 * std::numbers::pi / S;
  const double phase = rng.Uniform(0.0, 2.0 * std::numbers::pi);

  for (int m = 0; m < num_modalities; ++m) {
    const auto& table = kContrast[static_cast<size_t>(m % 4)];
    const double gain = rng.Uniform(0.9, 1.1);
    const double offset = rng.Uniform(-0.03, 0.03);
    Tensor img(TensorShape{1, 1, size, size});
    for (int64_t y = 0; y < size; ++y) {
      for (int64_t x = 0; x < size; ++x) {
        const Tissue t = sample.tissue[static_cast<size_t>(y * size + x)];
        double v = 0.0;
        if (t != Tissue::kBackground) {
          const double bias =
              1.0 + 0.06 * std::sin(fx * static_cast<double>(x) +
                                    fy * static_cast<double>(y) + phase);
          v = gain * table[static_cast<size_t>(t)] * bias + offset;
        }
        v += kNoiseStd * rng.Normal();
        img.at(0, 0, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
    sample.modalities.push_back(std::move(img));
  }
  return sample;
}

PhantomSet GenPhantoms(int64_t n, int num_modalities, int64_t size,
                       uint64_t seed) {
  CheckSize(size);
  PhantomSet set;
  set.size = size;
  set.num_modalities = num_modalities;
  set.seed = seed;
  set.samples.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    set.samples.push_back(GenPhantom(i, num_modalities, size, seed));
  }
  return set;
}

namespace {

Tensor GatherPlanes(const PhantomSet& set, std::span<const int64_t> indices,
                    int channels, auto&& plane_of) {
  const int64_t S = set.size;
  Tensor out(TensorShape{static_cast<int64_t>(indices.size()), channels, S, S});
  float* dst = out.data().data();
  for (int64_t idx : indices) {
    if (idx < 0 || idx >= set.count()) {
      throw std::out_of_range(fmt::format("sample index {} out of range", idx));
    }
    for (int c = 0; c < channels; ++c) {
      const Tensor& src = plane_of(set.samples[static_cast<size_t>(idx)], c);
      std::copy(src.data().begin(), src.data().end(), dst);
      dst += S * S;
    }
  }
  return out;
}

}  // namespace

Tensor PhantomSet::ModalityBatch(int modality,
                                 std::span<const int64_t> indices) const {
  if (modality < 0 || modality >= num_modalities) {
    throw std::out_of_range(fmt::format("modality {} out of range", modality));
  }
  return GatherPlanes(*this, indices, 1,
                      [modality](const PhantomSample& s, int) -> const Tensor& {
                        return s.modalities[static_cast<size_t>(modality)];
                      });
}

Tensor PhantomSet::StackedBatch(std::span<const int64_t> indices) const {
  return GatherPlanes(*this, indices, num_modalities,
                      [](const PhantomSample& s, int c) -> const Tensor& {
                        return s.modalities[static_cast<size_t>(c)];
                      });
}

Tensor PhantomSet::LabelBatch(std::span<const int64_t> indices) const {
  return GatherPlanes(*this, indices, 1,
                      [](const PhantomSample& s, int) -> const Tensor& {
                        return s.label;
                      });
}

DatasetSplit SplitDataset(int64_t n, uint64_t seed) {
  std::vector<int64_t> order(static_cast<size_t>(std::max<int64_t>(n, 0)));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(DeriveSeed(seed, Stream::kSplit));
  rng.Shuffle(order);
  const int64_t n_train = 7 * n / 10;
  const int64_t n_test = (2 * n + 5) / 10;
  const int64_t n_val = n - n_train - n_test;
  DatasetSplit split;
  auto it = order.begin();
  split.train.assign(it, it + n_train);
  it += n_train;
  split.val.assign(it, it + n_val);
  it += n_val;
  split.test.assign(it, order.end());
  return split;
}

std::vector<bool> FlipDecisions(uint64_t aug_seed, int64_t batch) {
  Rng rng(DeriveSeed(aug_seed, Stream::kAugment));
  std::vector<bool> flips(static_cast<size_t>(batch));
  for (int64_t b = 0; b < batch; ++b) flips[static_cast<size_t>(b)] = rng.Uniform() < 0.5f;
  return flips;
}

Tensor ApplyFlips(const Tensor& batch, const std::vector<bool>& flips) {
  const auto& s = batch.shape();
  if (static_cast<int64_t>(flips.size()) != s.b) {
    throw ShapeError(fmt::format("{} flip decisions for batch {}", flips.size(),
                                 s.ToString()));
  }
  Tensor out = batch.Clone();
  for (int64_t b = 0; b < s.b; ++b) {
    if (!flips[static_cast<size_t>(b)]) continue;
    for (int64_t c = 0; c < s.c; ++c) {
      for (int64_t y = 0; y < s.h; ++y) {
        for (int64_t x = 0; x < s.w; ++x) {
          out.at(b, c, y, x) = batch.at(b, c, y, s.w - 1 - x);
        }
      }
    }
  }
  return out;
}

std::vector<uint8_t> EncodePgm(const Tensor& image, int64_t b, int64_t c) {
  const auto& s = image.shape();
  float lo = image.at(b, c, 0, 0), hi = lo;
  for (int64_t y = 0; y < s.h; ++y) {
    for (int64_t x = 0; x < s.w; ++x) {
      lo = std::min(lo, image.at(b, c, y, x));
      hi = std::max(hi, image.at(b, c, y, x));
    }
  }
  const std::string header = fmt::format("P5\n{} {}\n255\n", s.w, s.h);
  std::vector<uint8_t> out(header.begin(), header.end());
  const double range = static_cast<double>(hi) - lo;
  for (int64_t y = 0; y < s.h; ++y) {
    for (int64_t x = 0; x < s.w; ++x) {
      uint8_t v = 0;
      if (range > 0.0) {
        v = static_cast<uint8_t>(
            std::lround(255.0 * (image.at(b, c, y, x) - lo) / range));
      }
      out.push_back(v);
    }
  }
  return out;
}

void ExportPgm(const std::filesystem::path& path, const Tensor& image,
               int64_t b, int64_t c) {
  WriteFileBytes(path, EncodePgm(image, b, c));
}

std::string PhantomManifest(const PhantomSet& set) {
  const DatasetSplit split = SplitDataset(set.count(), set.seed);
  return fmt::format("n={}\nsites={}\nsize={}\nseed={}\nsplit={}/{}/{}\n",
                     set.count(), set.num_modalities, set.size, set.seed,
                     split.train.size(), split.val.size(), split.test.size());
}

void SavePhantomSet(const std::filesystem::path& dir, const PhantomSet& set) {
  std::filesystem::create_directories(dir);
  for (int64_t i = 0; i < set.count(); ++i) {
    const auto sample_dir = dir / fmt::format("sample_{:04d}", i);
    std::filesystem::create_directories(sample_dir);
    const auto& s = set.samples[static_cast<size_t>(i)];
    for (size_t m = 0; m < s.modalities.size(); ++m) {
      SaveTen(sample_dir / fmt::format("mod_{}.ten", m), s.modalities[m]);
    }
    SaveTen(sample_dir / "label.ten", s.label);
  }
  std::ofstream(dir / "manifest.txt") << PhantomManifest(set);
}

PhantomSet LoadPhantomSet(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw std::runtime_error("missing manifest: " + (dir / "manifest.txt").string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* key : {"n", "sites", "size", "seed"}) {
    if (!kv.count(key)) {
      throw FormatError(fmt::format("manifest in {} lacks '{}'", dir.string(), key));
    }
  }
  PhantomSet set;
  const int64_t n = std::stoll(kv["n"]);
  set.num_modalities = std::stoi(kv["sites"]);
  set.size = std::stoll(kv["size"]);
  set.seed = std::stoull(kv["seed"]);
  for (int64_t i = 0; i < n; ++i) {
    const auto sample_dir = dir / fmt::format("sample_{:04d}", i);
    PhantomSample s;
    for (int m = 0; m < set.num_modalities; ++m) {
      s.modalities.push_back(LoadTen(sample_dir / fmt::format("mod_{}.ten", m)));
    }
    s.label = LoadTen(sample_dir / "label.ten");
    set.samples.push_back(std::move(s));
  }
  return set;
}

}  // namespace splitsim
