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

// Synthetic multi-modal tumor phantoms, dataset splits and image files.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "splitsim/tensor.h"

namespace splitsim {

enum class Tissue : uint8_t {
  kBackground = 0,
  kBrain,
  kCsf,
  kEdema,      // label 1
  kEnhancing,  // label 2
  kCore,       // label 3
};

inline constexpr int kNumClasses = 4;

struct PhantomSample {
  std::vector<Tensor> modalities;  // K tensors of [1,1,S,S], values in [0,1]
  Tensor label;                    // [1,1,S,S], classes 0..3
  std::vector<Tissue> tissue;      // S*S noise-free tissue map
};

struct PhantomSet {
  int64_t size = 0;
  int num_modalities = 0;
  uint64_t seed = 0;
  std::vector<PhantomSample> samples;

  int64_t count() const { return static_cast<int64_t>(samples.size()); }
  // [B,1,S,S] batch of modality m.
  Tensor ModalityBatch(int modality, std::span<const int64_t> indices) const;
  // [B,K,S,S] with all modalities as channels.
  Tensor StackedBatch(std::span<const int64_t> indices) const;
  Tensor LabelBatch(std::span<const int64_t> indices) const;
};

// Pure function of (index, seed); S must be a positive multiple of 16.
PhantomSample GenPhantom(int64_t index, int num_modalities, int64_t size,
                         uint64_t seed);
PhantomSet GenPhantoms(int64_t n, int num_modalities, int64_t size,
                       uint64_t seed);

struct DatasetSplit {
  std::vector<int64_t> train;
  std::vector<int64_t> val;
  std::vector<int64_t> test;
};

// Seeded 70/10/20 split: train = floor(0.7 n), test = round(0.2 n), val the
// remainder. n = 484 gives 338/49/97.
DatasetSplit SplitDataset(int64_t n, uint64_t seed);

// Per-sample horizontal flips decided by the shared augmentation seed, so
// every site flips the same samples.
std::vector<bool> FlipDecisions(uint64_t aug_seed, int64_t batch);
Tensor ApplyFlips(const Tensor& batch, const std::vector<bool>& flips);

// 8-bit binary PGM of plane (b, c), min-max scaled; constant planes map to 0.
std::vector<uint8_t> EncodePgm(const Tensor& image, int64_t b = 0, int64_t c = 0);
void ExportPgm(const std::filesystem::path& path, const Tensor& image,
               int64_t b = 0, int64_t c = 0);

// Directory layout: sample_%04d/mod_%d.ten, sample_%04d/label.ten and
// manifest.txt with n, sites, size, seed and split counts.
void SavePhantomSet(const std::filesystem::path& dir, const PhantomSet& set);
PhantomSet LoadPhantomSet(const std::filesystem::path& dir);
std::string PhantomManifest(const PhantomSet& set);

}  // namespace splitsim
