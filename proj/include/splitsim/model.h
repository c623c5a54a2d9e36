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

// U-Net and Split-U-Net. The split model runs K single-modality encoders,
// each with the default encoder widths divided by K, and one decoder at the
// label site that concatenates the per-site activations level by level.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "splitsim/nn.h"
#include "splitsim/tensor.h"

namespace splitsim {

inline constexpr int kNumLevels = 4;          // down/up-sampling levels
inline constexpr int kNumEncoderLevels = 5;   // activations x_0 .. x_4

enum class SkipVariant { kAllSkips, kNoSkips, kX3X4Only };

std::string_view ToString(SkipVariant variant);
// Accepts "all_skips", "no_skips", "x3_x4_only".
SkipVariant ParseSkipVariant(std::string_view name);
// Encoder levels whose activations leave the site under `variant`.
std::vector<int> SharedLevels(SkipVariant variant);
bool IsShared(SkipVariant variant, int level);

using EncoderWidths = std::array<int64_t, kNumEncoderLevels>;
using DecoderWidths = std::array<int64_t, kNumLevels>;

struct ArchSpec {
  // Output features for levels 0..8: encoder 0..4, decoder 5..8.
  std::array<int64_t, 9> widths = {32, 32, 64, 128, 256, 128, 64, 32, 32};
  int64_t in_channels = 4;
  int64_t out_classes = 4;

  EncoderWidths encoder_widths() const;
  DecoderWidths decoder_widths() const;
};

struct SplitConfig {
  int num_sites = 4;
  int label_site = 0;
  SkipVariant skip_variant = SkipVariant::kAllSkips;

  // Throws std::invalid_argument when K does not divide every encoder width
  // or the label site is out of range.
  void Validate(const ArchSpec& arch) const;
};

// Default encoder widths divided by K.
EncoderWidths PerSiteWidths(const ArchSpec& arch, int num_sites);

// Activations x_i^k keyed by level, for one site.
struct ActivationBundle {
  int site = 0;
  std::map<int, Tensor> levels;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(int64_t in_channels, const EncoderWidths& widths, uint64_t seed);

  // Activations for levels 0..max_level. H and W must be divisible by 16.
  std::vector<Tensor> Forward(Graph& g, const Tensor& images,
                              int max_level = kNumEncoderLevels - 1) const;

  ParameterList Parameters(const std::string& prefix = "enc") const;
  Encoder Clone() const;
  void SetRequiresGrad(bool value);

  int64_t in_channels() const { return in_channels_; }
  const EncoderWidths& widths() const { return widths_; }

 private:
  int64_t in_channels_ = 0;
  EncoderWidths widths_{};
  std::array<ConvBlock, kNumEncoderLevels> blocks_;
};

// Keeps the levels that `variant` shares.
ActivationBundle MakeBundle(int site, const std::vector<Tensor>& activations,
                            SkipVariant variant);

class Decoder {
 public:
  Decoder() = default;
  // `skip_widths` are the concatenated encoder widths the decoder consumes.
  Decoder(const EncoderWidths& skip_widths, const DecoderWidths& widths,
          int64_t out_classes, SkipVariant variant, uint64_t seed);

  // Logits [B, out_classes, H, W]. Bundles are concatenated in ascending
  // site order; missing skip levels are zero-filled (x3/x4 variant) or
  // skipped entirely (no-skips variant).
  Tensor Forward(Graph& g, std::span<const ActivationBundle> bundles) const;

  ParameterList Parameters(const std::string& prefix = "dec") const;
  Decoder Clone() const;
  SkipVariant variant() const { return variant_; }
  const EncoderWidths& skip_widths() const { return skip_widths_; }
  const DecoderWidths& widths() const { return widths_; }

 private:
  EncoderWidths skip_widths_{};
  DecoderWidths widths_{};
  int64_t out_classes_ = 0;
  SkipVariant variant_ = SkipVariant::kAllSkips;
  std::array<Tensor, kNumLevels> up_weight_;
  std::array<Tensor, kNumLevels> up_bias_;
  std::array<ConvBlock, kNumLevels> blocks_;
  Tensor head_weight_, head_bias_;
};

// Monolithic U-Net F(x) with all modalities stacked as input channels.
struct UNet {
  Encoder encoder;
  Decoder decoder;

  Tensor Forward(Graph& g, const Tensor& images) const;
  ParameterList Parameters() const;
};

UNet BuildDefaultUNet(const ArchSpec& arch, uint64_t seed);

// Split-U-Net F(x) = g(f(x)) with K encoders.
struct SplitModel {
  SplitConfig config;
  std::vector<Encoder> encoders;
  Decoder decoder;

  // Composite forward in a single graph; site_images[k] is [B,1,H,W].
  Tensor Forward(Graph& g, std::span<const Tensor> site_images) const;
  ParameterList Parameters() const;
  SplitModel Clone() const;
};

SplitModel BuildSplit(const ArchSpec& arch, const SplitConfig& config,
                      uint64_t seed);

// Seeds used for encoder k / the decoder, shared by both builders so that a
// one-site split model and the monolithic model draw identical parameters.
uint64_t EncoderSeed(uint64_t seed, int site);
uint64_t DecoderSeed(uint64_t seed);

int64_t CountParameters(const ParameterList& params);

// Checkpoint: "SCKP" | u32 version | u32 header length | header text of
// key=value lines | u32 count | per tensor: u16 name length, name, .ten blob.
struct Checkpoint {
  std::map<std::string, std::string> header;
  ParameterList params;
};

void SaveCheckpoint(const std::filesystem::path& path,
                    const std::map<std::string, std::string>& header,
                    const ParameterList& params);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);
// Copies values by name into `targets`; every target must be present with a
// matching shape.
void RestoreParameters(const Checkpoint& checkpoint, const ParameterList& targets);

}  // namespace splitsim
