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

#include "splitsim/model.h"

#include <algorithm>
#include <cstring>
#include <stdexcept>

#include <fmt/format.h>

#include "splitsim/random.h"
#include "splitsim/ten_format.h"

namespace splitsim {

std::string_view ToString(SkipVariant variant) {
  switch (variant) {
    case SkipVariant::kAllSkips:
      return "all_skips";
    case SkipVariant::kNoSkips:
      return "no_skips";
    case SkipVariant::kX3X4Only:
      return "x3_x4_only";
  }
  return "unknown";
}

SkipVariant ParseSkipVariant(std::string_view name) {
  if (name == "all_skips") return SkipVariant::kAllSkips;
  if (name == "no_skips") return SkipVariant::kNoSkips;
  if (name == "x3_x4_only") return SkipVariant::kX3X4Only;
  throw std::invalid_argument(fmt::format(
      "unknown skip variant '{}' (expected all_skips, no_skips, x3_x4_only)",
      name));
}

std::vector<int> SharedLevels(SkipVariant variant) {
  switch (variant) {
    case SkipVariant::kAllSkips:
      return {0, 1, 2, 3, 4};
    case SkipVariant::kNoSkips:
      return {4};
    case SkipVariant::kX3X4Only:
      return {3, 4};
  }
  return {};
}

bool IsShared(SkipVariant variant, int level) {
  const auto levels = SharedLevels(variant);
  return std::find(levels.begin(), levels.end(), level) != levels.end();
}

EncoderWidths ArchSpec::encoder_widths() const {
  return {widths[0], widths[1], widths[2], widths[3], widths[4]};
}

DecoderWidths ArchSpec::decoder_widths() const {
  return {widths[5], widths[6], widths[7], widths[8]};
}

void SplitConfig::Validate(const ArchSpec& arch) const {
  if (num_sites < 1) {
    throw std::invalid_argument(
        fmt::format("number of sites must be >= 1, got {}", num_sites));
  }
  for (int64_t w : arch.encoder_widths()) {
    if (w % num_sites != 0) {
      throw std::invalid_argument(fmt::format(
          "{} sites do not divide encoder width {}; every per-site encoder "
          "must carry an equal share of the default features",
          num_sites, w));
    }
  }
  if (label_site < 0 || label_site >= num_sites) {
    throw std::invalid_argument(fmt::format(
        "label site {} outside [0, {})", label_site, num_sites));
  }
}

EncoderWidths PerSiteWidths(const ArchSpec& arch, int num_sites) {
  EncoderWidths w = arch.encoder_widths();
  for (auto& v : w) v /= num_sites;
  return w;
}

uint64_t EncoderSeed(uint64_t seed, int site) {
  return DeriveSeed(seed, Stream::kEncoder, {static_cast<uint64_t>(site)});
}

uint64_t DecoderSeed(uint64_t seed) { return DeriveSeed(seed, Stream::kDecoder); }

// ---------------------------------------------------------------------------
// Encoder

Encoder::Encoder(int64_t in_channels, const EncoderWidths& widths,
                 uint64_t seed)
    : in_channels_(in_channels), widths_(widths) {
  int64_t prev = in_channels;
  for (int i = 0; i < kNumEncoderLevels; ++i) {
    blocks_[static_cast<size_t>(i)] =
        ConvBlock(prev, widths[static_cast<size_t>(i)],
                  DeriveSeed(seed, Stream::kEncoder, {static_cast<uint64_t>(i)}));
    prev = widths[static_cast<size_t>(i)];
  }
}

std::vector<Tensor> Encoder::Forward(Graph& g, const Tensor& images,
                                     int max_level) const {
  const auto& s = images.shape();
  constexpr int64_t kDivisor = 1 << kNumLevels;
  if (s.h % kDivisor != 0 || s.w % kDivisor != 0) {
    throw ShapeError(fmt::format(
        "encoder input {} must have H and W divisible by {}", s.ToString(),
        kDivisor));
  }
  if (s.c != in_channels_) {
    throw ShapeError(fmt::format("encoder expects {} input channels, got {}",
                                 in_channels_, s.ToString()));
  }
  if (max_level < 0 || max_level >= kNumEncoderLevels) {
    throw std::invalid_argument(
        fmt::format("encoder level {} not in [0, {}]", max_level,
                    kNumEncoderLevels - 1));
  }
  std::vector<Tensor> out;
  out.push_back(blocks_[0].Forward(g, images));
  for (int i = 1; i <= max_level; ++i) {
    out.push_back(blocks_[static_cast<size_t>(i)].Forward(g, g.MaxPool2(out.back())));
  }
  return out;
}

ParameterList Encoder::Parameters(const std::string& prefix) const {
  ParameterList out;
  for (int i = 0; i < kNumEncoderLevels; ++i) {
    blocks_[static_cast<size_t>(i)].AppendParameters(
        fmt::format("{}.level{}", prefix, i), out);
  }
  return out;
}

Encoder Encoder::Clone() const {
  Encoder e;
  e.in_channels_ = in_channels_;
  e.widths_ = widths_;
  for (size_t i = 0; i < blocks_.size(); ++i) e.blocks_[i] = blocks_[i].Clone();
  return e;
}

void Encoder::SetRequiresGrad(bool value) {
  for (auto& p : Parameters()) p.tensor.set_requires_grad(value);
}

ActivationBundle MakeBundle(int site, const std::vector<Tensor>& activations,
                            SkipVariant variant) {
  ActivationBundle bundle;
  bundle.site = site;
  for (int level : SharedLevels(variant)) {
    if (level >= static_cast<int>(activations.size())) {
      throw std::invalid_argument(
          fmt::format("activation for level {} was not computed", level));
    }
    bundle.levels[level] = activations[static_cast<size_t>(level)];
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Decoder

Decoder::Decoder(const EncoderWidths& skip_widths, const DecoderWidths& widths,
                 int64_t out_classes, SkipVariant variant, uint64_t seed)
    : skip_widths_(skip_widths),
      widths_(widths),
      out_classes_(out_classes),
      variant_(variant) {
  int64_t prev = skip_widths[kNumLevels];
  for (int j = 0; j < kNumLevels; ++j) {
    const auto ju = static_cast<size_t>(j);
    const int64_t skip = skip_widths[static_cast<size_t>(kNumLevels - 1 - j)];
    Rng rng(DeriveSeed(seed, Stream::kDecoder, {100 + ju}));
    up_weight_[ju] = KaimingUniform({prev, skip, 2, 2}, prev, rng);
    up_bias_[ju] = Tensor(TensorShape{skip, 1, 1, 1});
    up_bias_[ju].set_requires_grad(true);
    const int64_t block_in = variant == SkipVariant::kNoSkips ? skip : 2 * skip;
    blocks_[ju] = ConvBlock(block_in, widths[ju],
                            DeriveSeed(seed, Stream::kDecoder, {200 + ju}));
    prev = widths[ju];
  }
  Rng rng(DeriveSeed(seed, Stream::kDecoder, {300}));
  head_weight_ = KaimingUniform({out_classes, prev, 1, 1}, prev, rng);
  head_bias_ = Tensor(TensorShape{out_classes, 1, 1, 1});
  head_bias_.set_requires_grad(true);
}

Tensor Decoder::Forward(Graph& g,
                        std::span<const ActivationBundle> bundles) const {
  if (bundles.empty()) throw ShapeError("decoder: no activation bundles");
  std::vector<const ActivationBundle*> ordered;
  for (const auto& b : bundles) ordered.push_back(&b);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return a->site < b->site; });

  const auto needed = SharedLevels(variant_);
  std::array<Tensor, kNumEncoderLevels> merged;
  for (int level : needed) {
    std::vector<Tensor> parts;
    for (const auto* b : ordered) {
      auto it = b->levels.find(level);
      if (it == b->levels.end()) {
        throw ShapeError(fmt::format("decoder: site {} is missing level {}",
                                     b->site, level));
      }
      parts.push_back(it->second);
    }
    Tensor cat = parts.size() == 1 ? parts.front() : g.ConcatChannels(parts);
    const int64_t expect = skip_widths_[static_cast<size_t>(level)];
    if (cat.shape().c != expect) {
      throw ShapeError(fmt::format(
          "decoder: level {} concatenates to {} channels, expected {}", level,
          cat.shape().c, expect));
    }
    merged[static_cast<size_t>(level)] = cat;
  }
  const auto& bottleneck = merged[kNumLevels].shape();
  for (int level = 0; level < kNumLevels; ++level) {
    const auto lu = static_cast<size_t>(level);
    if (!merged[lu].defined()) continue;
    const int64_t scale = int64_t{1} << (kNumLevels - level);
    const auto& s = merged[lu].shape();
    if (s.b != bottleneck.b || s.h != bottleneck.h * scale ||
        s.w != bottleneck.w * scale) {
      throw ShapeError(fmt::format(
          "decoder: level {} activation {} inconsistent with bottleneck {}",
          level, s.ToString(), bottleneck.ToString()));
    }
  }
  if (variant_ == SkipVariant::kX3X4Only) {
    for (int level = 0; level < 3; ++level) {
      const int64_t scale = int64_t{1} << (kNumLevels - level);
      merged[static_cast<size_t>(level)] =
          Tensor(TensorShape{bottleneck.b, skip_widths_[static_cast<size_t>(level)],
                             bottleneck.h * scale, bottleneck.w * scale});
    }
  }

  Tensor x = merged[kNumLevels];
  for (int j = 0; j < kNumLevels; ++j) {
    const auto ju = static_cast<size_t>(j);
    Tensor up = g.ConvTranspose2x2(x, up_weight_[ju], up_bias_[ju]);
    if (variant_ == SkipVariant::kNoSkips) {
      x = blocks_[ju].Forward(g, up);
    } else {
      const Tensor parts[2] = {merged[static_cast<size_t>(kNumLevels - 1 - j)], up};
      x = blocks_[ju].Forward(g, g.ConcatChannels(parts));
    }
  }
  return g.Conv2d(x, head_weight_, head_bias_);
}

ParameterList Decoder::Parameters(const std::string& prefix) const {
  ParameterList out;
  for (int j = 0; j < kNumLevels; ++j) {
    const auto ju = static_cast<size_t>(j);
    const int level = kNumLevels + 1 + j;
    out.push_back({fmt::format("{}.level{}.up.weight", prefix, level), up_weight_[ju]});
    out.push_back({fmt::format("{}.level{}.up.bias", prefix, level), up_bias_[ju]});
    blocks_[ju].AppendParameters(fmt::format("{}.level{}", prefix, level), out);
  }
  out.push_back({prefix + ".head.weight", head_weight_});
  out.push_back({prefix + ".head.bias", head_bias_});
  return out;
}

Decoder Decoder::Clone() const {
  Decoder d;
  d.skip_widths_ = skip_widths_;
  d.widths_ = widths_;
  d.out_classes_ = out_classes_;
  d.variant_ = variant_;
  auto clone = [](const Tensor& t) {
    Tensor c = t.Clone();
    c.set_requires_grad(t.requires_grad());
    return c;
  };
  for (size_t j = 0; j < blocks_.size(); ++j) {
    d.up_weight_[j] = clone(up_weight_[j]);
    d.up_bias_[j] = clone(up_bias_[j]);
    d.blocks_[j] = blocks_[j].Clone();
  }
  d.head_weight_ = clone(head_weight_);
  d.head_bias_ = clone(head_bias_);
  return d;
}

// ---------------------------------------------------------------------------
// Assembled models

Tensor UNet::Forward(Graph& g, const Tensor& images) const {
  const ActivationBundle bundle =
      MakeBundle(0, encoder.Forward(g, images), decoder.variant());
  return decoder.Forward(g, std::span<const ActivationBundle>(&bundle, 1));
}

ParameterList UNet::Parameters() const {
  ParameterList out = encoder.Parameters();
  for (auto& p : decoder.Parameters()) out.push_back(std::move(p));
  return out;
}

UNet BuildDefaultUNet(const ArchSpec& arch, uint64_t seed) {
  UNet net;
  net.encoder = Encoder(arch.in_channels, arch.encoder_widths(), EncoderSeed(seed, 0));
  net.decoder = Decoder(arch.encoder_widths(), arch.decoder_widths(),
                        arch.out_classes, SkipVariant::kAllSkips,
                        DecoderSeed(seed));
  return net;
}

Tensor SplitModel::Forward(Graph& g, std::span<const Tensor> site_images) const {
  if (site_images.size() != encoders.size()) {
    throw ShapeError(fmt::format("split model: {} image batches for {} sites",
                                 site_images.size(), encoders.size()));
  }
  std::vector<ActivationBundle> bundles;
  for (size_t k = 0; k < encoders.size(); ++k) {
    bundles.push_back(MakeBundle(static_cast<int>(k),
                                 encoders[k].Forward(g, site_images[k]),
                                 config.skip_variant));
  }
  return decoder.Forward(g, bundles);
}

ParameterList SplitModel::Parameters() const {
  ParameterList out;
  for (size_t k = 0; k < encoders.size(); ++k) {
    for (auto& p : encoders[k].Parameters(fmt::format("site{}.enc", k))) {
      out.push_back(std::move(p));
    }
  }
  for (auto& p : decoder.Parameters()) out.push_back(std::move(p));
  return out;
}

SplitModel SplitModel::Clone() const {
  SplitModel m;
  m.config = config;
  for (const auto& e : encoders) m.encoders.push_back(e.Clone());
  m.decoder = decoder.Clone();
  return m;
}

SplitModel BuildSplit(const ArchSpec& arch, const SplitConfig& config,
                      uint64_t seed) {
  config.Validate(arch);
  SplitModel model;
  model.config = config;
  const EncoderWidths widths = PerSiteWidths(arch, config.num_sites);
  for (int k = 0; k < config.num_sites; ++k) {
    model.encoders.emplace_back(1, widths, EncoderSeed(seed, k));
  }
  model.decoder = Decoder(arch.encoder_widths(), arch.decoder_widths(),
                          arch.out_classes, config.skip_variant,
                          DecoderSeed(seed));
  return model;
}

int64_t CountParameters(const ParameterList& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr char kCheckpointMagic[4] = {'S', 'C', 'K', 'P'};
constexpr uint32_t kCheckpointVersion = 1;
}  // namespace

void SaveCheckpoint(const std::filesystem::path& path,
                    const std::map<std::string, std::string>& header,
                    const ParameterList& params) {
  std::vector<uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  le::PutU32(out, kCheckpointVersion);
  std::string text;
  for (const auto& [k, v] : header) text += k + "=" + v + "\n";
  le::PutU32(out, static_cast<uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  le::PutU32(out, static_cast<uint32_t>(params.size()));
  for (const auto& p : params) {
    le::PutU16(out, static_cast<uint16_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    EncodeTen(p.tensor, out);
  }
  WriteFileBytes(path, out);
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  const auto bytes = ReadFileBytes(path);
  const std::span<const uint8_t> in(bytes);
  if (in.size() < 4 || std::memcmp(in.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  }
  size_t off = 4;
  const uint32_t version = le::GetU32(in, &off);
  if (version != kCheckpointVersion) {
    throw FormatError(fmt::format("{}: unsupported checkpoint version {}",
                                  path.string(), version));
  }
  Checkpoint ckpt;
  const uint32_t text_len = le::GetU32(in, &off);
  if (off + text_len > in.size()) throw FormatError(path.string() + ": truncated header");
  const std::string text(reinterpret_cast<const char*>(in.data() + off), text_len);
  off += text_len;
  size_t pos = 0;
  while (pos < text.size()) {
    const size_t eol = text.find('\n', pos);
    const std::string line = text.substr(pos, eol - pos);
    const size_t eq = line.find('=');
    if (eq != std::string::npos) ckpt.header[line.substr(0, eq)] = line.substr(eq + 1);
    if (eol == std::string::npos) break;
    pos = eol + 1;
  }
  const uint32_t count = le::GetU32(in, &off);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = le::GetU16(in, &off);
    if (off + name_len > in.size()) throw FormatError(path.string() + ": truncated name");
    std::string name(reinterpret_cast<const char*>(in.data() + off), name_len);
    off += name_len;
    ckpt.params.push_back({std::move(name), DecodeTen(in, &off)});
  }
  return ckpt;
}

void RestoreParameters(const Checkpoint& checkpoint, const ParameterList& targets) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& p : checkpoint.params) by_name[p.name] = &p.tensor;
  for (const auto& t : targets) {
    auto it = by_name.find(t.name);
    if (it == by_name.end()) {
      throw FormatError("checkpoint has no parameter named " + t.name);
    }
    if (it->second->shape() != t.tensor.shape()) {
      throw FormatError(fmt::format("checkpoint parameter {} has shape {}, expected {}",
                                    t.name, it->second->shape().ToString(),
                                    t.tensor.shape().ToString()));
    }
    Tensor dst = t.tensor;
    auto src = it->second->data();
    std::copy(src.begin(), src.end(), dst.data().begin());
  }
}

}  // namespace splitsim
