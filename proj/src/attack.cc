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

#include "splitsim/attack.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

#include "splitsim/intercept.h"
#include "splitsim/nn.h"
#include "splitsim/random.h"
#include "splitsim/ten_format.h"

namespace splitsim {

void AttackConfig::Validate() const {
  std::vector<std::string> errors;
  if (!(alpha_act >= 0.0)) errors.push_back(fmt::format("alpha_act must be >= 0, got {}", alpha_act));
  if (!(alpha_tv >= 0.0)) errors.push_back(fmt::format("alpha_tv must be >= 0, got {}", alpha_tv));
  if (!(alpha_l2 >= 0.0)) errors.push_back(fmt::format("alpha_l2 must be >= 0, got {}", alpha_l2));
  if (steps < 1) errors.push_back(fmt::format("attack steps must be >= 1, got {}", steps));
  if (!(initial_rate > 0.0)) errors.push_back(fmt::format("attack rate must be > 0, got {}", initial_rate));
  if (!errors.empty()) throw std::invalid_argument(fmt::format("{}", fmt::join(errors, "; ")));
}

Tensor TotalVariation(Graph& g, const Tensor& image) {
  const auto& s = image.shape();
  if (s.h < 2 || s.w < 2) {
    throw ShapeError("total variation needs H, W >= 2, got " + s.ToString());
  }
  const double norm = static_cast<double>(s.numel());
  auto x = image.data();
  double acc = 0.0;
  for (int64_t p = 0; p < s.b * s.c; ++p) {
    const float* px = x.data() + p * s.plane();
    for (int64_t h = 0; h < s.h; ++h) {
      for (int64_t w = 0; w < s.w; ++w) {
        const float v = px[h * s.w + w];
        if (h + 1 < s.h) acc += std::fabs(px[(h + 1) * s.w + w] - v);
        if (w + 1 < s.w) acc += std::fabs(px[h * s.w + w + 1] - v);
      }
    }
  }
  Tensor out = Tensor::Scalar(static_cast<float>(acc / norm));
  if (g.NeedsGrad({&image})) {
    g.Record({image}, out, [image, out, norm]() mutable {
      const auto& s = image.shape();
      const float k = static_cast<float>(out.grad()[0] / norm);
      auto x = image.data();
      auto gi = image.grad();
      auto sign = [](float d) { return d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f); };
      for (int64_t p = 0; p < s.b * s.c; ++p) {
        const float* px = x.data() + p * s.plane();
        float* pg = gi.data() + p * s.plane();
        for (int64_t h = 0; h < s.h; ++h) {
          for (int64_t w = 0; w < s.w; ++w) {
            const int64_t i = h * s.w + w;
            if (h + 1 < s.h) {
              const float d = k * sign(px[i + s.w] - px[i]);
              pg[i + s.w] += d;
              pg[i] -= d;
            }
            if (w + 1 < s.w) {
              const float d = k * sign(px[i + 1] - px[i]);
              pg[i + 1] += d;
              pg[i] -= d;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor InversionLoss(Graph& g, const Tensor& target, const Tensor& candidate,
                     const Tensor& image, const AttackConfig& config) {
  if (target.shape() != candidate.shape()) {
    throw ShapeError(fmt::format("inversion loss: target {} vs candidate {}",
                                 target.shape().ToString(),
                                 candidate.shape().ToString()));
  }
  auto norm = [&](const Tensor& t) {
    return config.squared_norms ? g.SquaredNorm(t) : g.Norm(t);
  };
  Tensor act = g.Scale(norm(g.Sub(target, candidate)),
                       static_cast<float>(config.alpha_act));
  Tensor tv = g.Scale(TotalVariation(g, image), static_cast<float>(config.alpha_tv));
  Tensor l2 = g.Scale(norm(image), static_cast<float>(config.alpha_l2));
  return g.Add(g.Add(act, tv), l2);
}

namespace {

void CheckLevel(const Encoder& encoder, const Tensor& target, int level) {
  if (level < 0 || level >= kNumEncoderLevels) {
    throw std::invalid_argument(fmt::format(
        "encoder produces levels 0..{}, not {}", kNumEncoderLevels - 1, level));
  }
  const int64_t want = encoder.widths()[static_cast<size_t>(level)];
  if (target.shape().c != want) {
    throw ShapeError(fmt::format("level {} activations have {} channels, target has {}",
                                 level, want, target.shape().c));
  }
}

InversionResult InvertFrom(const Encoder& replica, const Tensor& target,
                           int level, const AttackConfig& config, int site,
                           int64_t first_sample) {
  const auto& ts = target.shape();
  const int64_t scale = int64_t{1} << level;
  const TensorShape in{ts.b, replica.in_channels(), ts.h * scale, ts.w * scale};
  Tensor image(in);
  auto px = image.data();
  const int64_t per_sample = in.c * in.plane();
  for (int64_t b = 0; b < in.b; ++b) {
    Rng rng(DeriveSeed(config.seed, Stream::kAttackInit,
                       {static_cast<uint64_t>(site), static_cast<uint64_t>(level),
                        static_cast<uint64_t>(first_sample + b)}));
    for (int64_t i = 0; i < per_sample; ++i) px[static_cast<size_t>(b * per_sample + i)] = rng.Uniform();
  }
  image.set_requires_grad(true);

  Adam adam({image});
  const CosineSchedule schedule{config.initial_rate, config.steps};
  InversionResult result;
  result.level = level;
  result.site = site;
  result.loss_trace.reserve(static_cast<size_t>(config.steps));
  double best = std::numeric_limits<double>::infinity();
  for (int64_t t = 0;; ++t) {
    Graph g;
    const auto acts = replica.Forward(g, image, level);
    Tensor loss = InversionLoss(g, target, acts[static_cast<size_t>(level)], image, config);
    const double value = loss.item();
    if (t == 0) result.initial_loss = value;
    if (value < best) {
      best = value;
      result.recovered = image.Clone();
    }
    if (t == config.steps) break;
    result.loss_trace.push_back(value);
    g.Backward(loss);
    adam.Step(static_cast<float>(CosineRate(schedule, t)));
  }
  result.recovered.set_requires_grad(false);
  result.final_loss = best;
  return result;
}

Encoder FrozenReplica(const Encoder& encoder) {
  Encoder replica = encoder.Clone();
  replica.SetRequiresGrad(false);
  return replica;
}

}  // namespace

InversionResult Invert(const Encoder& encoder, const Tensor& target, int level,
                       const AttackConfig& config, int site) {
  config.Validate();
  CheckLevel(encoder, target, level);
  return InvertFrom(FrozenReplica(encoder), target, level, config, site, 0);
}

InversionResult InvertPerSample(const Encoder& encoder, const Tensor& target,
                                int level, const AttackConfig& config, int site) {
  config.Validate();
  CheckLevel(encoder, target, level);
  const Encoder replica = FrozenReplica(encoder);
  const auto& ts = target.shape();
  const int64_t slice = ts.c * ts.plane();
  InversionResult out;
  out.level = level;
  out.site = site;
  std::vector<Tensor> parts;
  for (int64_t b = 0; b < ts.b; ++b) {
    auto src = target.data().subspan(static_cast<size_t>(b * slice), static_cast<size_t>(slice));
    Tensor one(TensorShape{1, ts.c, ts.h, ts.w}, std::vector<float>(src.begin(), src.end()));
    auto r = InvertFrom(replica, one, level, config, site, b);
    out.initial_loss += r.initial_loss;
    out.final_loss += r.final_loss;
    if (out.loss_trace.empty()) out.loss_trace.assign(r.loss_trace.size(), 0.0);
    for (size_t i = 0; i < r.loss_trace.size(); ++i) out.loss_trace[i] += r.loss_trace[i];
    parts.push_back(std::move(r.recovered));
  }
  const auto& ps = parts.front().shape();
  Tensor stacked(TensorShape{ts.b, ps.c, ps.h, ps.w});
  auto dst = stacked.data();
  for (size_t b = 0; b < parts.size(); ++b) {
    auto src = parts[b].data();
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(b * src.size()));
  }
  out.recovered = std::move(stacked);
  return out;
}

Encoder LoadSiteEncoder(const std::filesystem::path& snapshot, int site) {
  const Checkpoint ckpt = LoadCheckpoint(snapshot);
  auto it = ckpt.header.find("sites");
  if (it == ckpt.header.end()) {
    throw FormatError(snapshot.string() + ": encoder snapshot lacks a sites entry");
  }
  const int sites = std::stoi(it->second);
  if (site < 0 || site >= sites) {
    throw std::invalid_argument(fmt::format("{}: site {} not in [0, {})",
                                            snapshot.string(), site, sites));
  }
  Encoder encoder(1, PerSiteWidths(ArchSpec{}, sites), 0);
  RestoreParameters(ckpt, encoder.Parameters(fmt::format("site{}.enc", site)));
  return encoder;
}

SweepOutput LevelSweep(const std::filesystem::path& dump_dir,
                       const SweepOptions& options, const AttackConfig& config) {
  config.Validate();
  std::vector<std::string> missing;
  auto need = [&](const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) missing.push_back(p.string());
  };
  const auto snapshot =
      options.snapshot.empty() ? EncoderSnapshotPath(dump_dir) : options.snapshot;
  need(snapshot);
  for (int site : options.sites) {
    need(InputDumpPath(dump_dir, site));
    for (int level : options.levels) need(ActivationDumpPath(dump_dir, site, level));
  }
  if (!missing.empty()) {
    throw std::invalid_argument(fmt::format("missing dump files: {}", fmt::join(missing, ", ")));
  }

  SweepOutput out;
  for (int site : options.sites) {
    const Encoder encoder = LoadSiteEncoder(snapshot, site);
    const Tensor original = LoadTen(InputDumpPath(dump_dir, site));
    for (int level : options.levels) {
      const Tensor target = LoadTen(ActivationDumpPath(dump_dir, site, level));
      InversionResult r = options.per_sample
                              ? InvertPerSample(encoder, target, level, config, site)
                              : Invert(encoder, target, level, config, site);
      if (r.recovered.shape() != original.shape()) {
        throw ShapeError(fmt::format("site {} level {}: inversion {} vs recorded input {}",
                                     site, level, r.recovered.shape().ToString(),
                                     original.shape().ToString()));
      }
      InversionScore score;
      score.site = site;
      score.level = level;
      score.defense = options.defense;
      score.per_sample = Ssim(r.recovered, original).per_sample;
      out.scores.push_back(std::move(score));
      out.results.push_back(std::move(r));
    }
  }
  return out;
}

std::string SsimCsv(const std::vector<InversionScore>& scores) {
  std::string out = "site,level,sample,defense,ssim\n";
  for (const auto& s : scores) {
    for (size_t i = 0; i < s.per_sample.size(); ++i) {
      out += fmt::format("{},{},{},{},{}\n", s.site, s.level, i, s.defense,
                         FormatDouble(s.per_sample[i]));
    }
  }
  return out;
}

}  // namespace splitsim
