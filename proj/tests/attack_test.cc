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

#include <cmath>

#include <fmt/format.h>
#include <gtest/gtest.h>

#include "splitsim/data.h"
#include "splitsim/intercept.h"
#include "splitsim/ten_format.h"
#include "oracles.h"
#include "test_util.h"

namespace splitsim {
namespace {

using testing::LoopTv;
using testing::RandomTensor;

double L2(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.data()) acc += static_cast<double>(v) * v;
  return std::sqrt(acc);
}

TEST(TotalVariationTest, Examples) {
  Graph g(false);
  EXPECT_EQ(TotalVariation(g, Tensor(TensorShape{2, 1, 5, 5}, 0.7f)).item(), 0.0f);
  Tensor t(TensorShape{1, 1, 2, 2}, std::vector<float>{0, 1, 0, 1});
  EXPECT_FLOAT_EQ(TotalVariation(g, t).item(), 0.5f);
  EXPECT_THROW(TotalVariation(g, Tensor(TensorShape{1, 1, 1, 4})), ShapeError);
}

TEST(TotalVariationTest, MatchesLoopOracle) {
  Tensor t = RandomTensor({2, 3, 9, 7}, 1);
  Graph g(false);
  EXPECT_NEAR(TotalVariation(g, t).item(), LoopTv(t), 1e-6);
}

TEST(TotalVariationTest, Gradient) {
  Tensor t = testing::DistinctValues({1, 2, 4, 5}, 2, 0.05f);
  auto r = testing::CheckGradients([&](Graph& g) { return TotalVariation(g, t); }, {t}, 1e-3);
  EXPECT_LT(r.max_error, 1e-3) << r.worst;
}

TEST(InversionLossTest, VanishesAtTargetWithZeroImage) {
  AttackConfig cfg;
  Tensor x = RandomTensor({1, 8, 4, 4}, 3);
  Graph g(false);
  EXPECT_EQ(InversionLoss(g, x, x, Tensor(TensorShape{1, 1, 8, 8}), cfg).item(), 0.0f);
}

TEST(InversionLossTest, OnlyPriorTermsAtTarget) {
  AttackConfig cfg;
  Tensor x = RandomTensor({1, 8, 4, 4}, 4);
  Tensor img = RandomTensor({1, 1, 8, 8}, 5, 0.0f, 1.0f);
  Graph g(false);
  const double want = cfg.alpha_tv * LoopTv(img) + cfg.alpha_l2 * L2(img);
  EXPECT_NEAR(InversionLoss(g, x, x, img, cfg).item(), want, 1e-6 * std::max(1.0, want));
}

TEST(InversionLossTest, MatchesThreeTermFormula) {
  for (bool squared : {false, true}) {
    AttackConfig cfg;
    cfg.alpha_act = 0.3;
    cfg.alpha_tv = 0.2;
    cfg.alpha_l2 = 0.1;
    cfg.squared_norms = squared;
    Tensor a = RandomTensor({2, 4, 3, 3}, 6);
    Tensor b = RandomTensor({2, 4, 3, 3}, 7);
    Tensor img = RandomTensor({2, 1, 6, 6}, 8);
    Tensor diff(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) {
      diff.data()[static_cast<size_t>(i)] = a.data()[static_cast<size_t>(i)] - b.data()[static_cast<size_t>(i)];
    }
    auto norm = [&](const Tensor& t) { return squared ? L2(t) * L2(t) : L2(t); };
    const double want = 0.3 * norm(diff) + 0.2 * LoopTv(img) + 0.1 * norm(img);
    Graph g(false);
    EXPECT_NEAR(InversionLoss(g, a, b, img, cfg).item(), want, 1e-6 * std::max(1.0, want));
  }
}

TEST(InversionLossTest, GradientAndShapeCheck) {
  AttackConfig cfg;
  cfg.alpha_act = 1.0;
  cfg.alpha_tv = 0.5;
  cfg.alpha_l2 = 0.25;
  Tensor a = RandomTensor({1, 2, 3, 3}, 9);
  Tensor b = RandomTensor({1, 2, 3, 3}, 10);
  Tensor img = testing::DistinctValues({1, 1, 4, 4}, 11, 0.07f);
  auto r = testing::CheckGradients([&](Graph& g) { return InversionLoss(g, a, b, img, cfg); },
                                   {b, img}, 1e-3);
  EXPECT_LT(r.max_error, 1e-3) << r.worst;
  Graph g(false);
  EXPECT_THROW(InversionLoss(g, a, RandomTensor({1, 2, 3, 4}, 1), img, cfg), ShapeError);
}

TEST(AttackConfigTest, Validation) {
  AttackConfig cfg;
  EXPECT_NO_THROW(cfg.Validate());
  cfg.alpha_tv = -1;
  EXPECT_THROW(cfg.Validate(), std::invalid_argument);
  cfg = AttackConfig{};
  cfg.steps = 0;
  EXPECT_THROW(cfg.Validate(), std::invalid_argument);
}

class InvertTest : public ::testing::Test {
 protected:
  Encoder encoder_{1, PerSiteWidths(ArchSpec{}, 4), 17};
  PhantomSet data_ = GenPhantoms(2, 4, 32, 7);
  Tensor images_ = data_.ModalityBatch(0, std::vector<int64_t>{0, 1});

  Tensor Target(int level) const {
    Graph g(false);
    return encoder_.Forward(g, images_, level)[static_cast<size_t>(level)];
  }
};

TEST_F(InvertTest, ShapeProgressAndTrailingTrace) {
  AttackConfig cfg;
  cfg.steps = 200;
  const InversionResult r = Invert(encoder_, Target(1), 1, cfg, 2);
  EXPECT_EQ(r.recovered.shape(), images_.shape());
  EXPECT_EQ(r.level, 1);
  EXPECT_EQ(r.site, 2);
  EXPECT_EQ(r.loss_trace.size(), 200u);
  EXPECT_LE(r.final_loss, r.initial_loss);
  EXPECT_FALSE(r.recovered.requires_grad());
  for (size_t t = 181; t < r.loss_trace.size(); ++t) {
    EXPECT_LE(r.loss_trace[t], r.loss_trace[t - 1] + 1e-3) << "step " << t;
  }
}

TEST_F(InvertTest, LevelZeroRecoversTheImage) {
  AttackConfig cfg;
  cfg.steps = 300;
  const InversionResult r = Invert(encoder_, Target(0), 0, cfg);
  EXPECT_GT(Ssim(r.recovered, images_).mean, 0.75);
}

TEST_F(InvertTest, PriorOnlyObjectiveShrinksImage) {
  AttackConfig cfg;
  cfg.alpha_act = 0.0;
  cfg.alpha_tv = 1.0;
  cfg.alpha_l2 = 1.0;
  cfg.steps = 100;
  cfg.seed = 3;
  const InversionResult r = Invert(encoder_, Target(2), 2, cfg);
  // Same draw as the optimiser's starting point.
  AttackConfig one = cfg;
  one.steps = 1;
  one.initial_rate = 1e-12;
  const InversionResult init = Invert(encoder_, Target(2), 2, one);
  EXPECT_LT(L2(r.recovered), L2(init.recovered));
}

TEST_F(InvertTest, DeterministicForSeed) {
  AttackConfig cfg;
  cfg.steps = 20;
  cfg.seed = 5;
  const auto a = Invert(encoder_, Target(3), 3, cfg);
  const auto b = Invert(encoder_, Target(3), 3, cfg);
  EXPECT_TRUE(a.recovered.BitEqual(b.recovered));
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  cfg.seed = 6;
  EXPECT_FALSE(Invert(encoder_, Target(3), 3, cfg).recovered.BitEqual(a.recovered));
}

TEST_F(InvertTest, PerSampleMatchesBatch) {
  AttackConfig cfg;
  cfg.steps = 300;
  const auto batch = Invert(encoder_, Target(0), 0, cfg);
  const auto single = InvertPerSample(encoder_, Target(0), 0, cfg);
  EXPECT_EQ(single.recovered.shape(), batch.recovered.shape());
  const auto sb = Ssim(batch.recovered, images_).per_sample;
  const auto ss = Ssim(single.recovered, images_).per_sample;
  for (size_t i = 0; i < sb.size(); ++i) EXPECT_NEAR(sb[i], ss[i], 0.05);
}

TEST_F(InvertTest, RejectsUnknownLevelAndWrongChannels) {
  AttackConfig cfg;
  cfg.steps = 1;
  EXPECT_THROW(Invert(encoder_, Target(1), 5, cfg), std::invalid_argument);
  EXPECT_THROW(Invert(encoder_, Target(1), 2, cfg), ShapeError);
}

TEST_F(InvertTest, LeavesEncoderUntouched) {
  const auto before = encoder_.Clone().Parameters();
  AttackConfig cfg;
  cfg.steps = 5;
  Invert(encoder_, Target(0), 0, cfg);
  const auto after = encoder_.Parameters();
  for (size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(after[i].tensor.BitEqual(before[i].tensor));
}

// Writes an intercept-shaped dump directory from seeded K=4 encoders.
std::filesystem::path WriteDumps(const std::string& name) {
  auto dir = testing::TempDir(name);
  const SplitModel model = BuildSplit(ArchSpec{}, SplitConfig{4}, 23);
  const PhantomSet data = GenPhantoms(2, 4, 32, 8);
  const std::vector<int64_t> idx = {0, 1};
  for (int k = 0; k < 4; ++k) {
    Tensor in = data.ModalityBatch(k, idx);
    SaveTen(InputDumpPath(dir, k), in);
    Graph g(false);
    const auto acts = model.encoders[static_cast<size_t>(k)].Forward(g, in);
    for (int l = 0; l < 5; ++l) SaveTen(ActivationDumpPath(dir, k, l), acts[static_cast<size_t>(l)]);
  }
  ParameterList enc;
  for (const auto& p : model.Parameters()) {
    if (p.name.find(".enc.") != std::string::npos) enc.push_back(p);
  }
  SaveCheckpoint(EncoderSnapshotPath(dir), {{"sites", "4"}}, enc);
  return dir;
}

TEST(LevelSweepTest, OneRowPerSiteAndLevel) {
  const auto dir = WriteDumps("sweep_rows");
  SweepOptions opts;
  opts.sites = {0, 1, 2, 3};
  opts.levels = {0, 1, 2, 3, 4};
  AttackConfig cfg;
  cfg.steps = 2;
  const SweepOutput out = LevelSweep(dir, opts, cfg);
  EXPECT_EQ(out.scores.size(), 20u);
  EXPECT_EQ(out.results.size(), 20u);
  const std::string csv = SsimCsv(out.scores);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 40);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "site,level,sample,defense,ssim");
}

TEST(LevelSweepTest, RerunIsIdentical) {
  const auto dir = WriteDumps("sweep_rerun");
  SweepOptions opts;
  opts.sites = {1};
  opts.levels = {0, 2};
  AttackConfig cfg;
  cfg.steps = 10;
  EXPECT_EQ(SsimCsv(LevelSweep(dir, opts, cfg).scores), SsimCsv(LevelSweep(dir, opts, cfg).scores));
}

TEST(LevelSweepTest, MissingDumpNamesThePath) {
  const auto dir = WriteDumps("sweep_missing");
  std::filesystem::remove(ActivationDumpPath(dir, 2, 3));
  SweepOptions opts;
  opts.sites = {2};
  opts.levels = {3};
  try {
    LevelSweep(dir, opts, AttackConfig{});
    FAIL() << "expected a missing-file error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("site_2_level_3.ten"), std::string::npos) << e.what();
  }
}

TEST(LevelSweepTest, LoadSiteEncoderMatchesSnapshot) {
  const auto dir = WriteDumps("sweep_load");
  const SplitModel model = BuildSplit(ArchSpec{}, SplitConfig{4}, 23);
  const Encoder e = LoadSiteEncoder(EncoderSnapshotPath(dir), 3);
  const auto want = model.encoders[3].Parameters();
  const auto got = e.Parameters();
  for (size_t i = 0; i < want.size(); ++i) EXPECT_TRUE(got[i].tensor.BitEqual(want[i].tensor));
  EXPECT_THROW(LoadSiteEncoder(EncoderSnapshotPath(dir), 4), std::invalid_argument);
}

}  // namespace
}  // namespace splitsim
