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


#include "splitsim/slproto.h"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "splitsim/attack.h"
#include "splitsim/intercept.h"
#include "splitsim/message.h"
#include "splitsim/ten_format.h"
#include "splitsim/transport.h"
#include "test_util.h"

namespace splitsim {
namespace {

using testing::RandomTensor;

// ---------------------------------------------------------------------------
// Messages and transport

TEST(MessageTest, RoundTripsEveryType) {
  const std::vector<int64_t> idx = {5, 0, 17};
  const Message sel = DecodeMessage(EncodeMessage(MakeBatchSelect(3, idx, 0xABCDEF0123ull)));
  EXPECT_EQ(sel.type, MessageType::kBatchSelect);
  EXPECT_EQ(sel.iteration, 3u);
  EXPECT_EQ(sel.indices, idx);
  EXPECT_EQ(sel.aug_seed, 0xABCDEF0123ull);

  std::map<int, Tensor> levels = {{0, RandomTensor({2, 8, 4, 4}, 1)}, {4, RandomTensor({2, 64, 1, 1}, 2)}};
  for (auto make : {&MakeActShare, &MakeGradShare}) {
    const Message m = DecodeMessage(EncodeMessage(make(9, 3, levels)));
    EXPECT_EQ(m.iteration, 9u);
    EXPECT_EQ(m.site, 3);
    ASSERT_EQ(m.levels.size(), 2u);
    EXPECT_TRUE(m.levels.at(0).BitEqual(levels.at(0)));
    EXPECT_TRUE(m.levels.at(4).BitEqual(levels.at(4)));
  }
  const Message ack = DecodeMessage(EncodeMessage(MakeAck(4, 1)));
  EXPECT_EQ(ack.type, MessageType::kAck);
  EXPECT_EQ(ack.site, 1);
}

TEST(MessageTest, RejectsMalformedBytes) {
  auto bytes = EncodeMessage(MakeActShare(1, 0, {{2, RandomTensor({1, 1, 2, 2}, 3)}}));
  auto bad_type = bytes;
  bad_type[0] = 9;
  EXPECT_THROW(DecodeMessage(bad_type), ProtocolError);
  auto trailing = bytes;
  trailing.push_back(1);
  EXPECT_THROW(DecodeMessage(trailing), ProtocolError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(DecodeMessage(truncated), ProtocolError);
  EXPECT_THROW(MakeAck(1, 300), ProtocolError);
}

TEST(TransportTest, FifoPerChannel) {
  Transport t(3);
  t.Send(0, 2, MakeAck(1, 0));
  t.Send(0, 2, MakeAck(2, 0));
  t.Send(1, 2, MakeAck(7, 1));
  EXPECT_EQ(t.Pending(2, 0), 2u);
  EXPECT_EQ(t.Receive(2, 1).iteration, 7u);
  EXPECT_EQ(t.Receive(2, 0).iteration, 1u);
  EXPECT_EQ(t.Receive(2, 0).iteration, 2u);
  EXPECT_GT(t.bytes_sent(), 0u);
  EXPECT_THROW(t.Send(0, 3, MakeAck(1, 0)), ProtocolError);
  EXPECT_THROW(Transport(1), std::invalid_argument);
}

TEST(TransportTest, ReceiveTimesOut) {
  Transport t(2, std::chrono::milliseconds(50));
  const auto start = std::chrono::steady_clock::now();
  EXPECT_THROW(t.Receive(0, 1), ProtocolError);
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(5));
}

// ---------------------------------------------------------------------------
// ShareGuard

ActivationBundle Bundle(TensorShape shape, float fill) {
  ActivationBundle b;
  b.site = 1;
  for (int l : {0, 3}) b.levels[l] = Tensor(shape, fill);
  return b;
}

TEST(ShareGuardTest, IdentityLeavesBundleUnchanged) {
  Graph g;
  ActivationBundle in;
  in.levels[0] = RandomTensor({2, 8, 8, 8}, 1);
  const auto out = ApplyGuard(g, ShareGuard{}, in, 1, 1);
  EXPECT_TRUE(out.levels.at(0).BitEqual(in.levels.at(0)));
  EXPECT_EQ(ShareGuard{}.Label(), "none");
  EXPECT_EQ((ShareGuard{0.5, 2.0}.Label()), "p=0.5;sigma=2");
}

TEST(ShareGuardTest, NoiseVariancePerLevel) {
  Graph g(false);
  const auto out = ApplyGuard(g, ShareGuard{0.0, 2.0}, Bundle({1, 1, 100, 200}, 0.0f), 7, 3);
  for (const auto& [level, t] : out.levels) {
    double sq = 0.0;
    for (float v : t.data()) sq += static_cast<double>(v) * v;
    EXPECT_NEAR(sq / static_cast<double>(t.numel()), 4.0, 0.4) << "level " << level;
  }
  EXPECT_FALSE(out.levels.at(0).BitEqual(out.levels.at(3)));
}

TEST(ShareGuardTest, DropoutZeroesAboutHalf) {
  Graph g(false);
  const auto out = ApplyGuard(g, ShareGuard{0.5, 0.0}, Bundle({1, 1, 100, 100}, 1.0f), 7, 3);
  const double n = 1e4, sd = std::sqrt(n * 0.25);
  for (const auto& [level, t] : out.levels) {
    int64_t zeros = 0;
    for (float v : t.data()) zeros += v == 0.0f;
    EXPECT_NEAR(static_cast<double>(zeros), n / 2, 3 * sd) << "level " << level;
  }
}

TEST(ShareGuardTest, SeededByIterationSiteAndLevel) {
  Graph g(false);
  const auto a = ApplyGuard(g, ShareGuard{0.2, 1.0}, Bundle({1, 1, 8, 8}, 1.0f), 7, 3);
  const auto b = ApplyGuard(g, ShareGuard{0.2, 1.0}, Bundle({1, 1, 8, 8}, 1.0f), 7, 3);
  const auto c = ApplyGuard(g, ShareGuard{0.2, 1.0}, Bundle({1, 1, 8, 8}, 1.0f), 7, 4);
  EXPECT_TRUE(a.levels.at(0).BitEqual(b.levels.at(0)));
  EXPECT_FALSE(a.levels.at(0).BitEqual(c.levels.at(0)));
  EXPECT_THROW(ApplyGuard(g, ShareGuard{1.0, 0.0}, Bundle({1, 1, 2, 2}, 1.0f), 7, 3),
               std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Protocol

ProtocolOptions Options(int k, uint64_t seed = 3) {
  ProtocolOptions o;
  o.split.num_sites = k;
  o.seed = seed;
  return o;
}

double RelError(std::span<const float> got, std::span<const float> want) {
  double diff = 0.0, scale = 1e-12;
  for (size_t i = 0; i < got.size(); ++i) {
    diff = std::max(diff, std::fabs(static_cast<double>(got[i]) - want[i]));
    scale = std::max(scale, std::fabs(static_cast<double>(want[i])));
  }
  return diff / scale;
}

// One protocol step against monolithic backprop of the same composite.
double ProtocolVersusMonolithic(int k) {
  const PhantomSet data = GenPhantoms(4, k, 32, 11);
  const SplitModel model = BuildSplit(ArchSpec{}, SplitConfig{k}, 12);
  const SplitModel reference = model.Clone();
  const ProtocolOptions opts = Options(k);
  Simulation sim(model.Clone(), &data, opts);
  const std::vector<int64_t> batch = {2, 0, 3};
  sim.Step(batch);

  const auto flips = FlipDecisions(AugmentSeed(opts.seed, 1), 3);
  std::vector<Tensor> images;
  for (int s = 0; s < k; ++s) images.push_back(ApplyFlips(data.ModalityBatch(s, batch), flips));
  Graph g;
  const Tensor loss = DiceCeLoss(g, reference.Forward(g, images), ApplyFlips(data.LabelBatch(batch), flips));
  g.Backward(loss);

  const auto got = sim.Parameters();
  const auto want = reference.Parameters();
  double worst = 0.0;
  for (size_t i = 0; i < want.size(); ++i) {
    EXPECT_EQ(got[i].name, want[i].name);
    worst = std::max(worst, RelError(got[i].tensor.grad(), want[i].tensor.grad()));
  }
  return worst;
}

TEST(ProtocolTest, GradientsMatchMonolithicBackprop) {
  for (int k : {1, 2, 4}) EXPECT_LE(ProtocolVersusMonolithic(k), 1e-5) << "K=" << k;
}

std::vector<ParameterList> RunSteps(ProtocolOptions opts, int steps) {
  const PhantomSet data = GenPhantoms(6, opts.split.num_sites, 32, 13);
  Simulation sim(BuildSplit(ArchSpec{}, opts.split, 14), &data, std::move(opts));
  std::vector<ParameterList> out;
  for (int s = 0; s < steps; ++s) {
    const std::vector<int64_t> batch = {static_cast<int64_t>(s), static_cast<int64_t>(s + 3)};
    sim.Step(batch);
    ParameterList snap;
    for (const auto& p : sim.Parameters()) snap.push_back({p.name, p.tensor.Clone()});
    out.push_back(std::move(snap));
  }
  return out;
}

TEST(ProtocolTest, ScheduleDoesNotChangeResults) {
  ProtocolOptions base = Options(2);
  base.guard = {0.3, 0.5};
  const auto seq = RunSteps(base, 2);
  ProtocolOptions reversed = base;
  reversed.site_order = {1, 0};
  ProtocolOptions threaded = base;
  threaded.schedule = Schedule::kThreaded;
  for (const auto& other : {RunSteps(reversed, 2), RunSteps(threaded, 2)}) {
    for (size_t s = 0; s < seq.size(); ++s) {
      for (size_t i = 0; i < seq[s].size(); ++i) {
        EXPECT_TRUE(seq[s][i].tensor.BitEqual(other[s][i].tensor)) << seq[s][i].name;
      }
    }
  }
}

TEST(ProtocolTest, ReplayGivesIdenticalLossCurve) {
  auto curve = [] {
    const PhantomSet data = GenPhantoms(8, 2, 32, 15);
    Simulation sim(BuildSplit(ArchSpec{}, SplitConfig{2}, 16), &data, Options(2, 4));
    std::vector<double> losses;
    for (int s = 0; s < 4; ++s) {
      const std::vector<int64_t> batch = {static_cast<int64_t>(2 * s), static_cast<int64_t>(2 * s + 1)};
      losses.push_back(sim.Step(batch).loss);
    }
    return losses;
  };
  EXPECT_EQ(curve(), curve());
}

TEST(ProtocolTest, LossDecreasesOnRepeatedBatch) {
  const PhantomSet data = GenPhantoms(2, 2, 32, 17);
  ProtocolOptions opts = Options(2);
  opts.augment = false;
  opts.lr = 3e-3;
  Simulation sim(BuildSplit(ArchSpec{}, SplitConfig{2}, 18), &data, opts);
  const std::vector<int64_t> batch = {0, 1};
  const double first = sim.Step(batch).loss;
  double last = first;
  for (int s = 0; s < 15; ++s) last = sim.Step(batch).loss;
  EXPECT_LT(last, 0.8 * first);
  EXPECT_EQ(sim.iteration(), 16u);
}

TEST(ProtocolTest, SitesRejectOutOfOrderMessages) {
  const PhantomSet data = GenPhantoms(2, 1, 32, 19);
  const ProtocolOptions opts = Options(1);
  Transport transport(2, std::chrono::milliseconds(200));
  Site site(0, BuildSplit(ArchSpec{}, SplitConfig{1}, 20).encoders[0], &data, &opts, &transport, 1);
  const std::vector<int64_t> idx = {0};
  transport.Send(1, 0, MakeBatchSelect(2, idx, 0));
  EXPECT_THROW(site.HandleBatchSelect(), ProtocolError);
  transport.Send(1, 0, MakeGradShare(1, 0, {}));
  EXPECT_THROW(site.HandleGradShare(), ProtocolError);
  transport.Send(1, 0, MakeAck(1, 0));
  EXPECT_THROW(site.HandleBatchSelect(), ProtocolError);
}

TEST(ProtocolTest, SiteRejectsGradientForWrongLevels) {
  const PhantomSet data = GenPhantoms(2, 1, 32, 19);
  const ProtocolOptions opts = Options(1);
  Transport transport(2, std::chrono::milliseconds(200));
  Site site(0, BuildSplit(ArchSpec{}, SplitConfig{1}, 20).encoders[0], &data, &opts, &transport, 1);
  const std::vector<int64_t> idx = {0, 1};
  transport.Send(1, 0, MakeBatchSelect(1, idx, 0));
  site.HandleBatchSelect();
  EXPECT_EQ(transport.Receive(1, 0).type, MessageType::kActShare);
  transport.Send(1, 0, MakeGradShare(1, 0, {{0, Tensor(TensorShape{2, 32, 32, 32})}}));
  EXPECT_THROW(site.HandleGradShare(), ProtocolError);
}

TEST(ProtocolTest, ConstructorValidatesSetup) {
  const PhantomSet data = GenPhantoms(2, 2, 32, 21);
  EXPECT_THROW(Simulation(BuildSplit(ArchSpec{}, SplitConfig{4}, 1), &data, Options(4)),
               std::invalid_argument);
  ProtocolOptions bad_order = Options(2);
  bad_order.site_order = {0, 0};
  EXPECT_THROW(Simulation(BuildSplit(ArchSpec{}, SplitConfig{2}, 1), &data, bad_order),
               std::invalid_argument);
  ProtocolOptions bad_guard = Options(2);
  bad_guard.guard.noise_sigma = -1;
  EXPECT_THROW(Simulation(BuildSplit(ArchSpec{}, SplitConfig{2}, 1), &data, bad_guard),
               std::invalid_argument);
}

TEST(InterceptTest, AllSkipsDumpsEveryLevel) {
  const auto dir = testing::TempDir("intercept");
  const PhantomSet data = GenPhantoms(4, 2, 32, 22);
  const SplitModel model = BuildSplit(ArchSpec{}, SplitConfig{2}, 23);
  const ProtocolOptions opts = Options(2);
  Simulation sim(model.Clone(), &data, opts);
  EXPECT_EQ(AllTaps(opts.split).size(), 10u);
  sim.InterceptAt(2, AllTaps(opts.split), dir);
  const std::vector<int64_t> b1 = {0, 1}, b2 = {2, 3};
  sim.Step(b1);
  EXPECT_FALSE(std::filesystem::exists(InterceptInfoPath(dir)));
  const SplitModel before = sim.Model();
  sim.Step(b2);

  for (int k = 0; k < 2; ++k) {
    const Tensor input = LoadTen(InputDumpPath(dir, k));
    const auto flips = FlipDecisions(AugmentSeed(opts.seed, 2), 2);
    EXPECT_TRUE(input.BitEqual(ApplyFlips(data.ModalityBatch(k, b2), flips)));
    const Encoder snap = LoadSiteEncoder(EncoderSnapshotPath(dir), k);
    Graph g(false);
    const auto acts = before.encoders[static_cast<size_t>(k)].Forward(g, input);
    const auto replay = snap.Forward(g, input);
    for (int l = 0; l < 5; ++l) {
      const Tensor dump = LoadTen(ActivationDumpPath(dir, k, l));
      EXPECT_TRUE(dump.BitEqual(acts[static_cast<size_t>(l)])) << k << ":" << l;
      EXPECT_TRUE(dump.BitEqual(replay[static_cast<size_t>(l)])) << k << ":" << l;
    }
  }
  std::ifstream in(InterceptInfoPath(dir));
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_NE(ss.str().find("iteration=2\n"), std::string::npos);
  EXPECT_NE(ss.str().find("indices=2,3\n"), std::string::npos);
  EXPECT_NE(ss.str().find("defense=none\n"), std::string::npos);
}

TEST(InterceptTest, NoSkipsExposesOnlyTheBottleneck) {
  const PhantomSet data = GenPhantoms(2, 2, 32, 24);
  ProtocolOptions opts = Options(2);
  opts.split.skip_variant = SkipVariant::kNoSkips;
  Simulation sim(BuildSplit(ArchSpec{}, opts.split, 25), &data, opts);
  EXPECT_THROW(sim.InterceptAt(1, {{0, 0}}, "unused"), std::invalid_argument);
  EXPECT_THROW(sim.InterceptAt(1, {{2, 4}}, "unused"), std::invalid_argument);
  EXPECT_THROW(sim.InterceptAt(0, {{0, 4}}, "unused"), std::invalid_argument);
  EXPECT_NO_THROW(sim.InterceptAt(1, {{0, 4}}, testing::TempDir("intercept_ns")));
  EXPECT_EQ(AllTaps(opts.split).size(), 2u);
}

TEST(TrainTest, EpochBatchesCoverTrainingSet) {
  std::vector<int64_t> train(10);
  for (int i = 0; i < 10; ++i) train[static_cast<size_t>(i)] = 100 + i;
  const auto batches = EpochBatches(train, 4, 1, 0);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[2].size(), 2u);
  std::vector<int64_t> seen;
  for (const auto& b : batches) seen.insert(seen.end(), b.begin(), b.end());
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(seen, train);
  EXPECT_NE(EpochBatches(train, 4, 1, 1), batches);
  EXPECT_EQ(EpochBatches(train, 4, 1, 0), batches);
}

TEST(TrainTest, HistoryAndCsv) {
  const PhantomSet data = GenPhantoms(10, 2, 32, 26);
  Simulation sim(BuildSplit(ArchSpec{}, SplitConfig{2}, 27), &data, Options(2));
  int calls = 0;
  const auto history = Train(sim, SplitDataset(10, 0), {2, 4, 0}, [&](const EpochMetrics&) { ++calls; });
  ASSERT_EQ(history.size(), 2u);
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(history[1].epoch, 2);
  EXPECT_EQ(sim.iteration(), 4u);
  const std::string csv = MetricsCsv(history);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,split,loss,dice_mean,dice_per_class");
}

TEST(TrainTest, EvaluationIsDeterministicAndIgnoresDropout) {
  const PhantomSet data = GenPhantoms(4, 2, 32, 28);
  const SplitModel model = BuildSplit(ArchSpec{}, SplitConfig{2}, 29);
  ProtocolOptions plain = Options(2);
  ProtocolOptions dropped = Options(2);
  dropped.guard.dropout_p = 0.5;
  Simulation a(model.Clone(), &data, plain);
  Simulation b(model.Clone(), &data, dropped);
  const std::vector<int64_t> idx = {0, 1, 2, 3};
  const EvalResult ea = a.Evaluate(idx, 3);
  EXPECT_EQ(ea.loss, a.Evaluate(idx, 3).loss);
  EXPECT_EQ(ea.loss, b.Evaluate(idx, 3).loss);
}

TEST(CentralTrainerTest, StepsAndEvaluates) {
  const PhantomSet data = GenPhantoms(4, 4, 32, 30);
  CentralTrainer trainer(BuildDefaultUNet(ArchSpec{}, 31), &data, 0, 1e-3);
  const std::vector<int64_t> idx = {0, 1};
  const StepRecord r = trainer.Step(idx);
  EXPECT_GT(r.loss, 0.0);
  EXPECT_EQ(r.predictions.shape(), (TensorShape{2, 1, 32, 32}));
  EXPECT_EQ(trainer.iteration(), 1u);
  EXPECT_GT(trainer.Evaluate(idx, 1).loss, 0.0);
  const PhantomSet two = GenPhantoms(1, 2, 32, 30);
  EXPECT_THROW(CentralTrainer(BuildDefaultUNet(ArchSpec{}, 31), &two, 0, 1e-3), std::invalid_argument);
}

}  // namespace
}  // namespace splitsim
