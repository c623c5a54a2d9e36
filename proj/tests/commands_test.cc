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


#include "splitsim/commands.h"

#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "splitsim/intercept.h"
#include "splitsim/ten_format.h"
#include "test_util.h"

namespace splitsim {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult Cli(std::vector<std::string> args) {
  args.insert(args.begin(), "splitsim");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = RunCli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> SmallRun(const fs::path& out) {
  return {"train", "--set", "samples=10", "--set", "image_size=32", "--set", "epochs=1",
          "--set", "batch_size=4", "--set", "attack_steps=3", "--out", out.string()};
}

TEST(CliTest, ValidationErrorsExitWithOne) {
  EXPECT_EQ(Cli({}).code, kExitValidation);
  EXPECT_EQ(Cli({"frobnicate"}).code, kExitValidation);
  EXPECT_EQ(Cli({"train"}).code, kExitValidation);

  const auto dir = testing::TempDir("cli_validation");
  const auto r = Cli({"train", "--set", "sites=3", "--set", "epochs=0", "--set", "nope=1",
                      "--out", (dir / "run").string()});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("epochs"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("sites=3"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("nope"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "run"));
}

TEST(CliTest, MissingDumpsExitWithOne) {
  const auto dir = testing::TempDir("cli_missing");
  const auto r = Cli({"attack", "--dumps", (dir / "none").string(), "--out", (dir / "a").string()});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("intercept.txt"), std::string::npos) << r.err;
  EXPECT_EQ(Cli({"report", "--run", (dir / "none").string()}).code, kExitValidation);
}

TEST(CliTest, CorruptInputExitsWithTwo) {
  const auto dir = testing::TempDir("cli_corrupt");
  std::ofstream(dir / "ssim.csv") << "wrong,header\n";
  EXPECT_EQ(Cli({"report", "--run", dir.string()}).code, kExitRuntime);
}

TEST(CliTest, HelpExitsWithZero) {
  const auto r = Cli({"--help"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("gendata"), std::string::npos);
}

TEST(GendataTest, WritesManifestAndRefusesOverwrite) {
  const auto dir = testing::TempDir("gendata");
  const auto out = dir / "data";
  auto r = Cli({"gendata", "--n", "12", "--sites", "4", "--size", "32", "--seed", "3", "--out", out.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("split=8/2/2"), std::string::npos) << r.out;
  for (int m = 0; m < 4; ++m) EXPECT_TRUE(fs::exists(out / "sample_0000" / fmt::format("mod_{}.ten", m)));
  const std::string manifest = Slurp(out / "manifest.txt");

  EXPECT_EQ(Cli({"gendata", "--n", "12", "--size", "32", "--out", out.string()}).code, kExitValidation);
  r = Cli({"gendata", "--n", "12", "--sites", "4", "--size", "32", "--seed", "3", "--out", out.string(), "--force"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(Slurp(out / "manifest.txt"), manifest);
  EXPECT_EQ(Slurp(out / "sample_0007" / "mod_2.ten").size(), kTenHeaderBytes + 32 * 32 * 4);
}

TEST(GendataTest, DefaultManifestSplit) {
  PhantomSet set;
  set.samples.resize(484);
  EXPECT_NE(PhantomManifest(set).find("split=338/49/97"), std::string::npos);
}

TEST(TrainTest, SplitRunWritesLayoutAndAudit) {
  const auto dir = testing::TempDir("train_split");
  const auto r = Cli(SmallRun(dir / "run"));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("site 3 encoder widths [8,8,16,32,64]"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("decoder skip inputs [32,32,64,128,256]"), std::string::npos);
  for (const char* f : {"config.txt", "metrics.csv", "checkpoints/final.ckpt", "dumps/intercept.txt",
                        "dumps/encoders.ckpt", "dumps/site_3_level_4.ten", "dumps/site_0_input.ten"}) {
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  }
  // 7 training samples at batch 4: the last of 2 iterations is intercepted.
  EXPECT_NE(Slurp(dir / "run" / "dumps" / "intercept.txt").find("iteration=2\n"), std::string::npos);
}

TEST(TrainTest, CentralBaselineRuns) {
  const auto dir = testing::TempDir("train_central");
  const auto r = Cli({"train", "--set", "variant=unet_central", "--set", "samples=10", "--set",
                      "image_size=32", "--set", "epochs=1", "--out", (dir / "run").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("unet_central: encoder widths [32,32,64,128,256]"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir / "run" / "metrics.csv"));
  EXPECT_FALSE(fs::exists(dir / "run" / "dumps"));
}

TEST(TrainTest, UsesGeneratedDataDirectory) {
  const auto dir = testing::TempDir("train_datadir");
  ASSERT_EQ(Cli({"gendata", "--n", "10", "--sites", "2", "--size", "32", "--out", (dir / "data").string()}).code,
            kExitOk);
  auto r = Cli({"train", "--set", "sites=2", "--set", "samples=10", "--set", "image_size=32", "--set",
                "epochs=1", "--set", "intercept=none", "--set", "data_dir=" + (dir / "data").string(),
                "--out", (dir / "run").string()});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  r = Cli({"train", "--set", "sites=4", "--set", "samples=10", "--set", "image_size=32", "--set",
           "data_dir=" + (dir / "data").string(), "--out", (dir / "bad").string()});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("modalities"), std::string::npos) << r.err;
}

TEST(AttackTest, SmokeRunAndReport) {
  const auto dir = testing::TempDir("attack_smoke");
  ASSERT_EQ(Cli(SmallRun(dir / "run")).code, kExitOk);
  const auto dumps = (dir / "run" / "dumps").string();
  auto r = Cli({"attack", "--dumps", dumps, "--steps", "1", "--out", (dir / "atk").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string csv = Slurp(dir / "atk" / "ssim.csv");
  // 4 sites x 5 levels x 3 samples in the final batch of 7.
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 60);
  EXPECT_TRUE(fs::exists(dir / "atk" / "gallery" / "site_2_level_3_sample_1.pgm"));
  EXPECT_TRUE(fs::exists(dir / "atk" / "inversions" / "site_0_level_0.ten"));
  EXPECT_TRUE(fs::exists(dir / "atk" / "config.txt"));

  r = Cli({"report", "--run", (dir / "atk").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string leak = Slurp(dir / "atk" / "leakage.csv");
  EXPECT_EQ(std::count(leak.begin(), leak.end(), '\n'), 1 + 20);

  r = Cli({"attack", "--dumps", dumps, "--steps", "1", "--levels", "7", "--out", (dir / "bad").string()});
  EXPECT_EQ(r.code, kExitValidation);
}

TEST(AttackTest, SelectsSitesAndLevels) {
  const auto dir = testing::TempDir("attack_select");
  ASSERT_EQ(Cli(SmallRun(dir / "run")).code, kExitOk);
  const auto r = Cli({"attack", "--dumps", (dir / "run" / "dumps").string(), "--steps", "2", "--levels",
                      "0,4", "--sites", "1", "--per-sample", "--out", (dir / "atk").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string csv = Slurp(dir / "atk" / "ssim.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 6);
  EXPECT_NE(csv.find("\n1,4,1,none,"), std::string::npos) << csv;
}

TEST(DeterminismTest, RerunsAreByteIdentical) {
  const auto dir = testing::TempDir("determinism");
  for (const char* run : {"a", "b"}) {
    auto args = SmallRun(dir / run);
    args.insert(args.end() - 2, {"--set", "noise_sigma=0.5", "--set", "dropout_p=0.2"});
    ASSERT_EQ(Cli(args).code, kExitOk);
    ASSERT_EQ(Cli({"attack", "--dumps", (dir / run / "dumps").string(), "--levels", "0,2", "--steps",
                   "3", "--out", (dir / run / "atk").string()})
                  .code,
              kExitOk);
  }
  for (const char* f : {"config.txt", "metrics.csv", "checkpoints/final.ckpt", "dumps/intercept.txt",
                        "dumps/site_1_level_2.ten", "dumps/encoders.ckpt", "atk/ssim.csv",
                        "atk/inversions/site_3_level_0.ten"}) {
    const std::string a = Slurp(dir / "a" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, Slurp(dir / "b" / f)) << f;
  }
  EXPECT_NE(Slurp(dir / "a" / "dumps" / "intercept.txt").find("defense=p=0.2;sigma=0.5"), std::string::npos);
}

TEST(SweepTest, WritesOneRunPerValue) {
  const auto dir = testing::TempDir("sweep");
  const auto r = Cli({"sweep", "--set", "samples=10", "--set", "image_size=32", "--set", "epochs=1",
                      "--set", "attack_steps=2", "--param", "noise_sigma", "--values", "0,1",
                      "--out", (dir / "sw").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string csv = Slurp(dir / "sw" / "sweep.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "noise_sigma,site,level,mean_ssim,val_dice");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 8);
  EXPECT_TRUE(fs::exists(dir / "sw" / "noise_sigma_1" / "attack" / "ssim.csv"));
  EXPECT_EQ(Cli({"report", "--run", (dir / "sw").string()}).code, kExitOk);
  EXPECT_EQ(Cli({"sweep", "--param", "lr", "--values", "1", "--out", (dir / "x").string()}).code,
            kExitValidation);
}

TEST(ListParsingTest, IntsAndReals) {
  EXPECT_EQ(ParseIntList("0,2,4"), (std::vector<int>{0, 2, 4}));
  EXPECT_EQ(ParseRealList("0,0.5,2"), (std::vector<double>{0, 0.5, 2}));
  EXPECT_THROW(ParseIntList("1,x"), std::invalid_argument);
  EXPECT_THROW(ParseRealList("1.5z"), std::invalid_argument);
}

}  // namespace
}  // namespace splitsim
