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

// Experiment commands behind the splitsim command line.
//
// Output layout under --out: config.txt, metrics.csv, ssim.csv,
// checkpoints/, dumps/, gallery/.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "splitsim/attack.h"
#include "splitsim/config.h"
#include "splitsim/data.h"
#include "splitsim/slproto.h"

namespace splitsim {

enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 1,
  kExitRuntime = 2,
};

struct GendataOptions {
  int64_t n = 484;
  int sites = 4;
  int64_t size = 96;
  uint64_t seed = 0;
  std::filesystem::path out;
  bool force = false;
};

// Writes a phantom set directory and returns its manifest text.
std::string RunGendata(const GendataOptions& options, std::ostream& log);

// Loads `config.data_dir` or generates phantoms in memory.
PhantomSet LoadOrGenerateData(const ExperimentConfig& config);

// Number of protocol iterations a training run performs.
uint32_t TotalIterations(const ExperimentConfig& config, int64_t train_size);

struct TrainOutput {
  std::vector<EpochMetrics> history;
  std::filesystem::path dumps;  // empty when nothing was intercepted
};

TrainOutput RunTrain(const ExperimentConfig& config, const std::filesystem::path& out,
                     std::ostream& log);

struct AttackOptions {
  std::filesystem::path dumps;
  std::filesystem::path checkpoint;  // defaults to the dump's encoder snapshot
  std::vector<int> levels;           // defaults to every intercepted level
  std::vector<int> sites;            // defaults to every intercepted site
  bool per_sample = false;
  std::filesystem::path out;
};

SweepOutput RunAttack(const ExperimentConfig& config, const AttackOptions& options,
                      std::ostream& log);

struct SweepRow {
  double value = 0.0;
  int site = 0;
  int level = 0;
  double mean_ssim = 0.0;
  double val_dice = 0.0;
};

// One short training run, intercept and attack per value of `param`
// (dropout_p or noise_sigma).
std::vector<SweepRow> RunSweep(const ExperimentConfig& base, const std::string& param,
                               const std::vector<double>& values,
                               const std::vector<int>& levels,
                               const std::filesystem::path& out, std::ostream& log);

// Leakage report from <run>/ssim.csv; also writes <run>/leakage.csv.
LeakageReport RunReport(const std::filesystem::path& run, std::ostream& log);

// Parses "a,b,c" lists.
std::vector<int> ParseIntList(const std::string& text);
std::vector<double> ParseRealList(const std::string& text);

// Full command line entry point; returns the exit status.
int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace splitsim
