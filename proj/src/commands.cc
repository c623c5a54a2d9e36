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

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "splitsim/intercept.h"
#include "splitsim/message.h"
#include "splitsim/ten_format.h"

namespace splitsim {

namespace fs = std::filesystem;

namespace {

void WriteText(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  WriteFileBytes(path, std::vector<uint8_t>(text.begin(), text.end()));
}

std::string ReadText(const fs::path& path) {
  const auto bytes = ReadFileBytes(path);
  return std::string(bytes.begin(), bytes.end());
}

std::map<std::string, std::string> ParseKeyValues(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

std::string JoinWidths(std::span<const int64_t> widths) {
  return fmt::format("[{}]", fmt::join(widths, ","));
}

void RequireFiles(const std::vector<fs::path>& paths) {
  std::vector<std::string> missing;
  for (const auto& p : paths) {
    if (!fs::exists(p)) missing.push_back(p.string());
  }
  if (!missing.empty()) {
    throw std::invalid_argument(fmt::format("missing files: {}", fmt::join(missing, ", ")));
  }
}

}  // namespace

std::vector<int> ParseIntList(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw std::invalid_argument(fmt::format("'{}' is not an integer list", text));
    }
  }
  return out;
}

std::vector<double> ParseRealList(const std::string& text) {
  std::vector<double> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw std::invalid_argument(fmt::format("'{}' is not a number list", text));
    }
  }
  return out;
}

std::string RunGendata(const GendataOptions& options, std::ostream& log) {
  if (options.out.empty()) throw std::invalid_argument("gendata needs --out");
  if (options.n < 10) throw std::invalid_argument(fmt::format("--n must be >= 10, got {}", options.n));
  if (options.sites < 1) throw std::invalid_argument("--sites must be >= 1");
  if (fs::exists(options.out) && !fs::is_empty(options.out)) {
    if (!options.force) {
      throw std::invalid_argument(fmt::format(
          "{} exists and is not empty; pass --force to overwrite", options.out.string()));
    }
    fs::remove_all(options.out);
  }
  const PhantomSet set = GenPhantoms(options.n, options.sites, options.size, options.seed);
  SavePhantomSet(options.out, set);
  const std::string manifest = PhantomManifest(set);
  fmt::print(log, "{}", manifest);
  return manifest;
}

PhantomSet LoadOrGenerateData(const ExperimentConfig& config) {
  const int modalities = config.sites;
  if (config.data_dir.empty()) {
    return GenPhantoms(config.samples, modalities, config.image_size, config.seed);
  }
  PhantomSet set = LoadPhantomSet(config.data_dir);
  std::vector<std::string> problems;
  if (set.num_modalities != modalities) {
    problems.push_back(fmt::format("data_dir has {} modalities, config wants {}",
                                   set.num_modalities, modalities));
  }
  if (set.size != config.image_size) {
    problems.push_back(fmt::format("data_dir images are {}x{}, config wants {}", set.size,
                                   set.size, config.image_size));
  }
  if (set.count() != config.samples) {
    problems.push_back(fmt::format("data_dir has {} samples, config wants {}", set.count(),
                                   config.samples));
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return set;
}

uint32_t TotalIterations(const ExperimentConfig& config, int64_t train_size) {
  const int64_t per_epoch = (train_size + config.batch_size - 1) / config.batch_size;
  return static_cast<uint32_t>(per_epoch * config.epochs);
}

TrainOutput RunTrain(const ExperimentConfig& config, const fs::path& out, std::ostream& log) {
  config.Validate();
  if (out.empty()) throw std::invalid_argument("train needs --out");
  const PhantomSet data = LoadOrGenerateData(config);
  const DatasetSplit split = SplitDataset(data.count(), data.seed);
  fs::create_directories(out);
  WriteText(out / "config.txt", config.ToText());
  fmt::print(log, "data: {} samples, split {}/{}/{}\n", data.count(), split.train.size(),
             split.val.size(), split.test.size());

  const ArchSpec arch;
  TrainOutput result;
  std::unique_ptr<Trainer> trainer;
  Simulation* sim = nullptr;
  if (config.variant == ModelVariant::kUNetCentral) {
    ArchSpec central = arch;
    central.in_channels = config.sites;
    UNet model = BuildDefaultUNet(central, config.seed);
    fmt::print(log, "unet_central: encoder widths {}, {} parameters\n",
               JoinWidths(model.encoder.widths()), CountParameters(model.Parameters()));
    trainer = std::make_unique<CentralTrainer>(std::move(model), &data, config.seed, config.lr);
  } else {
    const ProtocolOptions options = config.protocol();
    SplitModel model = BuildSplit(arch, options.split, config.seed);
    for (size_t k = 0; k < model.encoders.size(); ++k) {
      fmt::print(log, "site {} encoder widths {}\n", k, JoinWidths(model.encoders[k].widths()));
    }
    fmt::print(log, "decoder skip inputs {}\n", JoinWidths(model.decoder.skip_widths()));
    fmt::print(log, "{} parameters, defense {}\n", CountParameters(model.Parameters()),
               options.guard.Label());
    auto owned = std::make_unique<Simulation>(std::move(model), &data, options);
    sim = owned.get();
    if (config.intercept != InterceptWhen::kNone) {
      const uint32_t at = config.intercept == InterceptWhen::kFirst
                              ? 1
                              : TotalIterations(config, static_cast<int64_t>(split.train.size()));
      result.dumps = out / "dumps";
      sim->InterceptAt(at, AllTaps(options.split), result.dumps);
      fmt::print(log, "intercepting iteration {}\n", at);
    }
    trainer = std::move(owned);
  }

  TrainOptions train;
  train.epochs = config.epochs;
  train.batch_size = config.batch_size;
  train.seed = config.seed;
  result.history = Train(*trainer, split, train, [&log](const EpochMetrics& m) {
    fmt::print(log, "epoch {}: train loss {:.4f} dice {:.4f} | val loss {:.4f} dice {:.4f}\n",
               m.epoch, m.train_loss, m.train_dice.mean, m.val_loss, m.val_dice.mean);
  });
  WriteText(out / "metrics.csv", MetricsCsv(result.history));
  fs::create_directories(out / "checkpoints");
  SaveCheckpoint(out / "checkpoints" / "final.ckpt",
                 {{"sites", std::to_string(config.sites)},
                  {"variant", std::string(ToString(config.variant))},
                  {"iteration", std::to_string(trainer->iteration())}},
                 trainer->Parameters());
  if (sim) {
    fmt::print(log, "transport carried {} bytes\n", sim->transport().bytes_sent());
  }
  return result;
}

SweepOutput RunAttack(const ExperimentConfig& config, const AttackOptions& options,
                      std::ostream& log) {
  config.Validate();
  if (options.out.empty()) throw std::invalid_argument("attack needs --out");
  RequireFiles({InterceptInfoPath(options.dumps)});
  const auto info = ParseKeyValues(ReadText(InterceptInfoPath(options.dumps)));
  std::set<int> tapped_sites, tapped_levels;
  std::set<std::pair<int, int>> taps;
  if (auto it = info.find("taps"); it != info.end()) {
    std::stringstream in(it->second);
    std::string item;
    while (std::getline(in, item, ',')) {
      const auto colon = item.find(':');
      if (colon == std::string::npos) continue;
      const int s = std::stoi(item.substr(0, colon));
      const int l = std::stoi(item.substr(colon + 1));
      taps.insert({s, l});
      tapped_sites.insert(s);
      tapped_levels.insert(l);
    }
  }
  SweepOptions sweep;
  sweep.sites = options.sites.empty()
                    ? std::vector<int>(tapped_sites.begin(), tapped_sites.end())
                    : options.sites;
  sweep.levels = options.levels.empty()
                     ? std::vector<int>(tapped_levels.begin(), tapped_levels.end())
                     : options.levels;
  sweep.per_sample = options.per_sample;
  sweep.snapshot = options.checkpoint;
  sweep.defense = info.count("defense") ? info.at("defense") : "none";
  if (sweep.sites.empty() || sweep.levels.empty()) {
    throw std::invalid_argument("nothing to attack: no sites or levels selected");
  }
  std::vector<std::string> not_shared;
  for (int s : sweep.sites) {
    for (int l : sweep.levels) {
      if (!taps.count({s, l})) not_shared.push_back(fmt::format("site {} level {}", s, l));
    }
  }
  if (!not_shared.empty()) {
    throw std::invalid_argument(fmt::format("not intercepted in {}: {}",
                                            options.dumps.string(),
                                            fmt::join(not_shared, ", ")));
  }

  const AttackConfig attack = config.attack();
  fs::create_directories(options.out);
  WriteText(options.out / "config.txt", config.ToText());
  SweepOutput result = LevelSweep(options.dumps, sweep, attack);

  fs::create_directories(options.out / "gallery");
  fs::create_directories(options.out / "inversions");
  for (const auto& r : result.results) {
    SaveTen(options.out / "inversions" / fmt::format("site_{}_level_{}.ten", r.site, r.level),
            r.recovered);
    for (int64_t b = 0; b < r.recovered.shape().b; ++b) {
      ExportPgm(options.out / "gallery" /
                    fmt::format("site_{}_level_{}_sample_{}.pgm", r.site, r.level, b),
                r.recovered, b);
    }
  }
  for (int s : sweep.sites) {
    const Tensor original = LoadTen(InputDumpPath(options.dumps, s));
    for (int64_t b = 0; b < original.shape().b; ++b) {
      ExportPgm(options.out / "gallery" / fmt::format("site_{}_input_sample_{}.pgm", s, b),
                original, b);
    }
  }
  WriteText(options.out / "ssim.csv", SsimCsv(result.scores));
  for (size_t i = 0; i < result.results.size(); ++i) {
    const auto& r = result.results[i];
    const auto& s = result.scores[i];
    double mean = 0.0;
    for (double v : s.per_sample) mean += v;
    mean /= static_cast<double>(s.per_sample.size());
    fmt::print(log, "site {} level {}: ssim {:.4f}, loss {:.4g} -> {:.4g}\n", r.site, r.level,
               mean, r.initial_loss, r.final_loss);
  }
  return result;
}

std::vector<SweepRow> RunSweep(const ExperimentConfig& base, const std::string& param,
                               const std::vector<double>& values,
                               const std::vector<int>& levels, const fs::path& out,
                               std::ostream& log) {
  if (param != "dropout_p" && param != "noise_sigma") {
    throw std::invalid_argument(
        fmt::format("--param must be dropout_p or noise_sigma, got '{}'", param));
  }
  if (values.empty()) throw std::invalid_argument("--values must list at least one value");
  if (base.variant == ModelVariant::kUNetCentral) {
    throw std::invalid_argument("sweeps need a split variant");
  }
  base.Validate();
  fs::create_directories(out);
  WriteText(out / "config.txt", base.ToText());

  std::vector<SweepRow> rows;
  std::vector<InversionScore> all_scores;
  for (double v : values) {
    ExperimentConfig cfg = base;
    SetConfigValue(cfg, param, FormatDouble(v));
    if (cfg.intercept == InterceptWhen::kNone) cfg.intercept = InterceptWhen::kLast;
    cfg.Validate();
    const fs::path run = out / fmt::format("{}_{}", param, FormatDouble(v));
    fmt::print(log, "== {} = {}\n", param, FormatDouble(v));
    const TrainOutput trained = RunTrain(cfg, run, log);
    AttackOptions attack;
    attack.dumps = trained.dumps;
    attack.levels = levels;
    attack.out = run / "attack";
    const SweepOutput inv = RunAttack(cfg, attack, log);
    const double dice = trained.history.back().val_dice.mean;
    for (const auto& s : inv.scores) {
      double mean = 0.0;
      for (double x : s.per_sample) mean += x;
      mean /= static_cast<double>(s.per_sample.size());
      rows.push_back({v, s.site, s.level, mean, dice});
      all_scores.push_back(s);
    }
  }
  std::string csv = fmt::format("{},site,level,mean_ssim,val_dice\n", param);
  for (const auto& r : rows) {
    csv += fmt::format("{},{},{},{},{}\n", FormatDouble(r.value), r.site, r.level,
                       FormatDouble(r.mean_ssim), FormatDouble(r.val_dice));
  }
  WriteText(out / "sweep.csv", csv);
  WriteText(out / "ssim.csv", SsimCsv(all_scores));
  fmt::print(log, "{}", BuildLeakageReport(all_scores).Summary());
  return rows;
}

LeakageReport RunReport(const fs::path& run, std::ostream& log) {
  const fs::path ssim = run / "ssim.csv";
  RequireFiles({ssim});
  std::istringstream in(ReadText(ssim));
  std::string line;
  std::getline(in, line);
  if (line != "site,level,sample,defense,ssim") {
    throw FormatError(ssim.string() + ": unexpected header '" + line + "'");
  }
  std::map<std::tuple<int, int, std::string>, InversionScore> grouped;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cols.push_back(c);
    if (cols.size() != 5) {
      throw FormatError(fmt::format("{}:{}: expected 5 columns", ssim.string(), line_no));
    }
    try {
      const int site = std::stoi(cols[0]);
      const int level = std::stoi(cols[1]);
      auto& score = grouped[{site, level, cols[3]}];
      score.site = site;
      score.level = level;
      score.defense = cols[3];
      score.per_sample.push_back(std::stod(cols[4]));
    } catch (const std::logic_error&) {
      throw FormatError(fmt::format("{}:{}: malformed row", ssim.string(), line_no));
    }
  }
  std::vector<InversionScore> scores;
  for (auto& [key, s] : grouped) scores.push_back(std::move(s));
  LeakageReport report = BuildLeakageReport(scores);
  WriteText(run / "leakage.csv", report.ToCsv());
  fmt::print(log, "{}", report.Summary());
  if (fs::exists(run / "metrics.csv")) {
    std::istringstream m(ReadText(run / "metrics.csv"));
    std::string last_val;
    while (std::getline(m, line)) {
      if (line.find(",val,") != std::string::npos) last_val = line;
    }
    if (!last_val.empty()) fmt::print(log, "final validation row: {}\n", last_val);
  }
  return report;
}

int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Split-learning simulator: phantom data, split training, inversion attacks"};
  app.require_subcommand(1);

  GendataOptions gen;
  auto* gendata = app.add_subcommand("gendata", "Generate a phantom dataset directory");
  gendata->add_option("--n", gen.n, "Number of samples")->capture_default_str();
  gendata->add_option("--sites", gen.sites, "Modalities per sample")->capture_default_str();
  gendata->add_option("--size", gen.size, "Image size (multiple of 16)")->capture_default_str();
  gendata->add_option("--seed", gen.seed, "Generation seed")->capture_default_str();
  gendata->add_option("--out", gen.out, "Output directory")->required();
  gendata->add_flag("--force", gen.force, "Overwrite a non-empty output directory");

  std::string config_path;
  std::vector<std::string> overrides;
  fs::path out_dir;
  auto* train = app.add_subcommand("train", "Train a split or centralized model");
  train->add_option("--config", config_path, "Experiment config file");
  train->add_option("--set", overrides, "key=value override, repeatable");
  train->add_option("--out", out_dir, "Output directory")->required();

  AttackOptions atk;
  std::string levels_text, sites_text;
  std::optional<int64_t> steps;
  std::optional<uint64_t> seed;
  auto* attack = app.add_subcommand("attack", "Invert intercepted activations");
  attack->add_option("--dumps", atk.dumps, "Intercept dump directory")->required();
  attack->add_option("--checkpoint", atk.checkpoint, "Encoder snapshot to attack with");
  attack->add_option("--levels", levels_text, "Comma-separated levels");
  attack->add_option("--sites", sites_text, "Comma-separated sites");
  attack->add_option("--steps", steps, "Optimizer steps");
  attack->add_option("--seed", seed, "Attack seed");
  attack->add_option("--config", config_path, "Config file for attack weights");
  attack->add_flag("--per-sample", atk.per_sample, "Invert each sample separately");
  attack->add_option("--out", atk.out, "Output directory")->required();

  std::string param, values_text;
  auto* sweep = app.add_subcommand("sweep", "Defense sweep: train, intercept, attack per value");
  sweep->add_option("--config", config_path, "Base experiment config file");
  sweep->add_option("--set", overrides, "key=value override, repeatable");
  sweep->add_option("--param", param, "dropout_p or noise_sigma")->required();
  sweep->add_option("--values", values_text, "Comma-separated values")->required();
  sweep->add_option("--levels", levels_text, "Levels to attack (default 0)");
  sweep->add_option("--out", out_dir, "Output directory")->required();

  fs::path run_dir;
  auto* report = app.add_subcommand("report", "Summarize leakage from a run's ssim.csv");
  report->add_option("--run", run_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  auto load_config = [&]() {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = LoadConfig(config_path);
    std::vector<std::string> problems;
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) {
        problems.push_back(fmt::format("--set '{}' is not key=value", kv));
        continue;
      }
      try {
        SetConfigValue(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      } catch (const ConfigError& e) {
        for (const auto& p : e.problems()) problems.push_back(p);
      }
    }
    for (auto& p : cfg.Problems()) problems.push_back(std::move(p));
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return cfg;
  };

  try {
    if (*gendata) {
      RunGendata(gen, out);
    } else if (*train) {
      RunTrain(load_config(), out_dir, out);
    } else if (*attack) {
      ExperimentConfig cfg = load_config();
      if (steps) cfg.attack_steps = *steps;
      if (seed) cfg.seed = *seed;
      if (!levels_text.empty()) atk.levels = ParseIntList(levels_text);
      if (!sites_text.empty()) atk.sites = ParseIntList(sites_text);
      RunAttack(cfg, atk, out);
    } else if (*sweep) {
      const auto levels = levels_text.empty() ? std::vector<int>{0} : ParseIntList(levels_text);
      RunSweep(load_config(), param, ParseRealList(values_text), levels, out_dir, out);
    } else if (*report) {
      RunReport(run_dir, out);
    }
  } catch (const ConfigError& e) {
    fmt::print(err, "configuration errors:\n");
    for (const auto& p : e.problems()) fmt::print(err, "  {}\n", p);
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitValidation;
  } catch (const ProtocolError& e) {
    fmt::print(err, "protocol error: {}\n", e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace splitsim
