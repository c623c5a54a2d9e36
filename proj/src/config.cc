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

#include "splitsim/config.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "splitsim/ten_format.h"

namespace splitsim {

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::invalid_argument(fmt::format("invalid configuration: {}",
                                        fmt::join(problems, "; "))),
      problems_(std::move(problems)) {}

std::string_view ToString(ModelVariant variant) {
  switch (variant) {
    case ModelVariant::kUNetCentral:
      return "unet_central";
    case ModelVariant::kSplitAllSkips:
      return "split_all_skips";
    case ModelVariant::kSplitNoSkips:
      return "split_no_skips";
    case ModelVariant::kSplitX3X4:
      return "split_x3_x4";
  }
  return "?";
}

ModelVariant ParseModelVariant(std::string_view name) {
  for (auto v : {ModelVariant::kUNetCentral, ModelVariant::kSplitAllSkips,
                 ModelVariant::kSplitNoSkips, ModelVariant::kSplitX3X4}) {
    if (ToString(v) == name) return v;
  }
  throw std::invalid_argument(fmt::format(
      "unknown variant '{}' (expected unet_central, split_all_skips, "
      "split_no_skips or split_x3_x4)",
      name));
}

SkipVariant ToSkipVariant(ModelVariant variant) {
  switch (variant) {
    case ModelVariant::kSplitNoSkips:
      return SkipVariant::kNoSkips;
    case ModelVariant::kSplitX3X4:
      return SkipVariant::kX3X4Only;
    default:
      return SkipVariant::kAllSkips;
  }
}

namespace {

std::string_view Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T ParseInt(std::string_view key, std::string_view value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError({fmt::format("{}: '{}' is not a valid integer", key, value)});
  }
  return out;
}

double ParseReal(std::string_view key, std::string_view value) {
  const std::string s(value);
  size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(out)) {
    throw ConfigError({fmt::format("{}: '{}' is not a valid number", key, value)});
  }
  return out;
}

bool ParseBool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError({fmt::format("{}: '{}' is not true or false", key, value)});
}

InterceptWhen ParseIntercept(std::string_view value) {
  if (value == "none") return InterceptWhen::kNone;
  if (value == "first") return InterceptWhen::kFirst;
  if (value == "last") return InterceptWhen::kLast;
  throw ConfigError({fmt::format("intercept: '{}' is not none, first or last", value)});
}

std::string_view ToString(InterceptWhen when) {
  switch (when) {
    case InterceptWhen::kNone:
      return "none";
    case InterceptWhen::kFirst:
      return "first";
    case InterceptWhen::kLast:
      return "last";
  }
  return "?";
}

}  // namespace

void SetConfigValue(ExperimentConfig& c, std::string_view key, std::string_view value) {
  if (key == "sites") {
    c.sites = ParseInt<int>(key, value);
  } else if (key == "variant") {
    try {
      c.variant = ParseModelVariant(value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError({fmt::format("variant: {}", e.what())});
    }
  } else if (key == "dropout_p") {
    c.dropout_p = ParseReal(key, value);
  } else if (key == "noise_sigma") {
    c.noise_sigma = ParseReal(key, value);
  } else if (key == "batch_size") {
    c.batch_size = ParseInt<int64_t>(key, value);
  } else if (key == "epochs") {
    c.epochs = ParseInt<int>(key, value);
  } else if (key == "seed") {
    c.seed = ParseInt<uint64_t>(key, value);
  } else if (key == "image_size") {
    c.image_size = ParseInt<int64_t>(key, value);
  } else if (key == "samples") {
    c.samples = ParseInt<int64_t>(key, value);
  } else if (key == "lr") {
    c.lr = ParseReal(key, value);
  } else if (key == "data_dir") {
    c.data_dir = std::string(value);
  } else if (key == "intercept") {
    c.intercept = ParseIntercept(value);
  } else if (key == "attack_steps") {
    c.attack_steps = ParseInt<int64_t>(key, value);
  } else if (key == "attack_lr") {
    c.attack_lr = ParseReal(key, value);
  } else if (key == "alpha_act") {
    c.alpha_act = ParseReal(key, value);
  } else if (key == "alpha_tv") {
    c.alpha_tv = ParseReal(key, value);
  } else if (key == "alpha_l2") {
    c.alpha_l2 = ParseReal(key, value);
  } else if (key == "squared_norms") {
    c.squared_norms = ParseBool(key, value);
  } else if (key == "threaded") {
    c.threaded = ParseBool(key, value);
  } else {
    throw ConfigError({fmt::format("unknown key '{}'", key)});
  }
}

std::vector<std::string> ExperimentConfig::Problems() const {
  std::vector<std::string> p;
  if (sites < 1 || sites > 255) p.push_back(fmt::format("sites must lie in [1, 255], got {}", sites));
  if (sites >= 1 && variant != ModelVariant::kUNetCentral) {
    for (int64_t w : ArchSpec{}.encoder_widths()) {
      if (w % sites != 0) {
        p.push_back(fmt::format("sites={} does not divide encoder width {}", sites, w));
        break;
      }
    }
  }
  if (!(dropout_p >= 0.0) || dropout_p >= 1.0) {
    p.push_back(fmt::format("dropout_p must lie in [0, 1), got {}", dropout_p));
  }
  if (!(noise_sigma >= 0.0)) p.push_back(fmt::format("noise_sigma must be >= 0, got {}", noise_sigma));
  if (variant == ModelVariant::kUNetCentral && (dropout_p != 0.0 || noise_sigma != 0.0)) {
    p.push_back("unet_central shares nothing, so dropout_p and noise_sigma must be 0");
  }
  if (batch_size < 1) p.push_back(fmt::format("batch_size must be >= 1, got {}", batch_size));
  if (epochs < 1) p.push_back(fmt::format("epochs must be >= 1, got {}", epochs));
  if (image_size < 16 || image_size % 16 != 0) {
    p.push_back(fmt::format("image_size must be a positive multiple of 16, got {}", image_size));
  }
  if (samples < 10) p.push_back(fmt::format("samples must be >= 10, got {}", samples));
  if (!(lr > 0.0)) p.push_back(fmt::format("lr must be > 0, got {}", lr));
  if (attack_steps < 1) p.push_back(fmt::format("attack_steps must be >= 1, got {}", attack_steps));
  if (!(attack_lr > 0.0)) p.push_back(fmt::format("attack_lr must be > 0, got {}", attack_lr));
  if (!(alpha_act >= 0.0)) p.push_back(fmt::format("alpha_act must be >= 0, got {}", alpha_act));
  if (!(alpha_tv >= 0.0)) p.push_back(fmt::format("alpha_tv must be >= 0, got {}", alpha_tv));
  if (!(alpha_l2 >= 0.0)) p.push_back(fmt::format("alpha_l2 must be >= 0, got {}", alpha_l2));
  return p;
}

void ExperimentConfig::Validate() const {
  auto p = Problems();
  if (!p.empty()) throw ConfigError(std::move(p));
}

AttackConfig ExperimentConfig::attack() const {
  AttackConfig a;
  a.alpha_act = alpha_act;
  a.alpha_tv = alpha_tv;
  a.alpha_l2 = alpha_l2;
  a.steps = attack_steps;
  a.initial_rate = attack_lr;
  a.squared_norms = squared_norms;
  a.seed = seed;
  return a;
}

ProtocolOptions ExperimentConfig::protocol() const {
  ProtocolOptions o;
  o.split.num_sites = sites;
  o.split.skip_variant = ToSkipVariant(variant);
  o.guard = guard();
  o.seed = seed;
  o.lr = lr;
  o.schedule = threaded ? Schedule::kThreaded : Schedule::kSequential;
  return o;
}

std::string ExperimentConfig::ToText() const {
  std::string out;
  auto put = [&out](std::string_view k, const std::string& v) {
    out += fmt::format("{} = {}\n", k, v);
  };
  put("sites", std::to_string(sites));
  put("variant", std::string(ToString(variant)));
  put("dropout_p", FormatDouble(dropout_p));
  put("noise_sigma", FormatDouble(noise_sigma));
  put("batch_size", std::to_string(batch_size));
  put("epochs", std::to_string(epochs));
  put("seed", std::to_string(seed));
  put("image_size", std::to_string(image_size));
  put("samples", std::to_string(samples));
  put("lr", FormatDouble(lr));
  put("data_dir", data_dir);
  put("intercept", std::string(ToString(intercept)));
  put("attack_steps", std::to_string(attack_steps));
  put("attack_lr", FormatDouble(attack_lr));
  put("alpha_act", FormatDouble(alpha_act));
  put("alpha_tv", FormatDouble(alpha_tv));
  put("alpha_l2", FormatDouble(alpha_l2));
  put("squared_norms", squared_norms ? "true" : "false");
  put("threaded", threaded ? "true" : "false");
  return out;
}

ExperimentConfig ParseConfig(std::string_view text) {
  ExperimentConfig config;
  std::vector<std::string> problems;
  std::set<std::string, std::less<>> seen;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      problems.push_back(fmt::format("line {}: expected key = value", line_no));
      continue;
    }
    const auto key = Trim(line.substr(0, eq));
    const auto value = Trim(line.substr(eq + 1));
    if (!seen.insert(std::string(key)).second) {
      problems.push_back(fmt::format("line {}: duplicate key '{}'", line_no, key));
      continue;
    }
    try {
      SetConfigValue(config, key, value);
    } catch (const ConfigError& e) {
      for (const auto& p : e.problems()) problems.push_back(fmt::format("line {}: {}", line_no, p));
    }
  }
  for (auto& p : config.Problems()) problems.push_back(std::move(p));
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return config;
}

ExperimentConfig LoadConfig(const std::string& path) {
  const auto bytes = ReadFileBytes(path);
  return ParseConfig(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace splitsim
