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

// File layout of an intercept dump directory.

#pragma once

#include <filesystem>

#include <fmt/format.h>

namespace splitsim {

inline std::filesystem::path ActivationDumpPath(const std::filesystem::path& dir,
                                                int site, int level) {
  return dir / fmt::format("site_{}_level_{}.ten", site, level);
}

inline std::filesystem::path InputDumpPath(const std::filesystem::path& dir,
                                           int site) {
  return dir / fmt::format("site_{}_input.ten", site);
}

inline std::filesystem::path EncoderSnapshotPath(const std::filesystem::path& dir) {
  return dir / "encoders.ckpt";
}

inline std::filesystem::path InterceptInfoPath(const std::filesystem::path& dir) {
  return dir / "intercept.txt";
}

}  // namespace splitsim
