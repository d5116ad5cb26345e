// Copyright 2026 The avsr-stream Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "avsr/numcore/params.hpp"

namespace avsr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// On-disk layout (all integers little-endian):
///   "AVSRCKPT" | u32 version | u64 seed | u64 config_len | config bytes
///   | u64 count | count x { u64 name_len | name | u64 rank | rank x u64 extent
///   | numel x f64 }
struct Checkpoint {
  std::uint64_t seed = 0;
  std::string config;  // serialized run configuration
  ParamStore params;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Overwrites values of `dst` from `src`; every name in dst must exist in src.
void restore_params(ParamStore& dst, const ParamStore& src);

}  // namespace avsr
