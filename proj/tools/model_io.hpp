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
#include <memory>
#include <string>

#include "avsr/fusion/fusion.hpp"
#include "avsr/numcore/checkpoint.hpp"
#include "avsr/synthdata/synthdata.hpp"

namespace avsr::cli {

/// "av", "a" or "v".
std::string model_kind(const fusion::AvModel&);
std::string model_kind(const fusion::SingleStreamModel& m);

/// Checkpoint config text: kind and model keys, then the run configuration
/// as comment lines (ignored on load, kept for provenance).
void save_model(const std::filesystem::path& path, const std::string& kind, const fusion::ModelConfig& cfg,
                const ParamStore& params, std::uint64_t seed, const std::string& run_config);

struct LoadedModel {
  std::string kind;
  fusion::ModelConfig config;
  std::uint64_t seed = 0;
  Checkpoint ckpt;
};

/// Missing or damaged files are DataErrors naming the path.
LoadedModel load_model(const std::filesystem::path& path);

/// Builds the model named by the checkpoint with `cfg` (which may differ from
/// the stored one in shape-free fields such as chunk size) and restores weights.
std::unique_ptr<fusion::AvModel> restore_av(const LoadedModel& m, const fusion::ModelConfig& cfg);
std::unique_ptr<fusion::SingleStreamModel> restore_single(const LoadedModel& m, const fusion::ModelConfig& cfg);

synthdata::Corpus load_corpus_dir(const std::filesystem::path& dir);

std::string commented(const std::string& text);

}  // namespace avsr::cli
