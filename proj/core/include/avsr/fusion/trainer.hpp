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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "avsr/config.hpp"
#include "avsr/fusion/fusion.hpp"
#include "avsr/synthdata/synthdata.hpp"

namespace avsr::fusion {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch = 8;
  double lr = 2e-3;
  std::size_t warmup_steps = 50;
  double weight_decay = 1e-4;
  double clip_norm = 5.0;
  /// "adamw" or "sgd".
  std::string optimizer = "adamw";
  /// Audio noise injection: per (epoch, utterance) SNR drawn from this set;
  /// empty disables injection.
  std::vector<double> noise_snr_choices{-5, 0, 5, 10, 15, 20, synthdata::kCleanSnr};
  double mask_rate_per_s = 1.0;  // 0 disables time masking
  double mask_max_ms = 400.0;
  /// Re-extract alignment targets before every step instead of once per epoch.
  bool realign_every_step = false;
  std::uint64_t seed = 1;

  void validate() const;
  KeyValues to_kv(const std::string& prefix = "") const;
  static TrainConfig from_kv(const KeyValues& kv, const std::string& prefix, const TrainConfig& d);
};

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::size_t utterances = 0;  // contributing to this step
  std::size_t skipped = 0;     // excluded (no usable alignment)
  LossBreakdown loss;          // means over contributing utterances
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::size_t skipped_total = 0;
  std::vector<std::string> skip_reasons;

  /// One JSON object per line.
  void write_jsonl(const std::filesystem::path& path, const std::string& run_config = "") const;
};

/// Augmented copy of an utterance for (seed, epoch): noise injection on the
/// audio stream and independent time masks per stream.
synthdata::Utterance augment(const synthdata::Utterance& u, std::size_t index, std::size_t epoch,
                             const TrainConfig& cfg, double frame_ms);

/// Per-step observer; returning false stops training early.
using StepHook = std::function<bool(const StepRecord&)>;

/// Pre-training of one stream: alpha * CTC + (1 - alpha) * decoder CE.
TrainLog pretrain(SingleStreamModel& model, const synthdata::Corpus& corpus, double alpha, const TrainConfig& cfg,
                  const StepHook& hook = {});

/// AV fine-tuning with the joint objective. Alignment targets come from the
/// head chosen by `mode`, refreshed each epoch (or each step).
TrainLog finetune(AvModel& model, const synthdata::Corpus& corpus, const JointLossConfig& loss, AlignSource mode,
                  const TrainConfig& cfg, const StepHook& hook = {});

/// Reference path that trains the AV model on the AV-head CTC loss alone,
/// building no decoder or alignment terms.
TrainLog train_ctc_only(AvModel& model, const synthdata::Corpus& corpus, const TrainConfig& cfg,
                        const StepHook& hook = {});

}  // namespace avsr::fusion
