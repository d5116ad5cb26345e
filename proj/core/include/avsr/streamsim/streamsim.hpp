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
#include <optional>
#include <string>
#include <vector>

#include "avsr/decoder/decoder.hpp"
#include "avsr/encoder/encoder.hpp"
#include "avsr/fusion/fusion.hpp"
#include "avsr/synthdata/synthdata.hpp"

namespace avsr::streamsim {

/// Algorithmic delay only; compute time is not modelled.
struct LatencyBudget {
  double frontend_delay_ms_audio = 0, frontend_delay_ms_visual = 0;
  std::size_t encoder_lookahead_frames_audio = 0, encoder_lookahead_frames_visual = 0;
  std::size_t decoder_lookahead_frames = 0;
  double frame_ms = 40.0;

  double audio_encoder_ms = 0, visual_encoder_ms = 0;
  double encoder_ms = 0;  // max over streams
  double decoder_ms = 0;
  double end_to_end_ms = 0;
  /// Some stage waits for the end of the utterance; all totals are +inf.
  bool offline = false;
};

/// Encoder delay is front-end delay plus one full chunk of frames (the first
/// frame of a chunk waits for the last); the decoder adds tau frames.
LatencyBudget compute_latency(const encoder::EncoderConfig& audio, const encoder::EncoderConfig& visual,
                              const decoder::DecoderConfig& dec);
LatencyBudget compute_latency(const fusion::ModelConfig& cfg);

struct SessionEvent {
  std::size_t chunk_index = 0;
  std::size_t frames_received = 0;
  double ms_elapsed_algorithmic = 0.0;  // arrival time of the chunk's last frame plus front-end delay
  ctc::LabelSeq partial;                    // current best hypothesis
  ctc::LabelSeq committed;                  // shared by every live hypothesis
  double partial_score = 0.0;
  bool final = false;
};

struct SessionConfig {
  /// Arrival granularity in frames; 0 takes the audio encoder chunk (or the
  /// whole utterance for an offline encoder).
  std::size_t chunk_frames = 0;
  /// Decoder settings; defaults to the model's.
  std::optional<decoder::DecoderConfig> decoder;
  /// Called after each chunk with the wall-clock milliseconds it took.
  std::function<void(std::size_t chunk_index, double wall_ms)> on_chunk;
};

struct SessionResult {
  std::vector<SessionEvent> events;
  decoder::Hypothesis final;

  /// One record per event: chunk_index, ms_elapsed_algorithmic, partial_text, ...
  void write_jsonl(const std::filesystem::path& path, const ctc::Vocab& vocab,
                   const std::string& run_config = "") const;
};

/// Feeds both streams chunk by chunk, encodes completed chunks once and
/// caches them, and advances a triggered-attention decoder. The last event
/// carries the same hypothesis as batch_decode.
SessionResult run_streaming_session(const synthdata::Utterance& u, const fusion::AvModel& model,
                                    const SessionConfig& cfg = {});

/// Whole-utterance forward followed by ta_decode.
decoder::Hypothesis batch_decode(const synthdata::Utterance& u, const fusion::AvModel& model,
                                 const decoder::DecoderConfig& dec);

struct AuditConfig {
  std::size_t trials = 1000;
  std::size_t frames = 48;
  std::uint64_t seed = 11;
};

struct AuditReport {
  enum class Status { kPass, kFail, kSkipped };
  Status status = Status::kSkipped;
  std::size_t probes = 0;
  std::size_t violations = 0;
  /// First offending pair: perturbing frames past the horizon of `probe`
  /// changed output frame `frame`.
  std::optional<std::pair<std::size_t, std::size_t>> first_violation;
  std::string reason;

  bool passed() const { return status == Status::kPass; }
  std::string summary() const;
};

/// Random inputs, random probe frame p; every input frame beyond p's horizon
/// h (end of p's chunk, the later of the two streams) is perturbed, and the
/// joint states and AV posteriors of every frame whose own horizon is within
/// h must not change by a single bit.
/// An offline encoder is reported as skipped.
AuditReport causality_audit(const fusion::AvModel& model, const AuditConfig& cfg = {});

/// Rows [0, n) of the configured horizon for output frame t.
std::size_t horizon_end(const encoder::EncoderConfig& cfg, std::size_t frames, std::size_t t);

}  // namespace avsr::streamsim
