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
#include <functional>
#include <map>
#include <vector>

#include "avsr/decoder/decoder.hpp"
#include "avsr/fusion/fusion.hpp"
#include "avsr/metrics/metrics.hpp"
#include "avsr/synthdata/synthdata.hpp"

// Glue between models, corpora and metrics shared by the command-line tool
// and the acceptance runs.
namespace avsr::pipeline {

/// Runs fn(i) for i in [0, n) on up to `workers` threads (0 = hardware
/// concurrency). Results must be written by index so ordering stays fixed.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

/// How hypotheses are searched.
enum class Search {
  kTriggered,   // frame-synchronous triggered attention (ta_decode)
  kLabelSync,   // label-synchronous offline joint search
};

struct DecodeOptions {
  decoder::DecoderConfig decoder;
  Search search = Search::kTriggered;
  std::size_t workers = 1;
};

struct Evaluation {
  std::vector<decoder::Hypothesis> hypotheses;  // corpus order
  metrics::WerAccumulator wer;
};

Evaluation evaluate(const fusion::AvModel& model, const synthdata::Corpus& corpus, const DecodeOptions& opt);
Evaluation evaluate(const fusion::SingleStreamModel& model, const synthdata::Corpus& corpus,
                    const DecodeOptions& opt);

/// The corpus with every utterance's audio re-mixed at `snr_db`.
synthdata::Corpus at_snr(const synthdata::Corpus& corpus, double snr_db);

/// Corpus WER in percent at each SNR.
template <typename Model>
std::map<double, double> wer_sweep(const Model& model, const synthdata::Corpus& corpus,
                                   const std::vector<double>& snrs, const DecodeOptions& opt) {
  std::map<double, double> out;
  for (double s : snrs) out[s] = 100.0 * evaluate(model, at_snr(corpus, s), opt).wer.rate();
  return out;
}

/// Forced alignments of the reference transcript on the AV, audio and visual
/// heads, compared token by token (V->AV and A->AV), keyed by the
/// utterance's SNR. `hyps`, when given, marks correctly recognised tokens.
metrics::OffsetAccumulator measure_offsets(const fusion::AvModel& model, const synthdata::Corpus& corpus,
                                           const std::vector<decoder::Hypothesis>* hyps = nullptr,
                                           std::size_t workers = 1);

/// Copies the encoder and CTC head of each pre-trained stream into the AV model.
std::size_t init_from_pretrained(fusion::AvModel& av, const fusion::SingleStreamModel& audio,
                                 const fusion::SingleStreamModel& visual);

}  // namespace avsr::pipeline
