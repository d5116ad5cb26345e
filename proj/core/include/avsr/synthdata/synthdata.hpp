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
#include <limits>
#include <string>
#include <vector>

#include "avsr/config.hpp"
#include "avsr/ctc/ctc.hpp"
#include "avsr/numcore/random.hpp"
#include "avsr/numcore/tensor.hpp"

namespace avsr::synthdata {

inline constexpr double kCleanSnr = std::numeric_limits<double>::infinity();

struct GenSpec {
  std::size_t labels = 16;
  std::size_t min_frames = 20;
  std::size_t max_frames = 60;
  double min_label_rate = 0.08;  // labels per frame
  double max_label_rate = 0.16;
  std::size_t audio_dim = 16;
  std::size_t visual_dim = 16;
  double audio_kernel_sigma = 0.6;   // frames
  double visual_kernel_sigma = 1.5;  // frames
  std::size_t max_lag_v = 3;         // lag_v ~ uniform{0..max_lag_v}
  /// Fraction of labels folded into confusable pairs, per stream. The two
  /// streams never share a pair.
  double confusable_fraction_a = 0.5;
  double confusable_fraction_v = 0.5;
  /// Audio SNR drawn uniformly per utterance; empty = clean audio.
  std::vector<double> snr_db_choices;
  double visual_snr_db = 6.0;
  double frame_ms = 40.0;
  /// Drives prototypes and confusable pairs; train and test corpora share it.
  std::uint64_t prototype_seed = 1234;
  /// Drives the utterances themselves.
  std::uint64_t seed = 1;

  void validate() const;
  KeyValues to_kv(const std::string& prefix = "") const;
  static GenSpec from_kv(const KeyValues& kv, const std::string& prefix, const GenSpec& defaults);
};

struct Utterance {
  std::string id;
  ctc::LabelSeq target;
  std::vector<std::size_t> event_frames;  // audio onset of each label
  Tensor stream_a;                        // T x audio_dim
  Tensor stream_v;                        // T x visual_dim
  Tensor noise_a;                         // unit noise used for audio mixing
  Tensor clean_a;
  double snr_db = kCleanSnr;
  std::size_t lag_v = 0;

  std::size_t frames() const { return stream_a.rows(); }
};

/// Per-label emission prototypes and the confusable pairs of each stream.
struct Prototypes {
  std::vector<std::vector<double>> audio;   // [labels+1][audio_dim], row 0 unused
  std::vector<std::vector<double>> visual;  // [labels+1][visual_dim]
  std::vector<std::pair<ctc::Label, ctc::Label>> pairs_a, pairs_v;
};
Prototypes make_prototypes(const GenSpec& spec);

struct Corpus {
  GenSpec spec;
  std::vector<Utterance> utterances;
};

/// Utterance i depends only on (spec, i), so corpora can be produced in any order.
Utterance generate_one(const GenSpec& spec, const Prototypes& protos, std::size_t index);
Corpus generate(const GenSpec& spec, std::size_t n);

/// Returns a copy of `u` whose audio is its clean audio mixed with its own
/// noise draw at `snr_db`.
Utterance with_snr(const Utterance& u, double snr_db);

/// clean + s * noise with s chosen so the power ratio equals snr_db.
/// snr_db = +inf returns clean unchanged.
std::vector<double> mix_at_snr(const std::vector<double>& clean, const std::vector<double>& noise, double snr_db);
double signal_power(const std::vector<double>& x);
double measured_snr_db(const std::vector<double>& clean, const std::vector<double>& mixed);

struct MaskSpan {
  std::size_t begin = 0, end = 0;  // frames [begin, end)
};
/// Zeroes whole frames: floor(seconds * rate) spans plus one more with
/// probability equal to the fractional part; widths uniform over
/// {0..max_ms/frame_ms} frames, placed fully inside the input.
Tensor time_mask(const Tensor& features, double frame_ms, double rate_per_s, double max_ms, Rng& rng,
                 std::vector<MaskSpan>* spans = nullptr);

/// Feature file: "AVSRFEAT", u32 version, u64 rows, u64 cols, rows*cols f64, all little-endian.
void write_features(const std::filesystem::path& path, const Tensor& m);
Tensor read_features(const std::filesystem::path& path);

/// Writes manifest.jsonl, genspec.cfg and features/<id>.{a,v}.bin under dir.
void save_corpus(const Corpus& corpus, const ctc::Vocab& vocab, const std::filesystem::path& dir,
                 const std::string& provenance = "");
Corpus load_corpus(const std::filesystem::path& dir, const ctc::Vocab& vocab);

}  // namespace avsr::synthdata
