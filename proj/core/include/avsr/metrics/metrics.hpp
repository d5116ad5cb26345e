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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avsr/ctc/ctc.hpp"

namespace avsr::metrics {

struct WerResult {
  std::size_t substitutions = 0, insertions = 0, deletions = 0;
  std::size_t ref_len = 0, hyp_len = 0;
  /// edits / |ref|; against an empty reference a nonempty hypothesis scores
  /// |hyp| / 1 and `undefined` is set.
  double wer = 0.0;
  bool undefined = false;

  std::size_t edits() const { return substitutions + insertions + deletions; }
};

WerResult wer(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);
WerResult wer(const ctc::LabelSeq& hyp, const ctc::LabelSeq& ref);
std::vector<std::string> split_words(const std::string& text);

/// For each reference position, whether a minimum-cost edit script keeps it
/// as an exact match (ties resolved toward matches, then substitutions).
std::vector<bool> correct_reference_tokens(const ctc::LabelSeq& hyp, const ctc::LabelSeq& ref);

/// Corpus-level error rate: total edits over total reference words.
struct WerAccumulator {
  std::size_t edits = 0, ref_words = 0, utterances = 0, undefined = 0;
  void add(const WerResult& r);
  double rate() const;  // 0 when no reference words were seen
};

struct TokenOffsets {
  std::vector<long long> deltas;  // frame(other) - frame(ref) per matched token
  bool collapse_mismatch = false;
  std::size_t matched = 0;

  double mean() const;
};

/// Start frame of each token in `other` minus that in `ref`; positive means
/// `other` emits later. When either path does not collapse to `target`,
/// tokens are paired by index up to the shorter collapse and the result is
/// flagged.
TokenOffsets response_offset(const ctc::AlignmentPath& ref, const ctc::AlignmentPath& other,
                             const ctc::LabelSeq& target);

/// Aggregates V->AV and A->AV offsets per SNR over all tokens and over
/// correctly recognised tokens only. Sums are kept in integers, so the
/// means do not depend on the order utterances arrive in.
struct OffsetAccumulator {
  struct Cell {
    long long sum_v = 0, sum_a = 0, abs_v = 0, abs_a = 0;
    std::size_t tokens = 0;
    long long sum_v_correct = 0, sum_a_correct = 0;
    std::size_t tokens_correct = 0;
    std::size_t utterances = 0, excluded = 0;
  };
  std::map<double, Cell> by_snr;

  /// `correct` marks recognised target tokens (may be empty: counts none).
  void add(double snr_db, const TokenOffsets& v_to_av, const TokenOffsets& a_to_av, const std::vector<bool>& correct);
};

struct OffsetReport {
  struct Row {
    double snr_db = 0;
    double mean_v_to_av = 0, mean_a_to_av = 0;
    double mean_abs_v_to_av = 0, mean_abs_a_to_av = 0;
    double mean_v_to_av_correct = 0, mean_a_to_av_correct = 0;
    std::size_t tokens = 0, tokens_correct = 0, utterances = 0, excluded = 0;
  };
  double mean_offset_v_to_av = 0, mean_offset_a_to_av = 0;
  double mean_abs_offset_v_to_av = 0, mean_abs_offset_a_to_av = 0;
  std::size_t utterance_count = 0, excluded_count = 0, token_count = 0;
  std::vector<Row> per_snr;
};
OffsetReport summarize(const OffsetAccumulator& acc);

/// One evaluated system for the report tables.
struct RunSummary {
  std::string name;
  bool present = true;
  std::map<double, double> wer_by_snr;  // percent
  std::optional<OffsetReport> offsets;
  std::string run_config;
};

struct ReportFiles {
  std::filesystem::path wer_table, offset_table, manifest;
  std::vector<std::filesystem::path> curves;
};

/// Writes wer_table.txt (runs x SNR), offset_table.txt (V->AV and A->AV rows
/// per run), curves/<run>.<metric>.dat two-column files and curves.manifest.
/// Absent runs are listed as such; no runs gives header-only files.
ReportFiles emit_report(const std::vector<RunSummary>& runs, const std::filesystem::path& dir);

std::string format_snr(double snr_db);

}  // namespace avsr::metrics
