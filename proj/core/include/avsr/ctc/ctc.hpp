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
#include <map>
#include <span>
#include <string>
#include <vector>

#include "avsr/numcore/tensor.hpp"

namespace avsr::ctc {

using Label = std::size_t;
using LabelSeq = std::vector<Label>;

inline constexpr Label kBlank = 0;
/// Stand-in for log(0). Anything at or below half of it counts as zero mass.
inline constexpr double kLogZero = -1e30;

inline bool is_log_zero(double x) { return x <= 0.5 * kLogZero; }
double log_add(double a, double b);

/// Symbol table; id 0 is the blank and is never a target label.
class Vocab {
 public:
  explicit Vocab(std::vector<std::string> labels);
  /// Labels "a", "b", ... (then "a1", "b1", ... past 26).
  static Vocab letters(std::size_t count);

  std::size_t size() const { return symbols_.size(); }  // labels + blank
  std::size_t label_count() const { return symbols_.size() - 1; }
  const std::string& symbol(Label id) const;
  Label id(const std::string& symbol) const;
  const std::vector<std::string>& symbols() const { return symbols_; }

  /// Space-separated label symbols.
  LabelSeq encode(const std::string& text) const;
  std::string decode(std::span<const Label> labels) const;
  /// Frame-level rendering with "∅" for blank.
  std::string render_path(std::span<const Label> path) const;

 private:
  std::vector<std::string> symbols_;
  std::map<std::string, Label> index_;
};

/// Per-frame log-probabilities over blank + labels, T x (V+1).
struct PosteriorMatrix {
  Tensor log_probs;
  double frame_duration_ms = 40.0;

  std::size_t frames() const { return log_probs.rows(); }
  std::size_t width() const { return log_probs.cols(); }
  double at(std::size_t t, Label k) const { return log_probs.values()[t * width() + k]; }
  std::span<const double> row(std::size_t t) const {
    return log_probs.values().subspan(t * width(), width());
  }
  /// Throws ContractError unless every row log-sum-exps to 0 within tol.
  void validate(double tol = 1e-6) const;
};

struct AlignmentPath {
  LabelSeq labels;
  bool operator==(const AlignmentPath&) const = default;
};

/// Minimum frame count for a target: one per label plus a blank between repeats.
std::size_t min_frames(std::span<const Label> target);
bool feasible(std::span<const Label> target, std::size_t frames);

/// −log Σ over all alignments collapsing to `target`; differentiable w.r.t.
/// the log-probabilities. Throws InfeasibleTargetError if target cannot fit.
Tensor ctc_loss(const Tensor& log_probs, std::span<const Label> target);
inline Tensor ctc_loss(const PosteriorMatrix& post, std::span<const Label> target) {
  return ctc_loss(post.log_probs, target);
}

struct ForcedAlignment {
  AlignmentPath path;
  double log_prob = kLogZero;
};

/// Viterbi best path whose collapse equals `target`. Among equally probable
/// paths the lexicographically smallest label sequence wins, comparing frames
/// left to right with blank (id 0) before lower label ids.
ForcedAlignment forced_align(const PosteriorMatrix& post, std::span<const Label> target);

/// Merge repeats, then drop blanks.
LabelSeq collapse(std::span<const Label> path);
/// Frame at which each emitted token of `path` starts.
std::vector<std::size_t> token_start_frames(std::span<const Label> path);

/// One prefix of a frame-synchronous beam.
struct PrefixState {
  LabelSeq prefix;
  double log_pb = kLogZero;   // paths ending in blank
  double log_pnb = kLogZero;  // paths ending in the last label
  std::vector<std::size_t> triggers;

  double total() const { return log_add(log_pb, log_pnb); }
};

/// Result of extending a beam by one frame.
struct PrefixCandidate {
  PrefixState state;
  bool is_new = false;      // created at this frame by a label extension
  std::size_t parent = 0;   // beam index of the prefix it extends (when is_new)
  Label token = kBlank;     // the appended label (when is_new)
};

struct ExpandOptions {
  /// Labels whose log-probability at the frame is below this are not proposed
  /// as extensions; the default proposes every label.
  double token_min_logp = -1e300;
};

/// Standard prefix-merging CTC expansion of `beam` with frame `t`. Candidates
/// come back in a deterministic order: surviving beam prefixes first (in beam
/// order), then new prefixes by (parent, token).
std::vector<PrefixCandidate> expand_frame(const std::vector<PrefixState>& beam,
                                          std::span<const double> frame_logp, std::size_t t,
                                          const ExpandOptions& opts = {});

/// Initial beam: the empty prefix with probability one.
std::vector<PrefixState> initial_beam();

struct BeamHypothesis {
  LabelSeq labels;
  double log_score = kLogZero;
  std::vector<std::size_t> trigger_frames;
};

/// Frame-synchronous prefix beam search. Returns surviving hypotheses
/// best-first; zero-probability prefixes are dropped.
std::vector<BeamHypothesis> prefix_beam_search(const PosteriorMatrix& post, std::size_t beam,
                                               const ExpandOptions& opts = {});

/// Diagnostic trace of a beam search: retained probability mass after each frame.
std::vector<double> beam_mass_trace(const PosteriorMatrix& post, std::size_t beam);

/// Label-synchronous CTC prefix scores over the full utterance.
class PrefixScorer {
 public:
  explicit PrefixScorer(const PosteriorMatrix& post);

  struct State {
    std::vector<double> r_nb;  // per frame: prefix complete, last frame on its last label
    std::vector<double> r_b;   // per frame: prefix complete, last frame blank
    Label last = kBlank;
    bool empty = true;
  };

  State initial() const;
  /// log P(output starts with prefix+c) and the state of prefix+c.
  double extend(const State& s, Label c, State* next) const;
  /// log P(output equals prefix).
  double final_score(const State& s) const;

 private:
  const PosteriorMatrix& post_;
};

/// log P(target | post), computed without building a graph.
double sequence_log_prob(const PosteriorMatrix& post, std::span<const Label> target);

}  // namespace avsr::ctc
