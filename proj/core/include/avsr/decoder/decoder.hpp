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
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "avsr/config.hpp"
#include "avsr/ctc/ctc.hpp"
#include "avsr/numcore/params.hpp"

namespace avsr::decoder {

using ctc::Label;
using ctc::LabelSeq;

inline constexpr std::size_t kUnboundedLookahead = std::numeric_limits<std::size_t>::max();

struct DecoderConfig {
  std::size_t layers = 1;
  std::size_t dim = 32;
  std::size_t heads = 2;
  std::size_t ff_dim = 64;
  std::size_t max_length = 64;  // longest label sequence the positional table covers
  /// Encoder frames visible beyond a trigger frame; kUnboundedLookahead = offline.
  std::size_t lookahead_tau = 12;
  double ctc_weight_lambda = 0.5;
  std::size_t beam = 4;
  /// CTC-only pre-pruning width applied before attention scoring (0 = off).
  std::size_t ctc_beam = 0;
  /// Early finalisation when p(end | prefix) exceeds this (0 = only at the last frame).
  double eos_threshold = 0.0;

  bool offline() const { return lookahead_tau == kUnboundedLookahead; }
  void validate() const;
  KeyValues to_kv(const std::string& prefix = "") const;
  static DecoderConfig from_kv(const KeyValues& kv, const std::string& prefix, const DecoderConfig& defaults);
};

struct Hypothesis {
  LabelSeq prefix;
  double ctc_log_score = ctc::kLogZero;
  double att_log_score = 0.0;
  std::vector<std::size_t> trigger_frames;
  double joint_score = ctc::kLogZero;
};

/// Transformer decoder over label tokens: id 0 is the start sentinel, ids
/// 1..V are labels (shared with the CTC vocabulary), id V+1 is the end sentinel.
class AttentionDecoder {
 public:
  AttentionDecoder(DecoderConfig cfg, std::size_t label_count, std::string prefix, ParamStore& store, Rng& rng);

  std::size_t output_size() const { return label_count_ + 2; }
  Label sos() const { return 0; }
  Label eos() const { return label_count_ + 1; }
  const DecoderConfig& config() const { return cfg_; }

  /// Logits [len(inputs), V+2] for teacher-forced inputs (starting with sos).
  Tensor forward(const Tensor& memory, const std::vector<std::size_t>& inputs) const;
  /// Mean per-token cross entropy of target+eos given sos+target, full memory.
  Tensor ce_loss(const Tensor& memory, const LabelSeq& target) const;
  /// Log-distribution over the next token after `prefix`, attending to memory
  /// rows [0, window_end) only. Evaluated without recording a graph.
  std::vector<double> next_log_probs(const Tensor& memory, const LabelSeq& prefix, std::size_t window_end) const;

 private:
  struct Block {
    Tensor self_ln_g, self_ln_b, sq, sbq, sk, sbk, sv, sbv, so, sbo;
    Tensor cross_ln_g, cross_ln_b, cq, cbq, ck, cbk, cv, cbv, co, cbo;
    Tensor ff_ln_g, ff_ln_b, w1, b1, w2, b2;
  };
  DecoderConfig cfg_;
  std::size_t label_count_;
  Tensor tok_, pos_, out_g_, out_b_, out_w_, out_b2_;
  std::vector<Block> blocks_;
};

/// Decoder cross entropy term of the joint objective.
Tensor decoder_ce(const AttentionDecoder& dec, const Tensor& joint_states, const LabelSeq& target);

/// Frame-synchronous triggered-attention decoding. CTC prefix beam search
/// proposes token extensions; a token first appended at frame t is scored by
/// the attention decoder over encoder frames [0, min(t + tau + 1, T)). Frames
/// are consumed only once their look-ahead has arrived, so pushing frames
/// incrementally and pushing them all at once give identical results.
class TriggeredAttentionDecoder {
 public:
  TriggeredAttentionDecoder(const AttentionDecoder& dec, DecoderConfig cfg);

  /// Appends posterior rows [n, V+1] and joint-state rows [n, D].
  void push(const Tensor& log_probs, const Tensor& joint_states);
  /// Marks end of input, consumes the remaining frames and scores the end sentinel.
  void finish();

  bool finished() const { return finished_; }
  std::size_t frames_received() const { return frames_; }
  std::size_t frames_processed() const { return processed_; }
  /// Best hypothesis so far (final ranking once finished).
  Hypothesis best() const;
  /// Current beam, best first.
  std::vector<Hypothesis> hypotheses() const;
  /// Longest prefix shared by every beam hypothesis; later output always extends it.
  LabelSeq committed_prefix() const;

 private:
  struct Entry {
    ctc::PrefixState ctc;
    double att = 0.0;
  };
  void process_frame(std::size_t t);
  std::size_t window_end(std::size_t t) const;
  Hypothesis to_hypothesis(const Entry& e) const;
  Tensor memory(std::size_t rows) const;

  const AttentionDecoder& dec_;
  DecoderConfig cfg_;
  std::size_t width_ = 0, dim_ = 0;
  std::vector<double> post_, states_;
  std::size_t frames_ = 0, processed_ = 0;
  bool finished_ = false;
  std::vector<Entry> beam_;
  std::vector<Hypothesis> ended_;
  std::vector<Hypothesis> final_;
};

Hypothesis ta_decode(const ctc::PosteriorMatrix& post, const Tensor& joint_states, const AttentionDecoder& dec,
                     const DecoderConfig& cfg);

/// Label-synchronous attention beam search with CTC prefix scores over the
/// full utterance.
Hypothesis offline_joint_decode(const ctc::PosteriorMatrix& post, const Tensor& joint_states,
                                const AttentionDecoder& dec, const DecoderConfig& cfg);

/// Σ log p_att(y_i | y_<i) + log p_att(end | y) over full memory.
double attention_sequence_score(const AttentionDecoder& dec, const Tensor& memory, const LabelSeq& labels);

}  // namespace avsr::decoder
