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
#include <optional>
#include <string>
#include <vector>

#include "avsr/config.hpp"
#include "avsr/ctc/ctc.hpp"
#include "avsr/decoder/decoder.hpp"
#include "avsr/encoder/encoder.hpp"
#include "avsr/numcore/params.hpp"

namespace avsr::fusion {

using ctc::LabelSeq;
using encoder::EncoderConfig;
using encoder::EncoderStates;
using encoder::Stream;

/// Which head supplies the forced alignment, and which heads it supervises.
enum class AlignSource {
  kNone,  // no alignment regularisation
  kAv,    // joint AV head -> both single-stream heads
  kA2V,   // audio head -> visual head
  kV2A,   // visual head -> audio head
};
AlignSource parse_align_source(const std::string& s);
const char* align_source_name(AlignSource s);

enum class Freeze { kNone, kAudio, kVisual, kBoth };
Freeze parse_freeze(const std::string& s);
const char* freeze_name(Freeze f);

struct FusionConfig {
  std::size_t hidden = 64;
  std::size_t dim = 32;  // joint state width; the decoder reads this
};

struct JointLossConfig {
  double alpha = 0.3;
  double beta_av2a = 0.1;
  double beta_av2v = 0.1;
  /// Restrict alignment CE to frames whose target is a label (ablation).
  bool label_frames_only = false;

  void validate() const;
  KeyValues to_kv(const std::string& prefix = "") const;
  static JointLossConfig from_kv(const KeyValues& kv, const std::string& prefix, const JointLossConfig& d);
};

struct LossBreakdown {
  double l_ctc = 0.0;
  double l_ce_decoder = 0.0;
  double l_align_av2a = 0.0;
  double l_align_av2v = 0.0;
  double total = 0.0;
};

struct ModelConfig {
  std::size_t labels = 16;
  EncoderConfig audio;
  EncoderConfig visual;
  FusionConfig fusion;
  decoder::DecoderConfig decoder;

  ModelConfig();
  void validate() const;
  KeyValues to_kv() const;
  static ModelConfig from_kv(const KeyValues& kv, const ModelConfig& defaults = ModelConfig{});
  const EncoderConfig& encoder(Stream s) const { return s == Stream::kAudio ? audio : visual; }
};

/// Linear projection to blank + labels followed by log-softmax.
struct CtcHead {
  Tensor w, b;
  Tensor log_probs(const Tensor& h) const;
};
CtcHead make_ctc_head(const std::string& prefix, std::size_t in_dim, std::size_t labels, ParamStore& store, Rng& rng);

/// Two-layer frame-wise MLP over concatenated encoder states.
struct FusionMlp {
  Tensor w1, b1, w2, b2;
  Tensor apply(const Tensor& ha, const Tensor& hv) const;
};
FusionMlp make_fusion_mlp(const std::string& prefix, std::size_t in_dim, const FusionConfig& cfg, ParamStore& store,
                          Rng& rng);

/// Frame-wise concat of the two streams then the MLP.
Tensor fuse(const FusionMlp& mlp, const EncoderStates& ha, const EncoderStates& hv);

/// Mean per-frame cross entropy of `head_log_probs` [T, V+1] against the
/// alignment labels (blanks included unless label_frames_only).
Tensor align_loss(const ctc::AlignmentPath& z, const Tensor& head_log_probs, bool label_frames_only = false);

/// Audio-visual model. Parameter names: "a." / "v." encoders with their
/// pre-training heads "a.ctc." / "v.ctc.", "fuse." MLP, "av.ctc." joint head and
/// "dec." attention decoder. Construction order is fixed so equal seeds give
/// equal initial weights for every shared name.
class AvModel {
 public:
  AvModel(const ModelConfig& cfg, std::uint64_t seed);
  AvModel(const AvModel&) = delete;
  AvModel& operator=(const AvModel&) = delete;

  struct Output {
    EncoderStates ha, hv;
    Tensor joint;
    Tensor lp_av, lp_a, lp_v;
  };
  Output forward(const Tensor& feats_a, const Tensor& feats_v) const;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const encoder::Encoder& encoder(Stream s) const { return s == Stream::kAudio ? enc_a_ : enc_v_; }
  const CtcHead& head(Stream s) const { return s == Stream::kAudio ? head_a_ : head_v_; }
  const CtcHead& head_av() const { return head_av_; }
  const FusionMlp& mlp() const { return mlp_; }
  const decoder::AttentionDecoder& attention_decoder() const { return dec_; }
  /// Marks the encoder and pre-training head of each frozen stream non-trainable.
  void set_freeze(Freeze f);

 private:
  ModelConfig cfg_;
  ParamStore store_;
  Rng rng_;
  encoder::Encoder enc_a_;
  CtcHead head_a_;
  encoder::Encoder enc_v_;
  CtcHead head_v_;
  FusionMlp mlp_;
  CtcHead head_av_;
  decoder::AttentionDecoder dec_;
};

/// One modality: encoder, CTC head and an attention decoder reading the
/// encoder states. Encoder and head names match AvModel's so a pre-trained
/// single-stream checkpoint initialises the AV model directly.
class SingleStreamModel {
 public:
  SingleStreamModel(const ModelConfig& cfg, Stream stream, std::uint64_t seed);
  SingleStreamModel(const SingleStreamModel&) = delete;
  SingleStreamModel& operator=(const SingleStreamModel&) = delete;

  struct Output {
    EncoderStates h;
    Tensor lp;
  };
  Output forward(const Tensor& feats) const;

  Stream stream() const { return stream_; }
  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const encoder::Encoder& encoder() const { return enc_; }
  const CtcHead& head() const { return head_; }
  const decoder::AttentionDecoder& attention_decoder() const { return dec_; }
  static std::string decoder_prefix(Stream s) { return s == Stream::kAudio ? "dec_a." : "dec_v."; }

 private:
  ModelConfig cfg_;
  Stream stream_;
  ParamStore store_;
  Rng rng_;
  encoder::Encoder enc_;
  CtcHead head_;
  decoder::AttentionDecoder dec_;
};

/// Alignment targets per utterance, refreshed by the trainer.
struct AlignmentTargets {
  std::optional<ctc::AlignmentPath> path;
  std::string skip_reason;  // set when the targeted head could not align
};

/// Forced alignment on the head named by `mode`, computed without a graph.
AlignmentTargets extract_alignment(const AvModel::Output& out, const LabelSeq& target, AlignSource mode);

struct LossResult {
  LossBreakdown breakdown;
  Tensor total;  // differentiable
};

/// Joint objective for one utterance. `targets` must come from
/// extract_alignment when mode != kNone; the path is a constant here, so no
/// gradient reaches the head that produced it through the targets.
LossResult total_loss(const AvModel& model, const AvModel::Output& out, const LabelSeq& target,
                      const JointLossConfig& cfg, AlignSource mode, const AlignmentTargets& targets);

/// alpha * CTC + (1 - alpha) * decoder CE for a single-stream model.
LossResult single_stream_loss(const SingleStreamModel& model, const SingleStreamModel::Output& out,
                              const LabelSeq& target, double alpha);

}  // namespace avsr::fusion
