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
#include <memory>
#include <string>
#include <vector>

#include "avsr/config.hpp"
#include "avsr/numcore/ops.hpp"
#include "avsr/numcore/params.hpp"

namespace avsr::encoder {

enum class Stream { kAudio, kVisual };
const char* stream_name(Stream s);

struct EncoderConfig {
  std::size_t input_dim = 16;
  std::size_t layers = 2;
  std::size_t dim = 32;
  std::size_t heads = 2;
  std::size_t ff_dim = 64;
  std::size_t conv_kernel = 7;
  std::size_t frontend_kernel = 3;
  std::size_t chunk_frames = 12;  // 0 = unrestricted (offline)
  bool causal_conv = true;
  double frontend_delay_ms = 35.0;
  double frame_ms = 40.0;
  std::size_t max_positions = 128;

  bool streaming() const { return chunk_frames > 0; }
  /// Throws ContractError naming the offending field.
  void validate() const;
  KeyValues to_kv(const std::string& prefix = "") const;
  static EncoderConfig from_kv(const KeyValues& kv, const std::string& prefix,
                               const EncoderConfig& defaults);
  static EncoderConfig from_kv(const KeyValues& kv, const std::string& prefix = "");
};

struct EncoderStates {
  Tensor frames;  // T x dim
  Stream stream = Stream::kAudio;
};

/// t may attend s iff chunk(s) <= chunk(t); chunk_frames = 0 allows everything.
std::shared_ptr<const Mask> chunk_mask(std::size_t frames, std::size_t chunk_frames);

/// Per-channel convolution left-padded with K-1 zeros: output t reads inputs
/// t-K+1..t, with kernel row K-1 applied to the current frame.
Tensor causal_conv1d(const Tensor& x, const Tensor& kernel);

/// Conformer-lite stack: front-end conv + projection, positional embedding,
/// then per layer {half FF, chunk-masked MHSA, conv module, half FF, norm}.
class Encoder {
 public:
  Encoder(EncoderConfig cfg, Stream stream, std::string prefix, ParamStore& store, Rng& rng);

  EncoderStates encode(const Tensor& features) const;
  /// Output of the front-end projection alone (before the conformer layers).
  Tensor frontend(const Tensor& features) const;

  const EncoderConfig& config() const { return cfg_; }
  Stream stream() const { return stream_; }
  const std::string& prefix() const { return prefix_; }
  /// Zeroes the last projection of every residual branch.
  void zero_residual_branches();

 private:
  struct FeedForward {
    Tensor ln_g, ln_b, w1, b1, w2, b2;
  };
  struct Attention {
    Tensor ln_g, ln_b, wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct ConvModule {
    Tensor ln_g, ln_b, pw1, pb1, dw, pw2, pb2;
  };
  struct Layer {
    FeedForward ff1, ff2;
    Attention att;
    ConvModule conv;
    Tensor out_g, out_b;
  };

  Tensor feed_forward(const FeedForward& ff, const Tensor& x) const;
  Tensor self_attention(const Attention& att, const Tensor& x, std::shared_ptr<const Mask> mask) const;
  Tensor conv_module(const ConvModule& cm, const Tensor& x) const;

  EncoderConfig cfg_;
  Stream stream_;
  std::string prefix_;
  Tensor fe_conv_, fe_proj_, fe_bias_, pos_;
  std::vector<Layer> layers_;
};

/// Multi-head attention shared by encoder and decoder. `query` [Tq,D],
/// `memory` [Tk,D]; projections are [D,D] with [D] biases.
Tensor multi_head_attention(const Tensor& query, const Tensor& memory, std::size_t heads,
                            const Tensor& wq, const Tensor& bq, const Tensor& wk, const Tensor& bk,
                            const Tensor& wv, const Tensor& bv, const Tensor& wo, const Tensor& bo,
                            std::shared_ptr<const Mask> mask);

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Largest s - t such that perturbing input frame s changes output frame t,
/// measured by perturbation on random features (0 when nothing ahead matters).
std::size_t receptive_field_audit(const Encoder& enc, std::size_t frames, std::size_t probe_frame,
                                  std::uint64_t seed = 7);

/// Look-ahead the configuration promises for frame t of a T-frame input.
std::size_t configured_lookahead(const EncoderConfig& cfg, std::size_t frames, std::size_t t);

}  // namespace avsr::encoder
