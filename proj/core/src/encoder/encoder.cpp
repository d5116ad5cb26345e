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

#include "avsr/encoder/encoder.hpp"

#include <cmath>
#include <cstring>

#include "avsr/errors.hpp"
#include "avsr/numcore/random.hpp"

namespace avsr::encoder {

const char* stream_name(Stream s) { return s == Stream::kAudio ? "A" : "V"; }

void EncoderConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ContractError("encoder config field '" + field + "': " + why);
  };
  if (input_dim == 0) fail("input_dim", "must be positive");
  if (dim == 0) fail("dim", "must be positive");
  if (heads == 0 || dim % heads != 0) fail("heads", "dim must be divisible by heads");
  if (conv_kernel % 2 == 0) fail("conv_kernel", "must be odd");
  if (frontend_kernel == 0) fail("frontend_kernel", "must be positive");
  if (ff_dim == 0) fail("ff_dim", "must be positive");
  if (frame_ms <= 0) fail("frame_ms", "must be positive");
  if (frontend_delay_ms < 0) fail("frontend_delay_ms", "must be non-negative");
  if (max_positions == 0) fail("max_positions", "must be positive");
}

KeyValues EncoderConfig::to_kv(const std::string& p) const {
  KeyValues kv;
  kv.set(p + "input_dim", static_cast<long long>(input_dim));
  kv.set(p + "layers", static_cast<long long>(layers));
  kv.set(p + "dim", static_cast<long long>(dim));
  kv.set(p + "heads", static_cast<long long>(heads));
  kv.set(p + "ff_dim", static_cast<long long>(ff_dim));
  kv.set(p + "conv_kernel", static_cast<long long>(conv_kernel));
  kv.set(p + "frontend_kernel", static_cast<long long>(frontend_kernel));
  kv.set(p + "chunk_frames", static_cast<long long>(chunk_frames));
  kv.set(p + "causal_conv", causal_conv);
  kv.set(p + "frontend_delay_ms", frontend_delay_ms);
  kv.set(p + "frame_ms", frame_ms);
  kv.set(p + "max_positions", static_cast<long long>(max_positions));
  return kv;
}

EncoderConfig EncoderConfig::from_kv(const KeyValues& kv, const std::string& p,
                                     const EncoderConfig& d) {
  auto size = [&](const char* k, std::size_t fallback) {
    const long long v = kv.get_int(p + k, static_cast<long long>(fallback));
    if (v < 0) throw ContractError("encoder config field '" + p + k + "': must be non-negative");
    return static_cast<std::size_t>(v);
  };
  EncoderConfig c;
  c.input_dim = size("input_dim", d.input_dim);
  c.layers = size("layers", d.layers);
  c.dim = size("dim", d.dim);
  c.heads = size("heads", d.heads);
  c.ff_dim = size("ff_dim", d.ff_dim);
  c.conv_kernel = size("conv_kernel", d.conv_kernel);
  c.frontend_kernel = size("frontend_kernel", d.frontend_kernel);
  c.chunk_frames = size("chunk_frames", d.chunk_frames);
  c.causal_conv = kv.get_bool(p + "causal_conv", d.causal_conv);
  c.frontend_delay_ms = kv.get_double(p + "frontend_delay_ms", d.frontend_delay_ms);
  c.frame_ms = kv.get_double(p + "frame_ms", d.frame_ms);
  c.max_positions = size("max_positions", d.max_positions);
  c.validate();
  return c;
}

EncoderConfig EncoderConfig::from_kv(const KeyValues& kv, const std::string& p) {
  return from_kv(kv, p, EncoderConfig{});
}

std::shared_ptr<const Mask> chunk_mask(std::size_t frames, std::size_t chunk_frames) {
  auto m = std::make_shared<Mask>();
  m->rows = m->cols = frames;
  m->allowed.assign(frames * frames, 1);
  if (chunk_frames > 0) {
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t s = 0; s < frames; ++s)
        m->allowed[t * frames + s] = (s / chunk_frames <= t / chunk_frames) ? 1 : 0;
  }
  return m;
}

Tensor causal_conv1d(const Tensor& x, const Tensor& kernel) {
  return depthwise_conv1d(x, kernel, kernel.rows() - 1, 0);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

Tensor multi_head_attention(const Tensor& query, const Tensor& memory, std::size_t heads,
                            const Tensor& wq, const Tensor& bq, const Tensor& wk, const Tensor& bk,
                            const Tensor& wv, const Tensor& bv, const Tensor& wo, const Tensor& bo,
                            std::shared_ptr<const Mask> mask) {
  const std::size_t D = wq.cols();
  const std::size_t dk = D / heads;
  const Tensor q = linear(query, wq, bq);
  const Tensor k = linear(memory, wk, bk);
  const Tensor v = linear(memory, wv, bv);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  if (!mask) {
    auto full = std::make_shared<Mask>();
    full->rows = query.rows();
    full->cols = memory.rows();
    full->allowed.assign(full->rows * full->cols, 1);
    mask = full;
  }
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = heads == 1 ? q : slice(q, 1, h * dk, (h + 1) * dk);
    const Tensor kh = heads == 1 ? k : slice(k, 1, h * dk, (h + 1) * dk);
    const Tensor vh = heads == 1 ? v : slice(v, 1, h * dk, (h + 1) * dk);
    const Tensor weights = masked_softmax(scale(matmul_nt(qh, kh), inv), mask);
    outs.push_back(matmul(weights, vh));
  }
  const Tensor merged = heads == 1 ? outs[0] : concat(outs, 1);
  return linear(merged, wo, bo);
}

Encoder::Encoder(EncoderConfig cfg, Stream stream, std::string prefix, ParamStore& store, Rng& rng)
    : cfg_(cfg), stream_(stream), prefix_(std::move(prefix)) {
  cfg_.validate();
  const std::size_t D = cfg_.dim, F = cfg_.ff_dim;
  const auto& p = prefix_;
  fe_conv_ = store.add_glorot(p + "fe.conv", {cfg_.frontend_kernel, cfg_.input_dim, D}, rng);
  fe_proj_ = store.add_glorot(p + "fe.proj", {D, D}, rng);
  fe_bias_ = store.add_zeros(p + "fe.bias", {D});
  {
    // Small random positional table; glorot over [max_pos, D] would be too large.
    std::vector<double> v(cfg_.max_positions * D);
    for (auto& x : v) x = 0.02 * rng.normal();
    pos_ = store.add(p + "pos", Tensor({cfg_.max_positions, D}, std::move(v), true));
  }
  auto ff = [&](const std::string& n) {
    FeedForward f;
    f.ln_g = store.add_constant(n + ".ln_g", {D}, 1.0);
    f.ln_b = store.add_zeros(n + ".ln_b", {D});
    f.w1 = store.add_glorot(n + ".w1", {D, F}, rng);
    f.b1 = store.add_zeros(n + ".b1", {F});
    f.w2 = store.add_glorot(n + ".w2", {F, D}, rng);
    f.b2 = store.add_zeros(n + ".b2", {D});
    return f;
  };
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string n = p + "L" + std::to_string(l);
    Layer layer;
    layer.ff1 = ff(n + ".ff1");
    auto& a = layer.att;
    a.ln_g = store.add_constant(n + ".att.ln_g", {D}, 1.0);
    a.ln_b = store.add_zeros(n + ".att.ln_b", {D});
    a.wq = store.add_glorot(n + ".att.wq", {D, D}, rng);
    a.bq = store.add_zeros(n + ".att.bq", {D});
    a.wk = store.add_glorot(n + ".att.wk", {D, D}, rng);
    a.bk = store.add_zeros(n + ".att.bk", {D});
    a.wv = store.add_glorot(n + ".att.wv", {D, D}, rng);
    a.bv = store.add_zeros(n + ".att.bv", {D});
    a.wo = store.add_glorot(n + ".att.wo", {D, D}, rng);
    a.bo = store.add_zeros(n + ".att.bo", {D});
    auto& c = layer.conv;
    c.ln_g = store.add_constant(n + ".conv.ln_g", {D}, 1.0);
    c.ln_b = store.add_zeros(n + ".conv.ln_b", {D});
    c.pw1 = store.add_glorot(n + ".conv.pw1", {D, D}, rng);
    c.pb1 = store.add_zeros(n + ".conv.pb1", {D});
    c.dw = store.add_glorot(n + ".conv.dw", {cfg_.conv_kernel, D}, rng);
    c.pw2 = store.add_glorot(n + ".conv.pw2", {D, D}, rng);
    c.pb2 = store.add_zeros(n + ".conv.pb2", {D});
    layer.ff2 = ff(n + ".ff2");
    layer.out_g = store.add_constant(n + ".out.ln_g", {D}, 1.0);
    layer.out_b = store.add_zeros(n + ".out.ln_b", {D});
    layers_.push_back(std::move(layer));
  }
}

void Encoder::zero_residual_branches() {
  auto zero = [](Tensor t) {
    for (auto& v : t.values_mut()) v = 0.0;
  };
  for (auto& l : layers_) {
    zero(l.ff1.w2);
    zero(l.ff1.b2);
    zero(l.ff2.w2);
    zero(l.ff2.b2);
    zero(l.att.wo);
    zero(l.att.bo);
    zero(l.conv.pw2);
    zero(l.conv.pb2);
  }
}

Tensor Encoder::feed_forward(const FeedForward& ff, const Tensor& x) const {
  const Tensor h = relu(linear(layer_norm(x, ff.ln_g, ff.ln_b), ff.w1, ff.b1));
  return linear(h, ff.w2, ff.b2);
}

Tensor Encoder::self_attention(const Attention& a, const Tensor& x, std::shared_ptr<const Mask> mask) const {
  const Tensor n = layer_norm(x, a.ln_g, a.ln_b);
  return multi_head_attention(n, n, cfg_.heads, a.wq, a.bq, a.wk, a.bk, a.wv, a.bv, a.wo, a.bo,
                              std::move(mask));
}

Tensor Encoder::conv_module(const ConvModule& cm, const Tensor& x) const {
  const std::size_t K = cfg_.conv_kernel;
  const std::size_t left = cfg_.causal_conv ? K - 1 : K / 2;
  const std::size_t right = cfg_.causal_conv ? 0 : K / 2;
  Tensor h = relu(linear(layer_norm(x, cm.ln_g, cm.ln_b), cm.pw1, cm.pb1));
  h = relu(depthwise_conv1d(h, cm.dw, left, right));
  return linear(h, cm.pw2, cm.pb2);
}

Tensor Encoder::frontend(const Tensor& features) const {
  if (features.rank() != 2 || features.cols() != cfg_.input_dim) {
    throw DimensionError("encode: features " + shape_str(features.shape()) + " do not match input_dim " +
                         std::to_string(cfg_.input_dim));
  }
  const std::size_t T = features.rows();
  if (T == 0) throw DimensionError("encode: empty feature sequence");
  if (T > cfg_.max_positions) {
    throw DimensionError("encode: " + std::to_string(T) + " frames exceed max_positions " +
                         std::to_string(cfg_.max_positions));
  }
  const std::size_t K = cfg_.frontend_kernel;
  const std::size_t left = cfg_.causal_conv ? K - 1 : K / 2;
  const std::size_t right = cfg_.causal_conv ? 0 : (K - 1) - K / 2;
  const Tensor h = relu(conv1d(features, fe_conv_, left, right));
  return add(linear(h, fe_proj_, fe_bias_), slice(pos_, 0, 0, T));
}

EncoderStates Encoder::encode(const Tensor& features) const {
  Tensor x = frontend(features);
  const auto mask = chunk_mask(x.rows(), cfg_.chunk_frames);
  for (const auto& l : layers_) {
    x = add(x, scale(feed_forward(l.ff1, x), 0.5));
    x = add(x, self_attention(l.att, x, mask));
    x = add(x, conv_module(l.conv, x));
    x = add(x, scale(feed_forward(l.ff2, x), 0.5));
    x = layer_norm(x, l.out_g, l.out_b);
  }
  return {x, stream_};
}

std::size_t configured_lookahead(const EncoderConfig& cfg, std::size_t frames, std::size_t t) {
  if (cfg.chunk_frames == 0 || !cfg.causal_conv) return frames - 1 - t;
  const std::size_t end = std::min((t / cfg.chunk_frames + 1) * cfg.chunk_frames, frames);
  return end - 1 - t;
}

std::size_t receptive_field_audit(const Encoder& enc, std::size_t frames, std::size_t probe_frame,
                                  std::uint64_t seed) {
  if (probe_frame >= frames) throw ContractError("receptive_field_audit: probe frame outside input");
  NoGradGuard ng;
  Rng rng(seed);
  const std::size_t F = enc.config().input_dim;
  std::vector<double> base(frames * F);
  for (auto& v : base) v = rng.normal();
  const Tensor ref = enc.encode(Tensor({frames, F}, base)).frames;
  const std::size_t D = ref.cols();
  std::size_t reach = 0;
  for (std::size_t s = probe_frame + 1; s < frames; ++s) {
    auto pert = base;
    for (std::size_t f = 0; f < F; ++f) pert[s * F + f] += 1.0 + rng.uniform();
    const Tensor out = enc.encode(Tensor({frames, F}, std::move(pert))).frames;
    if (std::memcmp(&out.values()[probe_frame * D], &ref.values()[probe_frame * D], D * sizeof(double)) != 0) {
      reach = s - probe_frame;
    }
  }
  return reach;
}

}  // namespace avsr::encoder
