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

#include "avsr/fusion/fusion.hpp"

#include "avsr/errors.hpp"
#include "avsr/numcore/ops.hpp"

namespace avsr::fusion {

AlignSource parse_align_source(const std::string& s) {
  if (s == "none") return AlignSource::kNone;
  if (s == "av") return AlignSource::kAv;
  if (s == "a2v") return AlignSource::kA2V;
  if (s == "v2a") return AlignSource::kV2A;
  throw ContractError("align-mode must be one of none, av, a2v, v2a (got '" + s + "')");
}

const char* align_source_name(AlignSource s) {
  switch (s) {
    case AlignSource::kNone: return "none";
    case AlignSource::kAv: return "av";
    case AlignSource::kA2V: return "a2v";
    case AlignSource::kV2A: return "v2a";
  }
  return "?";
}

Freeze parse_freeze(const std::string& s) {
  if (s == "none") return Freeze::kNone;
  if (s == "a") return Freeze::kAudio;
  if (s == "v") return Freeze::kVisual;
  if (s == "both") return Freeze::kBoth;
  throw ContractError("freeze must be one of a, v, none, both (got '" + s + "')");
}

const char* freeze_name(Freeze f) {
  switch (f) {
    case Freeze::kNone: return "none";
    case Freeze::kAudio: return "a";
    case Freeze::kVisual: return "v";
    case Freeze::kBoth: return "both";
  }
  return "?";
}

void JointLossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("loss field 'alpha': must lie in [0,1]");
  if (!(beta_av2a >= 0.0)) throw ContractError("loss field 'beta_av2a': must be non-negative");
  if (!(beta_av2v >= 0.0)) throw ContractError("loss field 'beta_av2v': must be non-negative");
}

KeyValues JointLossConfig::to_kv(const std::string& p) const {
  KeyValues kv;
  kv.set(p + "alpha", alpha);
  kv.set(p + "beta_av2a", beta_av2a);
  kv.set(p + "beta_av2v", beta_av2v);
  kv.set(p + "label_frames_only", label_frames_only);
  return kv;
}

JointLossConfig JointLossConfig::from_kv(const KeyValues& kv, const std::string& p, const JointLossConfig& d) {
  JointLossConfig c;
  c.alpha = kv.get_double(p + "alpha", d.alpha);
  c.beta_av2a = kv.get_double(p + "beta_av2a", d.beta_av2a);
  c.beta_av2v = kv.get_double(p + "beta_av2v", d.beta_av2v);
  c.label_frames_only = kv.get_bool(p + "label_frames_only", d.label_frames_only);
  c.validate();
  return c;
}

ModelConfig::ModelConfig() { visual.frontend_delay_ms = 100.0; }

void ModelConfig::validate() const {
  if (labels == 0) throw ContractError("model field 'labels': must be positive");
  audio.validate();
  visual.validate();
  decoder.validate();
  if (fusion.hidden == 0) throw ContractError("model field 'fusion.hidden': must be positive");
  if (fusion.dim != decoder.dim) {
    throw ContractError("model field 'fusion.dim': must equal decoder.dim (" + std::to_string(fusion.dim) + " vs " +
                        std::to_string(decoder.dim) + ")");
  }
  if (audio.frame_ms != visual.frame_ms) throw ContractError("model field 'visual.frame_ms': streams must share a frame rate");
}

KeyValues ModelConfig::to_kv() const {
  KeyValues kv;
  kv.set("labels", static_cast<long long>(labels));
  const KeyValues parts[] = {audio.to_kv("audio."), visual.to_kv("visual."), decoder.to_kv("decoder.")};
  for (const auto& part : parts)
    for (const auto& [k, v] : part.entries()) kv.set(k, v);
  kv.set("fusion.hidden", static_cast<long long>(fusion.hidden));
  kv.set("fusion.dim", static_cast<long long>(fusion.dim));
  return kv;
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv, const ModelConfig& d) {
  ModelConfig c;
  const long long labels = kv.get_int("labels", static_cast<long long>(d.labels));
  if (labels <= 0) throw ContractError("model field 'labels': must be positive");
  c.labels = static_cast<std::size_t>(labels);
  c.audio = EncoderConfig::from_kv(kv, "audio.", d.audio);
  c.visual = EncoderConfig::from_kv(kv, "visual.", d.visual);
  const long long hidden = kv.get_int("fusion.hidden", static_cast<long long>(d.fusion.hidden));
  const long long dim = kv.get_int("fusion.dim", static_cast<long long>(d.fusion.dim));
  if (hidden <= 0 || dim <= 0) throw ContractError("model field 'fusion.*': must be positive");
  c.fusion.hidden = static_cast<std::size_t>(hidden);
  c.fusion.dim = static_cast<std::size_t>(dim);
  c.decoder = decoder::DecoderConfig::from_kv(kv, "decoder.", d.decoder);
  c.validate();
  return c;
}

Tensor CtcHead::log_probs(const Tensor& h) const { return log_softmax(encoder::linear(h, w, b)); }

CtcHead make_ctc_head(const std::string& prefix, std::size_t in_dim, std::size_t labels, ParamStore& store, Rng& rng) {
  return {store.add_glorot(prefix + "w", {in_dim, labels + 1}, rng), store.add_zeros(prefix + "b", {labels + 1})};
}

Tensor FusionMlp::apply(const Tensor& ha, const Tensor& hv) const {
  const Tensor x = concat({ha, hv}, 1);
  return encoder::linear(relu(encoder::linear(x, w1, b1)), w2, b2);
}

FusionMlp make_fusion_mlp(const std::string& p, std::size_t in_dim, const FusionConfig& cfg, ParamStore& store,
                          Rng& rng) {
  FusionMlp m;
  m.w1 = store.add_glorot(p + "w1", {in_dim, cfg.hidden}, rng);
  m.b1 = store.add_zeros(p + "b1", {cfg.hidden});
  m.w2 = store.add_glorot(p + "w2", {cfg.hidden, cfg.dim}, rng);
  m.b2 = store.add_zeros(p + "b2", {cfg.dim});
  return m;
}

Tensor fuse(const FusionMlp& mlp, const EncoderStates& ha, const EncoderStates& hv) {
  if (ha.frames.rows() != hv.frames.rows()) {
    throw ContractError("fuse: audio has " + std::to_string(ha.frames.rows()) + " frames, visual " +
                        std::to_string(hv.frames.rows()));
  }
  return mlp.apply(ha.frames, hv.frames);
}

Tensor align_loss(const ctc::AlignmentPath& z, const Tensor& head_log_probs, bool label_frames_only) {
  const std::size_t T = head_log_probs.rows();
  if (z.labels.size() != T) {
    throw ContractError("align_loss: alignment has " + std::to_string(z.labels.size()) + " frames, head output " +
                        std::to_string(T));
  }
  for (auto l : z.labels) {
    if (l >= head_log_probs.cols()) throw ContractError("align_loss: alignment label outside the head vocabulary");
  }
  const Tensor picked = pick(head_log_probs, z.labels);
  if (!label_frames_only) return scale(mean(picked), -1.0);
  std::vector<double> w(T, 0.0);
  std::size_t n = 0;
  for (std::size_t t = 0; t < T; ++t) {
    if (z.labels[t] != ctc::kBlank) {
      w[t] = 1.0;
      ++n;
    }
  }
  if (n == 0) return scale(sum(mul(picked, Tensor({T}, w))), 0.0);
  return scale(sum(mul(picked, Tensor({T}, w))), -1.0 / static_cast<double>(n));
}

namespace {

decoder::DecoderConfig single_stream_decoder(const ModelConfig& cfg, Stream s) {
  auto d = cfg.decoder;
  d.dim = cfg.encoder(s).dim;
  if (d.dim % d.heads != 0) d.heads = 1;
  return d;
}

std::string stream_prefix(Stream s) { return s == Stream::kAudio ? "a." : "v."; }

}  // namespace

AvModel::AvModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), cfg)),
      rng_(seed),
      enc_a_(cfg_.audio, Stream::kAudio, "a.", store_, rng_),
      head_a_(make_ctc_head("a.ctc.", cfg_.audio.dim, cfg_.labels, store_, rng_)),
      enc_v_(cfg_.visual, Stream::kVisual, "v.", store_, rng_),
      head_v_(make_ctc_head("v.ctc.", cfg_.visual.dim, cfg_.labels, store_, rng_)),
      mlp_(make_fusion_mlp("fuse.", cfg_.audio.dim + cfg_.visual.dim, cfg_.fusion, store_, rng_)),
      head_av_(make_ctc_head("av.ctc.", cfg_.fusion.dim, cfg_.labels, store_, rng_)),
      dec_(cfg_.decoder, cfg_.labels, "dec.", store_, rng_) {}

AvModel::Output AvModel::forward(const Tensor& feats_a, const Tensor& feats_v) const {
  if (feats_a.rows() != feats_v.rows()) {
    throw ContractError("forward: audio has " + std::to_string(feats_a.rows()) + " frames, visual " +
                        std::to_string(feats_v.rows()));
  }
  Output o;
  o.ha = enc_a_.encode(feats_a);
  o.hv = enc_v_.encode(feats_v);
  o.joint = fuse(mlp_, o.ha, o.hv);
  o.lp_av = head_av_.log_probs(o.joint);
  o.lp_a = head_a_.log_probs(o.ha.frames);
  o.lp_v = head_v_.log_probs(o.hv.frames);
  return o;
}

void AvModel::set_freeze(Freeze f) {
  store_.set_trainable("a.", f != Freeze::kAudio && f != Freeze::kBoth);
  store_.set_trainable("v.", f != Freeze::kVisual && f != Freeze::kBoth);
}

SingleStreamModel::SingleStreamModel(const ModelConfig& cfg, Stream stream, std::uint64_t seed)
    : cfg_((cfg.validate(), cfg)),
      stream_(stream),
      rng_(seed),
      enc_(cfg_.encoder(stream), stream, stream_prefix(stream), store_, rng_),
      head_(make_ctc_head(stream_prefix(stream) + "ctc.", cfg_.encoder(stream).dim, cfg_.labels, store_, rng_)),
      dec_(single_stream_decoder(cfg_, stream), cfg_.labels, decoder_prefix(stream), store_, rng_) {}

SingleStreamModel::Output SingleStreamModel::forward(const Tensor& feats) const {
  Output o;
  o.h = enc_.encode(feats);
  o.lp = head_.log_probs(o.h.frames);
  return o;
}

AlignmentTargets extract_alignment(const AvModel::Output& out, const LabelSeq& target, AlignSource mode) {
  AlignmentTargets t;
  if (mode == AlignSource::kNone) return t;
  const Tensor& lp = mode == AlignSource::kAv ? out.lp_av : mode == AlignSource::kA2V ? out.lp_a : out.lp_v;
  // Detached copy: the path is a constant for the loss.
  const ctc::PosteriorMatrix post{lp.detach(), 40.0};
  try {
    auto fa = ctc::forced_align(post, target);
    if (ctc::is_log_zero(fa.log_prob)) {
      t.skip_reason = "alignment has zero probability";
    } else {
      t.path = std::move(fa.path);
    }
  } catch (const InfeasibleTargetError& e) {
    t.skip_reason = e.what();
  }
  return t;
}

LossResult total_loss(const AvModel& model, const AvModel::Output& out, const LabelSeq& target,
                      const JointLossConfig& cfg, AlignSource mode, const AlignmentTargets& targets) {
  cfg.validate();
  LossResult r;
  const Tensor l_ctc = ctc::ctc_loss(out.lp_av, target);
  const Tensor l_ce = decoder::decoder_ce(model.attention_decoder(), out.joint, target);
  r.breakdown.l_ctc = l_ctc.item();
  r.breakdown.l_ce_decoder = l_ce.item();
  Tensor total = add(scale(l_ctc, cfg.alpha), scale(l_ce, 1.0 - cfg.alpha));
  if (mode != AlignSource::kNone) {
    if (!targets.path) throw ContractError("total_loss: alignment mode set but no alignment supplied");
    const auto& z = *targets.path;
    if (mode == AlignSource::kAv || mode == AlignSource::kV2A) {
      const Tensor la = align_loss(z, out.lp_a, cfg.label_frames_only);
      r.breakdown.l_align_av2a = la.item();
      total = add(total, scale(la, cfg.beta_av2a));
    }
    if (mode == AlignSource::kAv || mode == AlignSource::kA2V) {
      const Tensor lv = align_loss(z, out.lp_v, cfg.label_frames_only);
      r.breakdown.l_align_av2v = lv.item();
      total = add(total, scale(lv, cfg.beta_av2v));
    }
  }
  r.breakdown.total = total.item();
  r.total = total;
  return r;
}

LossResult single_stream_loss(const SingleStreamModel& model, const SingleStreamModel::Output& out,
                              const LabelSeq& target, double alpha) {
  LossResult r;
  const Tensor l_ctc = ctc::ctc_loss(out.lp, target);
  const Tensor l_ce = decoder::decoder_ce(model.attention_decoder(), out.h.frames, target);
  r.breakdown.l_ctc = l_ctc.item();
  r.breakdown.l_ce_decoder = l_ce.item();
  r.total = add(scale(l_ctc, alpha), scale(l_ce, 1.0 - alpha));
  r.breakdown.total = r.total.item();
  return r;
}

}  // namespace avsr::fusion
