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

#include "avsr/decoder/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "avsr/encoder/encoder.hpp"
#include "avsr/errors.hpp"
#include "avsr/numcore/ops.hpp"

namespace avsr::decoder {

using ctc::is_log_zero;
using ctc::kLogZero;
using encoder::linear;
using encoder::multi_head_attention;

void DecoderConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ContractError("decoder config field '" + field + "': " + why);
  };
  if (dim == 0) fail("dim", "must be positive");
  if (heads == 0 || dim % heads != 0) fail("heads", "dim must be divisible by heads");
  if (ff_dim == 0) fail("ff_dim", "must be positive");
  if (max_length < 2) fail("max_length", "must be at least 2");
  if (beam == 0) fail("beam", "must be >= 1");
  if (!(ctc_weight_lambda >= 0.0 && ctc_weight_lambda <= 1.0)) fail("ctc_weight_lambda", "must lie in [0,1]");
  if (!(eos_threshold >= 0.0 && eos_threshold < 1.0)) fail("eos_threshold", "must lie in [0,1)");
}

KeyValues DecoderConfig::to_kv(const std::string& p) const {
  KeyValues kv;
  kv.set(p + "layers", static_cast<long long>(layers));
  kv.set(p + "dim", static_cast<long long>(dim));
  kv.set(p + "heads", static_cast<long long>(heads));
  kv.set(p + "ff_dim", static_cast<long long>(ff_dim));
  kv.set(p + "max_length", static_cast<long long>(max_length));
  if (offline())
    kv.set(p + "lookahead_tau", std::string("inf"));
  else
    kv.set(p + "lookahead_tau", static_cast<long long>(lookahead_tau));
  kv.set(p + "ctc_weight_lambda", ctc_weight_lambda);
  kv.set(p + "beam", static_cast<long long>(beam));
  kv.set(p + "ctc_beam", static_cast<long long>(ctc_beam));
  kv.set(p + "eos_threshold", eos_threshold);
  return kv;
}

DecoderConfig DecoderConfig::from_kv(const KeyValues& kv, const std::string& p, const DecoderConfig& d) {
  auto size = [&](const char* k, std::size_t fallback) {
    const long long v = kv.get_int(p + k, static_cast<long long>(fallback));
    if (v < 0) throw ContractError("decoder config field '" + p + k + "': must be non-negative");
    return static_cast<std::size_t>(v);
  };
  DecoderConfig c;
  c.layers = size("layers", d.layers);
  c.dim = size("dim", d.dim);
  c.heads = size("heads", d.heads);
  c.ff_dim = size("ff_dim", d.ff_dim);
  c.max_length = size("max_length", d.max_length);
  const double tau = kv.get_double(p + "lookahead_tau", d.offline() ? INFINITY : static_cast<double>(d.lookahead_tau));
  if (tau < 0) throw ContractError("decoder config field '" + p + "lookahead_tau': must be non-negative");
  c.lookahead_tau = tau >= 1e15 ? kUnboundedLookahead : static_cast<std::size_t>(tau);
  c.ctc_weight_lambda = kv.get_double(p + "ctc_weight_lambda", d.ctc_weight_lambda);
  c.beam = size("beam", d.beam);
  c.ctc_beam = size("ctc_beam", d.ctc_beam);
  c.eos_threshold = kv.get_double(p + "eos_threshold", d.eos_threshold);
  c.validate();
  return c;
}

AttentionDecoder::AttentionDecoder(DecoderConfig cfg, std::size_t label_count, std::string prefix, ParamStore& store,
                                   Rng& rng)
    : cfg_(cfg), label_count_(label_count) {
  cfg_.validate();
  if (label_count_ == 0) throw ContractError("decoder: label_count must be positive");
  const std::size_t D = cfg_.dim, F = cfg_.ff_dim, O = output_size();
  const auto& p = prefix;
  auto small = [&](const std::string& name, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = 0.1 * rng.normal();
    return store.add(name, Tensor(std::move(shape), std::move(v), true));
  };
  tok_ = small(p + "tok", {O, D});
  pos_ = small(p + "pos", {cfg_.max_length, D});
  auto attention = [&](const std::string& n, Tensor& g, Tensor& b, Tensor& wq, Tensor& bq, Tensor& wk, Tensor& bk,
                       Tensor& wv, Tensor& bv, Tensor& wo, Tensor& bo) {
    g = store.add_constant(n + ".ln_g", {D}, 1.0);
    b = store.add_zeros(n + ".ln_b", {D});
    wq = store.add_glorot(n + ".wq", {D, D}, rng);
    bq = store.add_zeros(n + ".bq", {D});
    wk = store.add_glorot(n + ".wk", {D, D}, rng);
    bk = store.add_zeros(n + ".bk", {D});
    wv = store.add_glorot(n + ".wv", {D, D}, rng);
    bv = store.add_zeros(n + ".bv", {D});
    wo = store.add_glorot(n + ".wo", {D, D}, rng);
    bo = store.add_zeros(n + ".bo", {D});
  };
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string n = p + "L" + std::to_string(l);
    Block b;
    attention(n + ".self", b.self_ln_g, b.self_ln_b, b.sq, b.sbq, b.sk, b.sbk, b.sv, b.sbv, b.so, b.sbo);
    attention(n + ".cross", b.cross_ln_g, b.cross_ln_b, b.cq, b.cbq, b.ck, b.cbk, b.cv, b.cbv, b.co, b.cbo);
    b.ff_ln_g = store.add_constant(n + ".ff.ln_g", {D}, 1.0);
    b.ff_ln_b = store.add_zeros(n + ".ff.ln_b", {D});
    b.w1 = store.add_glorot(n + ".ff.w1", {D, F}, rng);
    b.b1 = store.add_zeros(n + ".ff.b1", {F});
    b.w2 = store.add_glorot(n + ".ff.w2", {F, D}, rng);
    b.b2 = store.add_zeros(n + ".ff.b2", {D});
    blocks_.push_back(std::move(b));
  }
  out_g_ = store.add_constant(p + "out.ln_g", {D}, 1.0);
  out_b_ = store.add_zeros(p + "out.ln_b", {D});
  out_w_ = store.add_glorot(p + "out.w", {D, O}, rng);
  out_b2_ = store.add_zeros(p + "out.b", {O});
}

Tensor AttentionDecoder::forward(const Tensor& memory, const std::vector<std::size_t>& inputs) const {
  if (memory.rank() != 2 || memory.cols() != cfg_.dim || memory.rows() == 0) {
    throw DimensionError("decoder: memory " + shape_str(memory.shape()) + " does not match dim " +
                         std::to_string(cfg_.dim));
  }
  const std::size_t L = inputs.size();
  if (L == 0 || L > cfg_.max_length) {
    throw DimensionError("decoder: " + std::to_string(L) + " input tokens outside [1, " +
                         std::to_string(cfg_.max_length) + "]");
  }
  auto causal = std::make_shared<Mask>();
  causal->rows = causal->cols = L;
  causal->allowed.assign(L * L, 0);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j <= i; ++j) causal->allowed[i * L + j] = 1;

  Tensor x = add(embed(tok_, inputs), slice(pos_, 0, 0, L));
  for (const auto& b : blocks_) {
    Tensor n = layer_norm(x, b.self_ln_g, b.self_ln_b);
    x = add(x, multi_head_attention(n, n, cfg_.heads, b.sq, b.sbq, b.sk, b.sbk, b.sv, b.sbv, b.so, b.sbo, causal));
    n = layer_norm(x, b.cross_ln_g, b.cross_ln_b);
    x = add(x, multi_head_attention(n, memory, cfg_.heads, b.cq, b.cbq, b.ck, b.cbk, b.cv, b.cbv, b.co, b.cbo,
                                    nullptr));
    n = layer_norm(x, b.ff_ln_g, b.ff_ln_b);
    x = add(x, linear(relu(linear(n, b.w1, b.b1)), b.w2, b.b2));
  }
  return linear(layer_norm(x, out_g_, out_b_), out_w_, out_b2_);
}

Tensor AttentionDecoder::ce_loss(const Tensor& memory, const LabelSeq& target) const {
  std::vector<std::size_t> inputs{sos()};
  std::vector<std::size_t> outputs;
  for (Label l : target) {
    if (l == 0 || l > label_count_) throw ContractError("decoder_ce: label " + std::to_string(l) + " out of range");
    inputs.push_back(l);
    outputs.push_back(l);
  }
  outputs.push_back(eos());
  return scale(mean(pick(log_softmax(forward(memory, inputs)), outputs)), -1.0);
}

std::vector<double> AttentionDecoder::next_log_probs(const Tensor& memory, const LabelSeq& prefix,
                                                     std::size_t window_end) const {
  NoGradGuard ng;
  if (window_end == 0 || window_end > memory.rows()) {
    throw ContractError("decoder: window end " + std::to_string(window_end) + " outside memory of " +
                        std::to_string(memory.rows()) + " frames");
  }
  std::vector<std::size_t> inputs{sos()};
  inputs.insert(inputs.end(), prefix.begin(), prefix.end());
  const Tensor mem = window_end == memory.rows() ? memory : slice(memory, 0, 0, window_end);
  const Tensor lp = log_softmax(slice(forward(mem, inputs), 0, inputs.size() - 1, inputs.size()));
  return {lp.values().begin(), lp.values().end()};
}

Tensor decoder_ce(const AttentionDecoder& dec, const Tensor& joint_states, const LabelSeq& target) {
  return dec.ce_loss(joint_states, target);
}

double attention_sequence_score(const AttentionDecoder& dec, const Tensor& memory, const LabelSeq& labels) {
  double s = 0.0;
  LabelSeq prefix;
  for (Label l : labels) {
    s += dec.next_log_probs(memory, prefix, memory.rows())[l];
    prefix.push_back(l);
  }
  return s + dec.next_log_probs(memory, prefix, memory.rows())[dec.eos()];
}

namespace {

double joint(double lambda, double ctc_score, double att_score) {
  return lambda * ctc_score + (1.0 - lambda) * att_score;
}

bool hyp_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.joint_score != b.joint_score) return a.joint_score > b.joint_score;
  return a.prefix < b.prefix;
}

}  // namespace

TriggeredAttentionDecoder::TriggeredAttentionDecoder(const AttentionDecoder& dec, DecoderConfig cfg)
    : dec_(dec), cfg_(cfg) {
  cfg_.validate();
  width_ = dec_.output_size() - 1;
  dim_ = dec_.config().dim;
  beam_.push_back({ctc::initial_beam().front(), 0.0});
}

Tensor TriggeredAttentionDecoder::memory(std::size_t rows) const {
  return Tensor({rows, dim_}, std::vector<double>(states_.begin(), states_.begin() + rows * dim_));
}

std::size_t TriggeredAttentionDecoder::window_end(std::size_t t) const {
  const std::size_t room = frames_ - t - 1;  // frames after t currently held
  return cfg_.lookahead_tau >= room ? frames_ : t + cfg_.lookahead_tau + 1;
}

void TriggeredAttentionDecoder::push(const Tensor& log_probs, const Tensor& joint_states) {
  if (finished_) throw ContractError("ta_decode: push after finish");
  if (log_probs.rank() != 2 || log_probs.cols() != width_) {
    throw DimensionError("ta_decode: posterior rows " + shape_str(log_probs.shape()) + " need width " +
                         std::to_string(width_));
  }
  if (joint_states.rank() != 2 || joint_states.cols() != dim_ || joint_states.rows() != log_probs.rows()) {
    throw ContractError("ta_decode: joint states " + shape_str(joint_states.shape()) + " do not pair with " +
                        shape_str(log_probs.shape()) + " posteriors");
  }
  post_.insert(post_.end(), log_probs.values().begin(), log_probs.values().end());
  states_.insert(states_.end(), joint_states.values().begin(), joint_states.values().end());
  frames_ += log_probs.rows();
  while (processed_ < frames_ && !cfg_.offline() && cfg_.lookahead_tau < frames_ - processed_) {
    process_frame(processed_);
  }
}

void TriggeredAttentionDecoder::process_frame(std::size_t t) {
  const std::span<const double> row(post_.data() + t * width_, width_);
  std::vector<ctc::PrefixState> states;
  states.reserve(beam_.size());
  for (const auto& e : beam_) states.push_back(e.ctc);
  auto cands = ctc::expand_frame(states, row, t);

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (is_log_zero(cands[i].state.total())) continue;
    if (cands[i].is_new && cands[i].state.prefix.size() + 1 > dec_.config().max_length) continue;
    order.push_back(i);
  }
  if (cfg_.ctc_beam > 0 && order.size() > cfg_.ctc_beam) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double ta = cands[a].state.total(), tb = cands[b].state.total();
      if (ta != tb) return ta > tb;
      return cands[a].state.prefix < cands[b].state.prefix;
    });
    order.resize(cfg_.ctc_beam);
  }

  const std::size_t wend = window_end(t);
  std::map<std::size_t, std::vector<double>> dist;  // per parent, at this frame's window
  Tensor mem;
  auto parent_dist = [&](std::size_t parent) -> const std::vector<double>& {
    auto it = dist.find(parent);
    if (it == dist.end()) {
      if (!mem.defined()) mem = memory(wend);
      it = dist.emplace(parent, dec_.next_log_probs(mem, beam_[parent].ctc.prefix, wend)).first;
    }
    return it->second;
  };

  if (cfg_.eos_threshold > 0.0) {
    for (std::size_t i = 0; i < beam_.size(); ++i) {
      if (beam_[i].ctc.prefix.empty()) continue;
      const double le = parent_dist(i)[dec_.eos()];
      if (std::exp(le) > cfg_.eos_threshold) {
        Hypothesis h = to_hypothesis(beam_[i]);
        h.att_log_score += le;
        h.joint_score = joint(cfg_.ctc_weight_lambda, h.ctc_log_score, h.att_log_score);
        ended_.push_back(std::move(h));
      }
    }
  }

  std::vector<Entry> next;
  next.reserve(order.size());
  for (std::size_t i : order) {
    auto& c = cands[i];
    const double att = c.is_new ? beam_[c.parent].att + parent_dist(c.parent)[c.token] : beam_[i].att;
    next.push_back({std::move(c.state), att});
  }
  const double lambda = cfg_.ctc_weight_lambda;
  std::sort(next.begin(), next.end(), [&](const Entry& a, const Entry& b) {
    const double ja = joint(lambda, a.ctc.total(), a.att), jb = joint(lambda, b.ctc.total(), b.att);
    if (ja != jb) return ja > jb;
    return a.ctc.prefix < b.ctc.prefix;
  });
  if (next.size() > cfg_.beam) next.resize(cfg_.beam);
  if (next.empty()) throw NumericError("ta_decode: every hypothesis has zero CTC probability at frame " +
                                       std::to_string(t));
  beam_ = std::move(next);
  ++processed_;
}

Hypothesis TriggeredAttentionDecoder::to_hypothesis(const Entry& e) const {
  Hypothesis h;
  h.prefix = e.ctc.prefix;
  h.trigger_frames = e.ctc.triggers;
  h.ctc_log_score = e.ctc.total();
  h.att_log_score = e.att;
  h.joint_score = joint(cfg_.ctc_weight_lambda, h.ctc_log_score, h.att_log_score);
  return h;
}

void TriggeredAttentionDecoder::finish() {
  if (finished_) return;
  if (frames_ == 0) throw ContractError("ta_decode: no frames were pushed");
  finished_ = true;
  while (processed_ < frames_) process_frame(processed_);
  const Tensor mem = memory(frames_);
  final_ = ended_;
  for (const auto& e : beam_) {
    Hypothesis h = to_hypothesis(e);
    h.att_log_score += dec_.next_log_probs(mem, e.ctc.prefix, frames_)[dec_.eos()];
    h.joint_score = joint(cfg_.ctc_weight_lambda, h.ctc_log_score, h.att_log_score);
    final_.push_back(std::move(h));
  }
  std::sort(final_.begin(), final_.end(), hyp_before);
}

std::vector<Hypothesis> TriggeredAttentionDecoder::hypotheses() const {
  if (finished_) return final_;
  std::vector<Hypothesis> out;
  for (const auto& e : beam_) out.push_back(to_hypothesis(e));
  return out;  // beam_ is kept in joint order
}

Hypothesis TriggeredAttentionDecoder::best() const { return hypotheses().front(); }

LabelSeq TriggeredAttentionDecoder::committed_prefix() const {
  if (finished_) return final_.front().prefix;
  LabelSeq common = beam_.front().ctc.prefix;
  for (const auto& e : beam_) {
    const auto& p = e.ctc.prefix;
    std::size_t k = 0;
    while (k < common.size() && k < p.size() && common[k] == p[k]) ++k;
    common.resize(k);
  }
  return common;
}

Hypothesis ta_decode(const ctc::PosteriorMatrix& post, const Tensor& joint_states, const AttentionDecoder& dec,
                     const DecoderConfig& cfg) {
  TriggeredAttentionDecoder ta(dec, cfg);
  ta.push(post.log_probs, joint_states);
  ta.finish();
  return ta.best();
}

Hypothesis offline_joint_decode(const ctc::PosteriorMatrix& post, const Tensor& joint_states,
                                const AttentionDecoder& dec, const DecoderConfig& cfg) {
  cfg.validate();
  const std::size_t T = post.frames();
  if (T == 0) throw ContractError("offline_joint_decode: empty posterior matrix");
  if (joint_states.rank() != 2 || joint_states.rows() != T) {
    throw ContractError("offline_joint_decode: joint states " + shape_str(joint_states.shape()) + " do not pair with " +
                        std::to_string(T) + " frames");
  }
  if (post.width() != dec.output_size() - 1) {
    throw DimensionError("offline_joint_decode: posterior width " + std::to_string(post.width()) +
                         " does not match decoder vocabulary");
  }
  const double lambda = cfg.ctc_weight_lambda;
  const ctc::PrefixScorer scorer(post);
  struct Partial {
    LabelSeq prefix;
    ctc::PrefixScorer::State state;
    double ctc = 0.0;  // prefix score
    double att = 0.0;
    double score = 0.0;
  };
  std::vector<Partial> active{{{}, scorer.initial(), 0.0, 0.0, 0.0}};
  std::vector<Hypothesis> ended;
  const std::size_t max_len = std::min(T, dec.config().max_length - 1);

  for (std::size_t step = 0; step <= max_len && !active.empty(); ++step) {
    std::vector<Partial> cands;
    for (const auto& h : active) {
      const auto dist = dec.next_log_probs(joint_states, h.prefix, T);
      const double fin = scorer.final_score(h.state);
      if (!is_log_zero(fin)) {
        Hypothesis e;
        e.prefix = h.prefix;
        e.ctc_log_score = fin;
        e.att_log_score = h.att + dist[dec.eos()];
        e.joint_score = joint(lambda, e.ctc_log_score, e.att_log_score);
        ended.push_back(std::move(e));
      }
      if (h.prefix.size() >= max_len) continue;
      for (Label c = 1; c < post.width(); ++c) {
        Partial n;
        n.ctc = scorer.extend(h.state, c, &n.state);
        if (is_log_zero(n.ctc)) continue;
        n.prefix = h.prefix;
        n.prefix.push_back(c);
        n.att = h.att + dist[c];
        n.score = joint(lambda, n.ctc, n.att);
        cands.push_back(std::move(n));
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Partial& a, const Partial& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.prefix < b.prefix;
    });
    if (cands.size() > cfg.beam) cands.resize(cfg.beam);
    active = std::move(cands);
    // A prefix score bounds every completion below it (CTC prefix mass and
    // attention log-probabilities only shrink), so stop once nothing can win.
    if (!ended.empty() && !active.empty()) {
      const double best_end = std::max_element(ended.begin(), ended.end(), [](const auto& a, const auto& b) {
                                return hyp_before(b, a);
                              })->joint_score;
      if (best_end > active.front().score) break;
    }
  }
  if (ended.empty()) throw NumericError("offline_joint_decode: no complete hypothesis has non-zero CTC probability");
  std::sort(ended.begin(), ended.end(), hyp_before);
  Hypothesis best = ended.front();
  best.trigger_frames = ctc::token_start_frames(ctc::forced_align(post, best.prefix).path.labels);
  return best;
}

}  // namespace avsr::decoder
