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

#include "avsr/streamsim/streamsim.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "avsr/errors.hpp"
#include "avsr/numcore/ops.hpp"

namespace avsr::streamsim {

using encoder::EncoderConfig;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Tensor rows(const Tensor& x, std::size_t begin, std::size_t end) { return slice(x, 0, begin, end); }

// Completed-chunk encoder cache for one stream.
class StreamCache {
 public:
  StreamCache(const encoder::Encoder& enc, const Tensor& features) : enc_(enc), features_(features) {}

  // Frames of encoder output that can be final once `received` input frames
  // have arrived.
  std::size_t ready(std::size_t received, std::size_t total) const {
    if (received >= total) return total;
    const std::size_t c = enc_.config().chunk_frames;
    if (c == 0) return 0;
    return received / c * c;
  }

  // Encodes the received prefix and appends the newly final rows.
  void advance(std::size_t received, std::size_t total) {
    const std::size_t end = ready(received, total);
    if (end <= done_) return;
    const Tensor out = enc_.encode(rows(features_, 0, end)).frames;
    const auto v = out.values();
    const std::size_t d = out.cols();
    cache_.insert(cache_.end(), v.begin() + static_cast<std::ptrdiff_t>(done_ * d), v.end());
    done_ = end;
    dim_ = d;
  }

  std::size_t done() const { return done_; }
  Tensor slice_rows(std::size_t begin, std::size_t end) const {
    return Tensor({end - begin, dim_},
                  std::vector<double>(cache_.begin() + static_cast<std::ptrdiff_t>(begin * dim_),
                                      cache_.begin() + static_cast<std::ptrdiff_t>(end * dim_)));
  }

 private:
  const encoder::Encoder& enc_;
  const Tensor& features_;
  std::vector<double> cache_;
  std::size_t done_ = 0;
  std::size_t dim_ = 0;
};

bool row_bits_equal(const Tensor& a, const Tensor& b, std::size_t t) {
  const std::size_t w = a.cols();
  return std::memcmp(a.values().data() + t * w, b.values().data() + t * w, w * sizeof(double)) == 0;
}

}  // namespace

LatencyBudget compute_latency(const EncoderConfig& audio, const EncoderConfig& visual,
                              const decoder::DecoderConfig& dec) {
  LatencyBudget b;
  b.frontend_delay_ms_audio = audio.frontend_delay_ms;
  b.frontend_delay_ms_visual = visual.frontend_delay_ms;
  b.encoder_lookahead_frames_audio = audio.chunk_frames;
  b.encoder_lookahead_frames_visual = visual.chunk_frames;
  b.frame_ms = audio.frame_ms;
  b.offline = !audio.streaming() || !visual.streaming() || dec.offline();
  if (b.offline) {
    b.decoder_lookahead_frames = dec.offline() ? 0 : dec.lookahead_tau;
    b.audio_encoder_ms = audio.streaming() ? audio.frontend_delay_ms + audio.chunk_frames * audio.frame_ms : kInf;
    b.visual_encoder_ms =
        visual.streaming() ? visual.frontend_delay_ms + visual.chunk_frames * visual.frame_ms : kInf;
    b.encoder_ms = std::max(b.audio_encoder_ms, b.visual_encoder_ms);
    b.decoder_ms = dec.offline() ? kInf : b.decoder_lookahead_frames * b.frame_ms;
    b.end_to_end_ms = kInf;
    return b;
  }
  b.decoder_lookahead_frames = dec.lookahead_tau;
  b.audio_encoder_ms = audio.frontend_delay_ms + static_cast<double>(audio.chunk_frames) * audio.frame_ms;
  b.visual_encoder_ms = visual.frontend_delay_ms + static_cast<double>(visual.chunk_frames) * visual.frame_ms;
  b.encoder_ms = std::max(b.audio_encoder_ms, b.visual_encoder_ms);
  b.decoder_ms = static_cast<double>(dec.lookahead_tau) * b.frame_ms;
  b.end_to_end_ms = b.encoder_ms + b.decoder_ms;
  return b;
}

LatencyBudget compute_latency(const fusion::ModelConfig& cfg) {
  return compute_latency(cfg.audio, cfg.visual, cfg.decoder);
}

SessionResult run_streaming_session(const synthdata::Utterance& u, const fusion::AvModel& model,
                                    const SessionConfig& cfg) {
  const std::size_t T = u.stream_a.rows();
  if (u.stream_v.rows() != T) {
    throw ContractError("run_streaming_session: audio has " + std::to_string(T) + " frames, visual " +
                        std::to_string(u.stream_v.rows()));
  }
  if (T == 0) throw ContractError("run_streaming_session: empty utterance");
  const auto& mc = model.config();
  const decoder::DecoderConfig dcfg = cfg.decoder.value_or(mc.decoder);
  std::size_t chunk = cfg.chunk_frames;
  if (chunk == 0) chunk = mc.audio.streaming() ? mc.audio.chunk_frames : T;
  const double fe_delay = std::max(mc.audio.frontend_delay_ms, mc.visual.frontend_delay_ms);

  NoGradGuard ng;
  StreamCache ca(model.encoder(encoder::Stream::kAudio), u.stream_a);
  StreamCache cv(model.encoder(encoder::Stream::kVisual), u.stream_v);
  decoder::TriggeredAttentionDecoder ta(model.attention_decoder(), dcfg);
  std::size_t pushed = 0;

  SessionResult res;
  for (std::size_t received = 0, index = 0; received < T; ++index) {
    const auto t0 = std::chrono::steady_clock::now();
    received = std::min(received + chunk, T);
    ca.advance(received, T);
    cv.advance(received, T);
    const std::size_t joint_end = std::min(ca.done(), cv.done());
    if (joint_end > pushed) {
      encoder::EncoderStates ha{ca.slice_rows(pushed, joint_end), encoder::Stream::kAudio};
      encoder::EncoderStates hv{cv.slice_rows(pushed, joint_end), encoder::Stream::kVisual};
      const Tensor joint = fusion::fuse(model.mlp(), ha, hv);
      const Tensor lp = model.head_av().log_probs(joint);
      ta.push(lp, joint);
      pushed = joint_end;
    }
    const bool last = received == T;
    if (last) ta.finish();

    SessionEvent ev;
    ev.chunk_index = index;
    ev.frames_received = received;
    ev.ms_elapsed_algorithmic = static_cast<double>(received) * mc.audio.frame_ms + fe_delay;
    const auto best = ta.best();
    ev.partial = best.prefix;
    ev.partial_score = best.joint_score;
    ev.committed = last ? best.prefix : ta.committed_prefix();
    ev.final = last;
    res.events.push_back(std::move(ev));
    if (last) res.final = best;
    if (cfg.on_chunk) {
      const std::chrono::duration<double, std::milli> dt = std::chrono::steady_clock::now() - t0;
      cfg.on_chunk(index, dt.count());
    }
  }
  return res;
}

decoder::Hypothesis batch_decode(const synthdata::Utterance& u, const fusion::AvModel& model,
                                 const decoder::DecoderConfig& dec) {
  NoGradGuard ng;
  const auto out = model.forward(u.stream_a, u.stream_v);
  ctc::PosteriorMatrix post{out.lp_av, model.config().audio.frame_ms};
  return decoder::ta_decode(post, out.joint, model.attention_decoder(), dec);
}

void SessionResult::write_jsonl(const std::filesystem::path& path, const ctc::Vocab& vocab,
                                const std::string& run_config) const {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  if (!run_config.empty()) {
    f << nlohmann::json{{"type", "config"}, {"run_config", run_config}}.dump() << '\n';
  }
  for (const auto& e : events) {
    nlohmann::json j;
    j["chunk_index"] = e.chunk_index;
    j["ms_elapsed_algorithmic"] = e.ms_elapsed_algorithmic;
    j["partial_text"] = vocab.decode(e.partial);
    j["committed_text"] = vocab.decode(e.committed);
    j["frames_received"] = e.frames_received;
    j["score"] = e.partial_score;
    j["final"] = e.final;
    f << j.dump() << '\n';
  }
}

std::size_t horizon_end(const EncoderConfig& cfg, std::size_t frames, std::size_t t) {
  if (cfg.chunk_frames == 0) return frames;
  return std::min((t / cfg.chunk_frames + 1) * cfg.chunk_frames, frames);
}

std::string AuditReport::summary() const {
  std::ostringstream os;
  switch (status) {
    case Status::kPass:
      os << "pass: " << probes << " probes";
      break;
    case Status::kFail:
      os << "fail: " << violations << " of " << probes << " probes changed outputs inside their horizon";
      if (first_violation) os << "; first at probe " << first_violation->first << ", frame " << first_violation->second;
      break;
    case Status::kSkipped:
      os << "skipped: " << reason;
      break;
  }
  return os.str();
}

AuditReport causality_audit(const fusion::AvModel& model, const AuditConfig& cfg) {
  AuditReport rep;
  const auto& mc = model.config();
  if (!mc.audio.streaming() || !mc.visual.streaming()) {
    rep.status = AuditReport::Status::kSkipped;
    rep.reason = "offline encoder (chunk_frames = 0) has no causal horizon";
    return rep;
  }
  const std::size_t T = cfg.frames;
  if (T < 2) throw ContractError("causality_audit: need at least two frames");
  NoGradGuard ng;
  Rng rng(cfg.seed);
  auto random_input = [&](std::size_t dim) {
    std::vector<double> v(T * dim);
    for (auto& x : v) x = rng.normal();
    return v;
  };
  rep.status = AuditReport::Status::kPass;
  for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
    const std::size_t da = mc.audio.input_dim, dv = mc.visual.input_dim;
    auto xa = random_input(da), xv = random_input(dv);
    const std::size_t p = rng.index(T);
    auto joint_horizon = [&](std::size_t t) {
      return std::max(horizon_end(mc.audio, T, t), horizon_end(mc.visual, T, t));
    };
    const std::size_t h = joint_horizon(p);
    if (h >= T) {
      ++rep.probes;  // nothing lies beyond the horizon; trivially compliant
      continue;
    }
    const auto ref = model.forward(Tensor({T, da}, xa), Tensor({T, dv}, xv));
    for (std::size_t t = h; t < T; ++t) {
      for (std::size_t f = 0; f < da; ++f) xa[t * da + f] += 1.0 + rng.normal();
      for (std::size_t f = 0; f < dv; ++f) xv[t * dv + f] += 1.0 + rng.normal();
    }
    const auto out = model.forward(Tensor({T, da}, xa), Tensor({T, dv}, xv));
    ++rep.probes;
    // Rows whose own horizon lies within h; with unequal chunk grids an
    // earlier row of one stream may legitimately see past p's horizon.
    for (std::size_t t = 0; t < h && joint_horizon(t) <= h; ++t) {
      if (!row_bits_equal(ref.joint, out.joint, t) || !row_bits_equal(ref.lp_av, out.lp_av, t)) {
        ++rep.violations;
        if (!rep.first_violation) rep.first_violation = std::make_pair(p, t);
        rep.status = AuditReport::Status::kFail;
        break;
      }
    }
  }
  return rep;
}

}  // namespace avsr::streamsim
