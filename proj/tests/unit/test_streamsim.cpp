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

#include <cstring>
#include <filesystem>
#include <fstream>

#include "avsr/errors.hpp"
#include "avsr/streamsim/streamsim.hpp"
#include "doctest.h"

using namespace avsr;
using namespace avsr::streamsim;

namespace {

fusion::ModelConfig small_model(std::size_t chunk = 4) {
  fusion::ModelConfig m;
  m.labels = 6;
  for (auto* e : {&m.audio, &m.visual}) {
    e->input_dim = 4;
    e->layers = 1;
    e->dim = 8;
    e->heads = 2;
    e->ff_dim = 8;
    e->conv_kernel = 3;
    e->chunk_frames = chunk;
    e->max_positions = 64;
  }
  m.fusion.hidden = 8;
  m.fusion.dim = 8;
  m.decoder.dim = 8;
  m.decoder.ff_dim = 8;
  m.decoder.lookahead_tau = 2;
  m.decoder.beam = 3;
  return m;
}

synthdata::Corpus small_corpus(std::size_t n) {
  synthdata::GenSpec s;
  s.labels = 6;
  s.audio_dim = s.visual_dim = 4;
  s.min_frames = 12;
  s.max_frames = 30;
  s.snr_db_choices = {0.0, 10.0};
  return synthdata::generate(s, n);
}

bool is_prefix(const ctc::LabelSeq& p, const ctc::LabelSeq& of) {
  return p.size() <= of.size() && std::equal(p.begin(), p.end(), of.begin());
}

}  // namespace

TEST_SUITE("streamsim") {
  TEST_CASE("latency budget with the reference settings") {
    fusion::ModelConfig m;  // audio front-end 35 ms, visual 100 ms, 12-frame chunks, tau 12
    const LatencyBudget b = compute_latency(m);
    CHECK_FALSE(b.offline);
    CHECK(b.audio_encoder_ms == 515.0);
    CHECK(b.visual_encoder_ms == 580.0);
    CHECK(b.encoder_ms == 580.0);
    CHECK(b.decoder_ms == 480.0);
    CHECK(b.end_to_end_ms == 1060.0);
  }

  TEST_CASE("offline configurations have no finite latency") {
    fusion::ModelConfig m;
    m.audio.chunk_frames = m.visual.chunk_frames = 0;
    m.audio.frontend_delay_ms = m.visual.frontend_delay_ms = 0;
    m.decoder.lookahead_tau = decoder::kUnboundedLookahead;
    const LatencyBudget b = compute_latency(m);
    CHECK(b.offline);
    CHECK(std::isinf(b.end_to_end_ms));
    fusion::ModelConfig only_dec;
    only_dec.decoder.lookahead_tau = decoder::kUnboundedLookahead;
    const LatencyBudget d = compute_latency(only_dec);
    CHECK(d.offline);
    CHECK(d.encoder_ms == 580.0);
  }

  TEST_CASE("session final output equals batch decoding bit for bit") {
    const auto corpus = small_corpus(20);
    fusion::AvModel model(small_model(), 3);
    for (const auto& u : corpus.utterances) {
      std::size_t calls = 0;
      SessionConfig sc;
      sc.on_chunk = [&](std::size_t, double ms) {
        ++calls;
        CHECK(ms >= 0.0);
      };
      const SessionResult s = run_streaming_session(u, model, sc);
      const decoder::Hypothesis b = batch_decode(u, model, model.config().decoder);
      CHECK(s.final.prefix == b.prefix);
      CHECK(s.final.trigger_frames == b.trigger_frames);
      CHECK(std::memcmp(&s.final.joint_score, &b.joint_score, sizeof(double)) == 0);
      REQUIRE(!s.events.empty());
      CHECK(s.events.back().final);
      CHECK(s.events.back().partial == b.prefix);
      CHECK(calls == s.events.size());
      CHECK(s.events.size() == (u.frames() + 3) / 4);
      // Committed output only ever grows and is never revised.
      for (std::size_t i = 0; i < s.events.size(); ++i) {
        CHECK(is_prefix(s.events[i].committed, b.prefix));
        if (i > 0) CHECK(is_prefix(s.events[i - 1].committed, s.events[i].committed));
        CHECK(s.events[i].ms_elapsed_algorithmic ==
              s.events[i].frames_received * 40.0 + model.config().visual.frontend_delay_ms);
      }
    }
  }

  TEST_CASE("arrival granularity does not change the result") {
    const auto corpus = small_corpus(5);
    fusion::AvModel model(small_model(), 5);
    for (const auto& u : corpus.utterances) {
      const auto ref = batch_decode(u, model, model.config().decoder);
      for (std::size_t chunk : {1, 3, 7}) {
        SessionConfig sc;
        sc.chunk_frames = chunk;
        const auto s = run_streaming_session(u, model, sc);
        CHECK(s.final.prefix == ref.prefix);
        CHECK(std::memcmp(&s.final.joint_score, &ref.joint_score, sizeof(double)) == 0);
      }
    }
  }

  TEST_CASE("single-chunk utterance gives one event") {
    const auto corpus = small_corpus(1);
    fusion::AvModel model(small_model(64), 1);
    const auto s = run_streaming_session(corpus.utterances[0], model);
    CHECK(s.events.size() == 1);
    CHECK(s.events[0].final);
  }

  TEST_CASE("stream length mismatch is a contract error") {
    auto u = small_corpus(1).utterances[0];
    u.stream_v = Tensor({u.frames() - 1, 4}, std::vector<double>((u.frames() - 1) * 4, 0.0));
    fusion::AvModel model(small_model(), 1);
    CHECK_THROWS_AS(run_streaming_session(u, model), ContractError);
  }

  TEST_CASE("event log has one line per event") {
    const auto corpus = small_corpus(1);
    fusion::AvModel model(small_model(), 2);
    const auto s = run_streaming_session(corpus.utterances[0], model);
    const auto path = std::filesystem::temp_directory_path() / "avsr_session.jsonl";
    s.write_jsonl(path, ctc::Vocab::letters(6), "seed=1");
    std::ifstream f(path);
    std::size_t lines = 0;
    for (std::string line; std::getline(f, line);) {
      if (lines > 0) CHECK(line.find("\"partial_text\"") != std::string::npos);
      ++lines;
    }
    CHECK(lines == s.events.size() + 1);
    std::filesystem::remove(path);
  }

  TEST_CASE("causality audit") {
    SUBCASE("compliant streaming model passes") {
      fusion::AvModel model(small_model(), 7);
      const auto r = causality_audit(model, {200, 20, 3});
      CHECK(r.passed());
      CHECK(r.probes == 200);
      CHECK(r.violations == 0);
    }
    SUBCASE("unequal chunk grids pass") {
      auto cfg = small_model(3);
      cfg.visual.chunk_frames = 5;
      fusion::AvModel model(cfg, 7);
      CHECK(causality_audit(model, {200, 20, 3}).passed());
    }
    SUBCASE("non-causal convolution is caught") {
      auto cfg = small_model();
      cfg.audio.causal_conv = false;
      fusion::AvModel model(cfg, 7);
      const auto r = causality_audit(model, {200, 20, 3});
      CHECK(r.status == AuditReport::Status::kFail);
      REQUIRE(r.first_violation);
      const auto [probe, frame] = *r.first_violation;
      CHECK(frame < horizon_end(cfg.audio, 20, probe));
      CHECK(r.summary().find("probe") != std::string::npos);
    }
    SUBCASE("offline model is skipped") {
      fusion::AvModel model(small_model(0), 7);
      const auto r = causality_audit(model, {10, 20, 3});
      CHECK(r.status == AuditReport::Status::kSkipped);
      CHECK(r.probes == 0);
    }
  }
}
