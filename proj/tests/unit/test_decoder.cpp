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

#include <cmath>
#include <cstring>

#include "avsr/decoder/decoder.hpp"
#include "avsr/errors.hpp"
#include "avsr/numcore/ops.hpp"
#include "avsr/numcore/optim.hpp"
#include "doctest.h"
#include "support/decode_oracle.hpp"
#include "support/gradcheck.hpp"

using namespace avsr;
using namespace avsr::decoder;

namespace {

DecoderConfig tiny(std::size_t dim = 4) {
  DecoderConfig c;
  c.layers = 1;
  c.dim = dim;
  c.heads = 2;
  c.ff_dim = 6;
  c.max_length = 8;
  return c;
}

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double s = 1.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = s * rng.normal();
  return Tensor({r, c}, v);
}

ctc::PosteriorMatrix random_post(Rng& rng, std::size_t T, std::size_t W, double sharp = 1.5) {
  return {log_softmax(random_matrix(rng, T, W, sharp)), 40.0};
}

void check_decomposition(const Hypothesis& h, double lambda) {
  CHECK(h.joint_score == doctest::Approx(lambda * h.ctc_log_score + (1 - lambda) * h.att_log_score).epsilon(1e-12));
  for (std::size_t i = 1; i < h.trigger_frames.size(); ++i) CHECK(h.trigger_frames[i - 1] < h.trigger_frames[i]);
}

}  // namespace

TEST_SUITE("decoder") {
  TEST_CASE("uniform output gives ln(V+2) per token") {
    ParamStore store;
    Rng rng(1);
    AttentionDecoder dec(tiny(), 5, "dec.", store, rng);
    Tensor w = store.get("dec.out.w");
    for (auto& v : w.values_mut()) v = 0.0;
    const Tensor mem = random_matrix(rng, 6, 4);
    CHECK(decoder_ce(dec, mem, {1, 2, 3}).item() == doctest::Approx(std::log(7.0)).epsilon(1e-12));
    CHECK(decoder_ce(dec, mem, {}).item() == doctest::Approx(std::log(7.0)).epsilon(1e-12));
  }

  TEST_CASE("empty target scores only the end sentinel") {
    ParamStore store;
    Rng rng(2);
    AttentionDecoder dec(tiny(), 3, "dec.", store, rng);
    const Tensor mem = random_matrix(rng, 5, 4);
    const auto lp = dec.next_log_probs(mem, {}, 5);
    CHECK(decoder_ce(dec, mem, {}).item() == doctest::Approx(-lp[dec.eos()]).epsilon(1e-12));
  }

  TEST_CASE("decoder CE gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      ParamStore store;
      Rng rng(10 + seed);
      AttentionDecoder dec(tiny(), 3, "dec.", store, rng);
      REQUIRE(store.parameter_count() <= 500);
      Tensor mem = random_matrix(rng, 4, 4);
      mem.set_requires_grad(true);
      auto params = store.tensors();
      params.push_back(mem);
      const auto r = testing::grad_check([&] { return decoder_ce(dec, mem, {2, 1}); }, params);
      INFO(r.worst_where);
      CHECK(r.ok);
    }
  }

  TEST_CASE("config round trip and validation") {
    DecoderConfig c;
    c.lookahead_tau = kUnboundedLookahead;
    c.ctc_weight_lambda = 0.3;
    const auto back = DecoderConfig::from_kv(c.to_kv("d."), "d.", DecoderConfig{});
    CHECK(back.offline());
    CHECK(back.ctc_weight_lambda == 0.3);
    c.beam = 0;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("beam"), ContractError);
  }

  TEST_CASE("lambda one reproduces the CTC prefix beam search") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      ParamStore store;
      Rng rng(seed);
      AttentionDecoder dec(tiny(), 3, "dec.", store, rng);
      const std::size_t T = 3 + rng.index(6);
      const auto post = random_post(rng, T, 4);
      const Tensor mem = random_matrix(rng, T, 4);
      DecoderConfig cfg = tiny();
      cfg.ctc_weight_lambda = 1.0;
      cfg.beam = 3;
      cfg.lookahead_tau = 1;
      const auto h = ta_decode(post, mem, dec, cfg);
      const auto top = ctc::prefix_beam_search(post, 3).front();
      CHECK(h.prefix == top.labels);
      CHECK(h.trigger_frames == top.trigger_frames);
      CHECK(h.ctc_log_score == top.log_score);
    }
  }

  TEST_CASE("incremental pushes match one-shot decoding") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      ParamStore store;
      Rng rng(50 + seed);
      AttentionDecoder dec(tiny(), 4, "dec.", store, rng);
      const std::size_t T = 12;
      const auto post = random_post(rng, T, 5);
      const Tensor mem = random_matrix(rng, T, 4);
      DecoderConfig cfg = tiny();
      cfg.lookahead_tau = 2;
      cfg.beam = 3;
      const auto batch = ta_decode(post, mem, dec, cfg);
      TriggeredAttentionDecoder inc(dec, cfg);
      LabelSeq committed;
      for (std::size_t t = 0; t < T; t += 3) {
        inc.push(slice(post.log_probs, 0, t, t + 3), slice(mem, 0, t, t + 3));
        CHECK(inc.frames_processed() == t + 3 - 2);
        const auto now = inc.committed_prefix();
        CHECK(std::equal(committed.begin(), committed.end(), now.begin()));
        committed = now;
      }
      inc.finish();
      const auto h = inc.best();
      CHECK(h.prefix == batch.prefix);
      CHECK(h.joint_score == batch.joint_score);
      CHECK(std::equal(committed.begin(), committed.end(), h.prefix.begin()));
      for (const auto& x : inc.hypotheses()) check_decomposition(x, cfg.ctc_weight_lambda);
    }
  }

  TEST_CASE("frames beyond the look-ahead never influence a step") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      ParamStore store;
      Rng rng(70 + seed);
      AttentionDecoder dec(tiny(), 3, "dec.", store, rng);
      const std::size_t T = 10, tau = 2, cut = 6;
      const auto post = random_post(rng, T, 4);
      const Tensor mem = random_matrix(rng, T, 4);
      std::vector<double> pv(mem.values().begin(), mem.values().end());
      for (std::size_t i = cut * 4; i < pv.size(); ++i) pv[i] += rng.normal();
      const Tensor mem2({T, 4}, pv);
      DecoderConfig cfg = tiny();
      cfg.lookahead_tau = tau;
      // With `cut` frames pushed, frames [0, cut - tau) are processed and each
      // step attended at most up to frame cut - 1, so perturbing later frames
      // must leave every score untouched.
      TriggeredAttentionDecoder a2(dec, cfg), b2(dec, cfg);
      a2.push(slice(post.log_probs, 0, 0, cut), slice(mem, 0, 0, cut));
      b2.push(slice(post.log_probs, 0, 0, cut), slice(mem2, 0, 0, cut));
      const auto ha = a2.hypotheses(), hb = b2.hypotheses();
      REQUIRE(ha.size() == hb.size());
      for (std::size_t i = 0; i < ha.size(); ++i) {
        CHECK(ha[i].prefix == hb[i].prefix);
        CHECK(std::memcmp(&ha[i].att_log_score, &hb[i].att_log_score, sizeof(double)) == 0);
      }
      CHECK(a2.frames_processed() == cut - tau);
    }
  }

  TEST_CASE("unbounded look-ahead with exhaustive beams matches the oracle") {
    std::size_t agree = 0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      ParamStore store;
      Rng rng(200 + seed);
      const std::size_t V = 2 + rng.index(2);
      AttentionDecoder dec(tiny(), V, "dec.", store, rng);
      const std::size_t T = 1 + rng.index(4);
      const auto post = random_post(rng, T, V + 1);
      const Tensor mem = random_matrix(rng, T, 4);
      DecoderConfig cfg = tiny();
      cfg.lookahead_tau = kUnboundedLookahead;
      cfg.beam = 100000;
      cfg.ctc_weight_lambda = 0.3 + 0.4 * rng.uniform();
      const auto oracle = testing::brute_force_joint(post, mem, dec, cfg.ctc_weight_lambda);
      const auto ta = ta_decode(post, mem, dec, cfg);
      const auto off = offline_joint_decode(post, mem, dec, cfg);
      CHECK(ta.prefix == off.prefix);
      CHECK(ta.joint_score == doctest::Approx(oracle.best_score).epsilon(1e-9));
      CHECK(off.joint_score == doctest::Approx(oracle.best_score).epsilon(1e-9));
      check_decomposition(ta, cfg.ctc_weight_lambda);
      check_decomposition(off, cfg.ctc_weight_lambda);
      agree += ta.prefix == oracle.best;
    }
    CHECK(agree == 30);
  }

  TEST_CASE("wider offline beam never scores worse on these instances") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      ParamStore store;
      Rng rng(300 + seed);
      AttentionDecoder dec(tiny(), 4, "dec.", store, rng);
      const std::size_t T = 6;
      const auto post = random_post(rng, T, 5);
      const Tensor mem = random_matrix(rng, T, 4);
      DecoderConfig cfg = tiny();
      cfg.beam = 1;
      const double narrow = offline_joint_decode(post, mem, dec, cfg).joint_score;
      cfg.beam = 8;
      CHECK(offline_joint_decode(post, mem, dec, cfg).joint_score >= narrow);
    }
  }

  TEST_CASE("all-blank input decodes to nothing") {
    ParamStore store;
    Rng rng(9);
    AttentionDecoder dec(tiny(), 3, "dec.", store, rng);
    std::vector<double> lp(5 * 4, ctc::kLogZero);
    for (std::size_t t = 0; t < 5; ++t) lp[t * 4] = 0.0;
    const ctc::PosteriorMatrix post{Tensor({5, 4}, lp), 40.0};
    DecoderConfig cfg = tiny();
    cfg.ctc_weight_lambda = 1.0;
    const Tensor mem = random_matrix(rng, 5, 4);
    CHECK(offline_joint_decode(post, mem, dec, cfg).prefix.empty());
    CHECK(ta_decode(post, mem, dec, cfg).prefix.empty());
  }

  TEST_CASE("trained decoder with one-hot posteriors recovers the argmax collapse") {
    ParamStore store;
    Rng rng(21);
    DecoderConfig cfg = tiny(8);
    cfg.ff_dim = 16;
    AttentionDecoder dec(cfg, 4, "dec.", store, rng);
    std::vector<Tensor> mems;
    std::vector<LabelSeq> paths;
    for (int u = 0; u < 5; ++u) {
      mems.push_back(random_matrix(rng, 6, 8));
      LabelSeq p(6);
      for (auto& l : p) l = rng.index(5);
      paths.push_back(p);
    }
    AdamW opt(store.tensors(), 0.01, WarmupCosine(10, 600));
    double loss = 1.0;
    for (int step = 0; step < 600 && loss >= 0.01; ++step) {
      store.zero_grad();
      Tensor total = Tensor::scalar(0.0);
      for (int u = 0; u < 5; ++u) total = add(total, decoder_ce(dec, mems[u], ctc::collapse(paths[u])));
      total = scale(total, 0.2);
      backward(total);
      opt.step();
      loss = total.item();
    }
    REQUIRE(loss < 0.01);
    for (int u = 0; u < 5; ++u) {
      std::vector<double> lp(6 * 5, ctc::kLogZero);
      for (std::size_t t = 0; t < 6; ++t) lp[t * 5 + paths[u][t]] = 0.0;
      const ctc::PosteriorMatrix post{Tensor({6, 5}, lp), 40.0};
      const auto h = offline_joint_decode(post, mems[u], dec, cfg);
      CHECK(h.prefix == ctc::collapse(paths[u]));
      check_decomposition(h, cfg.ctc_weight_lambda);
    }
  }

  TEST_CASE("early end threshold finalises confident prefixes") {
    ParamStore store;
    Rng rng(31);
    AttentionDecoder dec(tiny(), 3, "dec.", store, rng);
    const auto post = random_post(rng, 8, 4);
    const Tensor mem = random_matrix(rng, 8, 4);
    DecoderConfig cfg = tiny();
    cfg.eos_threshold = 1e-6;
    const auto h = ta_decode(post, mem, dec, cfg);
    check_decomposition(h, cfg.ctc_weight_lambda);
  }
}
