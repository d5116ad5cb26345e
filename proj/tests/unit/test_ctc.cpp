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

#include <algorithm>
#include <cmath>

#include "avsr/ctc/ctc.hpp"
#include "avsr/errors.hpp"
#include "avsr/numcore/ops.hpp"
#include "avsr/numcore/random.hpp"
#include "doctest.h"
#include "support/ctc_oracle.hpp"
#include "support/gradcheck.hpp"

using namespace avsr;
using ctc::Label;
using ctc::LabelSeq;

namespace {

ctc::PosteriorMatrix from_probs(std::size_t T, std::size_t W, const std::vector<double>& probs) {
  std::vector<double> lp(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) lp[i] = probs[i] > 0 ? std::log(probs[i]) : ctc::kLogZero;
  return {Tensor({T, W}, lp), 40.0};
}

ctc::PosteriorMatrix random_post(Rng& rng, std::size_t T, std::size_t W, double sharpness = 1.5) {
  std::vector<double> logits(T * W);
  for (auto& x : logits) x = sharpness * rng.normal();
  return {log_softmax(Tensor({T, W}, logits)), 40.0};
}

LabelSeq random_target(Rng& rng, std::size_t max_len, std::size_t labels, std::size_t T) {
  while (true) {
    LabelSeq t(rng.index(max_len + 1));
    for (auto& l : t) l = 1 + rng.index(labels);
    if (ctc::feasible(t, T)) return t;
  }
}

std::vector<double> values_of(const ctc::PosteriorMatrix& p) {
  return {p.log_probs.values().begin(), p.log_probs.values().end()};
}

}  // namespace

TEST_SUITE("ctc") {
  TEST_CASE("collapse rule") {
    CHECK(ctc::collapse(LabelSeq{1, 1, 0, 2, 2}) == LabelSeq{1, 2});
    CHECK(ctc::collapse(LabelSeq{0, 0, 0}).empty());
    CHECK(ctc::collapse(LabelSeq{1, 0, 1}) == LabelSeq{1, 1});
    CHECK(ctc::token_start_frames(LabelSeq{0, 1, 1, 0, 2, 1}) == std::vector<std::size_t>{1, 4, 5});
  }

  TEST_CASE("feasibility counts blanks between repeats") {
    CHECK(ctc::min_frames(LabelSeq{1, 1, 2}) == 4);
    CHECK(ctc::feasible(LabelSeq{1, 2}, 2));
    CHECK_FALSE(ctc::feasible(LabelSeq{1, 1}, 2));
    CHECK(ctc::feasible(LabelSeq{}, 1));
  }

  TEST_CASE("loss on the two-frame uniform example") {
    const auto post = from_probs(2, 2, {0.5, 0.5, 0.5, 0.5});
    const double oracle = -testing::brute_force_log_likelihood(values_of(post), 2, 2, {1});
    CHECK(std::abs(oracle - (-std::log(0.75))) < 1e-12);
    CHECK(std::abs(ctc::ctc_loss(post, LabelSeq{1}).item() - oracle) < 1e-12);
    CHECK(ctc::ctc_loss(post, LabelSeq{1}).item() == doctest::Approx(0.2877).epsilon(1e-4));
  }

  TEST_CASE("single forced alignment has zero loss") {
    const auto post = from_probs(1, 2, {0.0, 1.0});
    CHECK(std::abs(ctc::ctc_loss(post, LabelSeq{1}).item()) < 1e-12);
  }

  TEST_CASE("loss matches exhaustive enumeration") {
    Rng rng(11);
    for (int trial = 0; trial < 150; ++trial) {
      const std::size_t T = 1 + rng.index(6), V = 1 + rng.index(4), W = V + 1;
      const auto post = random_post(rng, T, W);
      const auto target = random_target(rng, 3, V, T);
      const double oracle = testing::brute_force_log_likelihood(values_of(post), T, W, target);
      CHECK(std::abs(-ctc::ctc_loss(post, target).item() - oracle) < 1e-6);
      CHECK(std::abs(ctc::sequence_log_prob(post, target) - oracle) < 1e-6);
    }
  }

  TEST_CASE("infeasible targets are reported distinctly") {
    const auto post = from_probs(2, 2, {0.5, 0.5, 0.5, 0.5});
    CHECK_THROWS_AS(ctc::ctc_loss(post, LabelSeq{1, 1}), InfeasibleTargetError);
    CHECK_THROWS_AS(ctc::forced_align(post, LabelSeq{1, 1, 1}), InfeasibleTargetError);
    CHECK_THROWS_AS(ctc::ctc_loss(post, LabelSeq{0}), ContractError);
  }

  TEST_CASE("loss gradient matches finite differences") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t T = 2 + rng.index(5), V = 1 + rng.index(3), W = V + 1;
      std::vector<double> v(T * W);
      for (auto& x : v) x = -std::abs(rng.normal()) - 0.1;
      Tensor lp({T, W}, v, true);
      const auto target = random_target(rng, 3, V, T);
      const auto r = testing::grad_check([&] { return ctc::ctc_loss(lp, target); }, {lp});
      INFO(r.worst_where);
      CHECK(r.ok);
    }
  }

  TEST_CASE("forced alignment example") {
    const auto post = from_probs(2, 2, {0.1, 0.9, 0.8, 0.2});
    const auto fa = ctc::forced_align(post, LabelSeq{1});
    CHECK(fa.path.labels == LabelSeq{1, 0});
    CHECK(std::exp(fa.log_prob) == doctest::Approx(0.72));
  }

  TEST_CASE("target as long as the input is returned verbatim") {
    Rng rng(13);
    const auto post = random_post(rng, 4, 5);
    const LabelSeq target{2, 4, 1, 3};
    CHECK(ctc::forced_align(post, target).path.labels == target);
  }

  TEST_CASE("ties prefer blank then lower labels, left to right") {
    const auto uniform = from_probs(3, 2, std::vector<double>(6, 0.5));
    CHECK(ctc::forced_align(uniform, LabelSeq{1}).path.labels == LabelSeq{0, 0, 1});
    const auto uniform3 = from_probs(4, 3, std::vector<double>(12, 1.0 / 3.0));
    CHECK(ctc::forced_align(uniform3, LabelSeq{2, 1}).path.labels == LabelSeq{0, 0, 2, 1});
  }

  TEST_CASE("forced alignment matches exhaustive best path and round-trips") {
    Rng rng(14);
    for (int trial = 0; trial < 150; ++trial) {
      const std::size_t T = 1 + rng.index(6), V = 1 + rng.index(4), W = V + 1;
      const auto post = random_post(rng, T, W);
      const auto target = random_target(rng, 3, V, T);
      const auto fa = ctc::forced_align(post, target);
      const double best = testing::brute_force_best_path(values_of(post), T, W, target);
      CHECK(std::abs(fa.log_prob - best) < 1e-9);
      CHECK(std::abs(testing::path_log_prob(values_of(post), W, fa.path.labels) - best) < 1e-9);
      CHECK(ctc::collapse(fa.path.labels) == target);
      // The marginal dominates the max.
      CHECK(-ctc::ctc_loss(post, target).item() >= fa.log_prob - 1e-12);
    }
  }

  TEST_CASE("exhaustive beam finds the most probable label sequence") {
    Rng rng(15);
    for (int trial = 0; trial < 60; ++trial) {
      const std::size_t T = 1 + rng.index(4), V = 1 + rng.index(3), W = V + 1;
      const auto post = random_post(rng, T, W);
      const auto probs = testing::brute_force_sequence_probs(values_of(post), T, W);
      auto best = std::max_element(probs.begin(), probs.end(),
                                   [](const auto& a, const auto& b) { return a.second < b.second; });
      const auto hyps = ctc::prefix_beam_search(post, 1000);
      REQUIRE_FALSE(hyps.empty());
      CHECK(hyps.front().labels == best->first);
      CHECK(std::abs(hyps.front().log_score - std::log(best->second)) < 1e-9);
    }
  }

  TEST_CASE("one-hot posteriors give a single hypothesis with first-frame triggers") {
    // argmax path: a a ∅ b b ∅ a
    const LabelSeq path{1, 1, 0, 2, 2, 0, 1};
    std::vector<double> probs(path.size() * 3, 0.0);
    for (std::size_t t = 0; t < path.size(); ++t) probs[t * 3 + path[t]] = 1.0;
    const auto post = from_probs(path.size(), 3, probs);
    for (std::size_t beam : {std::size_t{1}, std::size_t{8}}) {
      const auto hyps = ctc::prefix_beam_search(post, beam);
      REQUIRE(hyps.size() == 1);
      CHECK(hyps[0].labels == ctc::collapse(path));
      CHECK(hyps[0].trigger_frames == std::vector<std::size_t>{0, 3, 6});
      CHECK(std::abs(hyps[0].log_score) < 1e-12);
    }
  }

  TEST_CASE("beam invariants") {
    Rng rng(16);
    for (int trial = 0; trial < 40; ++trial) {
      const std::size_t T = 3 + rng.index(10), W = 2 + rng.index(4);
      const auto post = random_post(rng, T, W, 2.0);
      const std::size_t beam = 1 + rng.index(4);
      for (const auto& h : ctc::prefix_beam_search(post, beam)) {
        REQUIRE(h.trigger_frames.size() == h.labels.size());
        for (std::size_t i = 1; i < h.trigger_frames.size(); ++i)
          CHECK(h.trigger_frames[i] > h.trigger_frames[i - 1]);
      }
      // Retained probability mass never grows from frame to frame.
      const auto trace = ctc::beam_mass_trace(post, beam);
      CHECK(trace.front() <= 1e-12);
      for (std::size_t t = 1; t < trace.size(); ++t) CHECK(trace[t] <= trace[t - 1] + 1e-12);

      // A prefix born at frame t never outscores its parent at t-1.
      auto states = ctc::initial_beam();
      for (std::size_t t = 0; t < T; ++t) {
        auto cands = ctc::expand_frame(states, post.row(t), t);
        for (const auto& c : cands)
          if (c.is_new) CHECK(c.state.total() <= states[c.parent].total() + 1e-12);
        std::vector<ctc::PrefixState> next;
        for (auto& c : cands) next.push_back(c.state);
        std::sort(next.begin(), next.end(), [](const auto& a, const auto& b) { return a.total() > b.total(); });
        next.resize(std::min(next.size(), beam));
        states = next;
      }
    }
  }

  TEST_CASE("label-synchronous prefix scores match enumeration") {
    Rng rng(17);
    for (int trial = 0; trial < 40; ++trial) {
      const std::size_t T = 1 + rng.index(5), V = 1 + rng.index(3), W = V + 1;
      const auto post = random_post(rng, T, W);
      const auto probs = testing::brute_force_sequence_probs(values_of(post), T, W);
      ctc::PrefixScorer scorer(post);
      auto state = scorer.initial();
      LabelSeq prefix;
      CHECK(std::abs(scorer.final_score(state) - std::log(probs.count({}) ? probs.at({}) : 0.0)) < 1e-9);
      for (std::size_t step = 0; step < std::min<std::size_t>(T, 3); ++step) {
        const Label c = 1 + rng.index(V);
        ctc::PrefixScorer::State next;
        const double psi = scorer.extend(state, c, &next);
        prefix.push_back(c);
        double mass = 0.0, exact = 0.0;
        for (const auto& [seq, p] : probs) {
          if (seq.size() >= prefix.size() && std::equal(prefix.begin(), prefix.end(), seq.begin())) mass += p;
          if (seq == prefix) exact = p;
        }
        if (mass > 0) CHECK(std::abs(psi - std::log(mass)) < 1e-9);
        else CHECK(ctc::is_log_zero(psi));
        if (exact > 0) CHECK(std::abs(scorer.final_score(next) - std::log(exact)) < 1e-9);
        state = next;
      }
    }
  }

  TEST_CASE("vocab encode and decode") {
    const auto v = ctc::Vocab::letters(4);
    CHECK(v.size() == 5);
    CHECK(v.encode("a c d") == LabelSeq{1, 3, 4});
    CHECK(v.decode(LabelSeq{2, 1}) == "b a");
    CHECK(v.render_path(LabelSeq{0, 1}) == "∅ a");
    CHECK_THROWS_AS(v.encode("z"), DataError);
  }
}
