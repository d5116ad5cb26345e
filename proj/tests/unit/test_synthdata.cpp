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
#include <filesystem>
#include <fstream>

#include "avsr/errors.hpp"
#include "avsr/synthdata/synthdata.hpp"
#include "doctest.h"

using namespace avsr;
using namespace avsr::synthdata;

namespace {

GenSpec small_spec() {
  GenSpec s;
  s.labels = 8;
  s.min_frames = 20;
  s.max_frames = 40;
  s.audio_dim = 6;
  s.visual_dim = 5;
  s.snr_db_choices = {0.0, 10.0, kCleanSnr};
  return s;
}

bool bits_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.values().size() * sizeof(double)) == 0;
}

double dot_row(const Tensor& m, std::size_t t, const std::vector<double>& p) {
  double s = 0;
  for (std::size_t f = 0; f < p.size(); ++f) s += m.values()[t * m.cols() + f] * p[f];
  return s;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("avsr_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("synthdata") {
  TEST_CASE("same seed gives bit-identical corpora") {
    const GenSpec s = small_spec();
    const Corpus a = generate(s, 12), b = generate(s, 12);
    REQUIRE(a.utterances.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) {
      const auto &x = a.utterances[i], &y = b.utterances[i];
      CHECK(x.id == y.id);
      CHECK(x.target == y.target);
      CHECK(x.lag_v == y.lag_v);
      CHECK(bits_equal(x.stream_a, y.stream_a));
      CHECK(bits_equal(x.stream_v, y.stream_v));
    }
    GenSpec other = s;
    other.seed = 2;
    const Corpus c = generate(other, 1);
    CHECK_FALSE(bits_equal(a.utterances[0].stream_a, c.utterances[0].stream_a));
  }

  TEST_CASE("every utterance satisfies its invariants") {
    const GenSpec s = small_spec();
    const Corpus c = generate(s, 50);
    for (const auto& u : c.utterances) {
      const std::size_t T = u.frames();
      CHECK(T >= s.min_frames);
      CHECK(T <= s.max_frames);
      CHECK(u.stream_v.rows() == T);
      CHECK(u.stream_a.cols() == s.audio_dim);
      CHECK(u.stream_v.cols() == s.visual_dim);
      CHECK(ctc::feasible(u.target, T));
      CHECK(u.lag_v <= s.max_lag_v);
      REQUIRE(u.event_frames.size() == u.target.size());
      for (std::size_t i = 1; i < u.event_frames.size(); ++i) CHECK(u.event_frames[i] >= u.event_frames[i - 1] + 2);
      if (!u.event_frames.empty()) CHECK(u.event_frames.back() + u.lag_v < T);
      for (auto l : u.target) CHECK((l >= 1 && l <= s.labels));
    }
  }

  TEST_CASE("infeasible length and rate is a generation error") {
    GenSpec s = small_spec();
    s.min_frames = s.max_frames = 8;
    s.min_label_rate = s.max_label_rate = 0.9;
    CHECK_THROWS_AS(generate(s, 1), InfeasibleTargetError);
  }

  TEST_CASE("confusable pairs are disjoint across streams and share prototypes") {
    const GenSpec s = small_spec();
    const Prototypes p = make_prototypes(s);
    CHECK(p.pairs_a.size() == 2);  // 0.5 * 8 labels, two per pair
    CHECK(p.pairs_v.size() == 2);
    for (const auto& [x, y] : p.pairs_a) {
      CHECK(p.audio[x] == p.audio[y]);
      CHECK(p.visual[x] != p.visual[y]);
      for (const auto& [u, v] : p.pairs_v) {
        CHECK_FALSE(((x == u && y == v) || (x == v && y == u)));
      }
    }
    for (const auto& [x, y] : p.pairs_v) {
      CHECK(p.visual[x] == p.visual[y]);
      CHECK(p.audio[x] != p.audio[y]);
    }
  }

  TEST_CASE("mix_at_snr hits the requested ratio") {
    const std::vector<double> clean{1, -1, 1, -1}, noise{0.5, 0.5, -0.5, -0.5};
    // Equal powers at 0 dB: scale 1.
    const std::vector<double> n1{1, 1, -1, -1};
    const auto m0 = mix_at_snr(clean, n1, 0.0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(m0[i] == doctest::Approx(clean[i] + n1[i]).epsilon(1e-12));
    CHECK(mix_at_snr(clean, noise, kCleanSnr) == clean);
    Rng rng(3);
    for (double snr : {-7.5, -5.0, 0.0, 2.5, 12.5, 20.0}) {
      std::vector<double> c(200), n(200);
      for (auto& x : c) x = rng.normal();
      for (auto& x : n) x = rng.normal();
      CHECK(std::abs(measured_snr_db(c, mix_at_snr(c, n, snr)) - snr) < 0.01);
    }
    CHECK_THROWS_AS(mix_at_snr(std::vector<double>(4, 0.0), noise, 0.0), ContractError);
    CHECK_THROWS_AS(mix_at_snr(clean, std::vector<double>(4, 0.0), 0.0), ContractError);
  }

  TEST_CASE("with_snr remixes the same clean audio and noise draw") {
    const Corpus c = generate(small_spec(), 3);
    for (const auto& u : c.utterances) {
      const Utterance clean = with_snr(u, kCleanSnr);
      CHECK(bits_equal(clean.stream_a, u.clean_a));
      const Utterance low = with_snr(u, -7.5);
      CHECK(low.snr_db == -7.5);
      CHECK(bits_equal(low.stream_v, u.stream_v));
      const std::vector<double> cv(u.clean_a.values().begin(), u.clean_a.values().end());
      const std::vector<double> mv(low.stream_a.values().begin(), low.stream_a.values().end());
      CHECK(std::abs(measured_snr_db(cv, mv) + 7.5) < 0.01);
      CHECK(bits_equal(with_snr(u, u.snr_db).stream_a, u.stream_a));
    }
  }

  TEST_CASE("time_mask geometry") {
    Rng rng(5);
    const Tensor x({25, 3}, std::vector<double>(75, 1.0));
    SUBCASE("zero max width is the identity") {
      CHECK(bits_equal(time_mask(x, 40.0, 1.0, 0.0, rng), x));
      CHECK(bits_equal(time_mask(x, 40.0, 0.0, 400.0, rng), x));
    }
    SUBCASE("one second at one span per second gives exactly one span") {
      for (int i = 0; i < 50; ++i) {
        std::vector<MaskSpan> spans;
        time_mask(x, 40.0, 1.0, 400.0, rng, &spans);
        REQUIRE(spans.size() == 1);
        CHECK(spans[0].end <= 25);
        CHECK(spans[0].end - spans[0].begin <= 10);
      }
    }
    SUBCASE("expected masked fraction") {
      // widths uniform over {0..10} frames: mean 5 of 25 frames.
      double masked = 0;
      for (int i = 0; i < 1000; ++i) {
        const Tensor m = time_mask(x, 40.0, 1.0, 400.0, rng);
        for (std::size_t t = 0; t < 25; ++t) masked += m.values()[t * 3] == 0.0 ? 1 : 0;
      }
      CHECK(std::abs(masked / (1000.0 * 25) - 0.2) < 0.05);
    }
    SUBCASE("masked frames are whole rows of zeros") {
      std::vector<MaskSpan> spans;
      const Tensor m = time_mask(x, 40.0, 3.0, 400.0, rng, &spans);
      for (const auto& s : spans) {
        for (std::size_t t = s.begin; t < s.end; ++t)
          for (std::size_t f = 0; f < 3; ++f) CHECK(m.values()[t * 3 + f] == 0.0);
      }
    }
  }

  TEST_CASE("without lag and with equal kernels both streams peak at the events") {
    GenSpec s = small_spec();
    s.max_lag_v = 0;
    s.visual_kernel_sigma = s.audio_kernel_sigma;
    s.snr_db_choices.clear();
    s.visual_snr_db = kCleanSnr;
    s.confusable_fraction_a = s.confusable_fraction_v = 0.0;
    const Prototypes p = make_prototypes(s);
    const Corpus c = generate(s, 10);
    for (const auto& u : c.utterances) {
      CHECK(u.lag_v == 0);
      for (std::size_t i = 0; i < u.target.size(); ++i) {
        const std::size_t e = u.event_frames[i];
        const auto l = u.target[i];
        for (std::size_t t : {e - 1, e + 1}) {
          if (t >= u.frames() || (e == 0 && t == e - 1)) continue;
          CHECK(dot_row(u.stream_a, e, p.audio[l]) > dot_row(u.stream_a, t, p.audio[l]));
          CHECK(dot_row(u.stream_v, e, p.visual[l]) > dot_row(u.stream_v, t, p.visual[l]));
        }
      }
    }
  }

  TEST_CASE("feature files and manifests round trip") {
    const auto dir = temp_dir("corpus");
    const GenSpec s = small_spec();
    const Corpus c = generate(s, 4);
    const auto vocab = ctc::Vocab::letters(s.labels);
    save_corpus(c, vocab, dir, "unit test");
    const Corpus back = load_corpus(dir, vocab);
    REQUIRE(back.utterances.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      const auto &x = c.utterances[i], &y = back.utterances[i];
      CHECK(x.id == y.id);
      CHECK(x.target == y.target);
      CHECK(x.event_frames == y.event_frames);
      CHECK(x.lag_v == y.lag_v);
      CHECK((x.snr_db == y.snr_db || (std::isinf(x.snr_db) && std::isinf(y.snr_db))));
      CHECK(bits_equal(x.stream_a, y.stream_a));
      CHECK(bits_equal(x.stream_v, y.stream_v));
      CHECK(bits_equal(x.clean_a, y.clean_a));
      CHECK(bits_equal(x.noise_a, y.noise_a));
    }
    CHECK(back.spec.seed == s.seed);
    CHECK(back.spec.snr_db_choices.size() == 3);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("damaged feature files are data errors") {
    const auto dir = temp_dir("bad");
    std::filesystem::create_directories(dir);
    const auto p = dir / "x.bin";
    write_features(p, Tensor({2, 2}, {1, 2, 3, 4}));
    CHECK(bits_equal(read_features(p), Tensor({2, 2}, {1, 2, 3, 4})));
    std::filesystem::resize_file(p, std::filesystem::file_size(p) - 4);
    CHECK_THROWS_AS(read_features(p), DataError);
    {
      std::ofstream f(p, std::ios::binary);
      f << "NOTAFEAT";
    }
    CHECK_THROWS_AS(read_features(p), DataError);
    CHECK_THROWS_AS(read_features(dir / "missing.bin"), DataError);
    CHECK_THROWS_AS(load_corpus(dir, ctc::Vocab::letters(4)), DataError);
    std::filesystem::remove_all(dir);
  }
}
