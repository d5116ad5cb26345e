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

#include "avsr/encoder/encoder.hpp"
#include "avsr/errors.hpp"
#include "avsr/numcore/ops.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace avsr;
using namespace avsr::encoder;

namespace {

Tensor random_features(Rng& rng, std::size_t T, std::size_t F) {
  std::vector<double> v(T * F);
  for (auto& x : v) x = rng.normal();
  return Tensor({T, F}, v);
}

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.input_dim = 3;
  c.layers = 1;
  c.dim = 4;
  c.heads = 2;
  c.ff_dim = 6;
  c.conv_kernel = 3;
  c.frontend_kernel = 2;
  c.chunk_frames = 2;
  c.max_positions = 8;
  return c;
}

bool rows_equal(const Tensor& a, const Tensor& b, std::size_t row) {
  const std::size_t D = a.cols();
  return std::memcmp(&a.values()[row * D], &b.values()[row * D], D * sizeof(double)) == 0;
}

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("chunk mask geometry") {
    const auto m = chunk_mask(8, 4);
    for (std::size_t s = 0; s < 8; ++s) CHECK((*m)(5, s));
    for (std::size_t s = 0; s < 8; ++s) CHECK((*m)(3, s) == (s <= 3));

    const auto full = chunk_mask(5, 0);
    for (auto a : full->allowed) CHECK(a == 1);

    const auto tri = chunk_mask(3, 1);
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t s = 0; s < 3; ++s) CHECK((*tri)(t, s) == (s <= t));
  }

  TEST_CASE("causal conv hand examples") {
    const Tensor x({4, 1}, {3, 0, 0, 3});
    const Tensor avg({3, 1}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
    const Tensor y = causal_conv1d(x, avg);
    for (std::size_t t = 0; t < 4; ++t) CHECK(y.at(t) == doctest::Approx(1.0).epsilon(1e-12));

    Rng rng(3);
    const Tensor z = random_features(rng, 6, 2);
    const Tensor delta({3, 2}, {0, 0, 0, 0, 1, 1});
    const Tensor id = causal_conv1d(z, delta);
    for (std::size_t i = 0; i < z.numel(); ++i) CHECK(id.at(i) == z.at(i));
  }

  TEST_CASE("causal conv ignores the next frame") {
    Rng rng(4);
    const Tensor k({5, 3}, std::vector<double>(15, 0.3));
    for (std::size_t t = 0; t + 1 < 8; ++t) {
      const Tensor x = random_features(rng, 8, 3);
      std::vector<double> p(x.values().begin(), x.values().end());
      for (std::size_t c = 0; c < 3; ++c) p[(t + 1) * 3 + c] += 5.0;
      const Tensor a = causal_conv1d(x, k), b = causal_conv1d(Tensor({8, 3}, p), k);
      for (std::size_t r = 0; r <= t; ++r) CHECK(rows_equal(a, b, r));
    }
  }

  TEST_CASE("config validation names the field") {
    EncoderConfig c;
    c.heads = 3;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("heads"), ContractError);
    c = EncoderConfig{};
    c.conv_kernel = 4;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("conv_kernel"), ContractError);
    CHECK(EncoderConfig::from_kv(EncoderConfig{}.to_kv("a."), "a.").chunk_frames == 12);
  }

  TEST_CASE("streaming encoder never reads the next chunk") {
    EncoderConfig cfg;
    cfg.input_dim = 5;
    cfg.dim = 8;
    cfg.ff_dim = 12;
    cfg.chunk_frames = 4;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      ParamStore store;
      Rng rng(seed);
      Encoder enc(cfg, Stream::kAudio, "a.", store, rng);
      NoGradGuard ng;
      const std::size_t T = 16;
      const Tensor x = random_features(rng, T, 5);
      const Tensor ref = enc.encode(x).frames;
      for (std::size_t c = 0; c + 1 < T / 4; ++c) {
        std::vector<double> p(x.values().begin(), x.values().end());
        for (std::size_t t = (c + 1) * 4; t < T; ++t)
          for (std::size_t f = 0; f < 5; ++f) p[t * 5 + f] += rng.normal();
        const Tensor out = enc.encode(Tensor({T, 5}, p)).frames;
        for (std::size_t t = 0; t < (c + 1) * 4; ++t) CHECK(rows_equal(ref, out, t));
        CHECK_FALSE(rows_equal(ref, out, (c + 1) * 4));
      }
    }
  }

  TEST_CASE("offline encoder sees the whole utterance") {
    EncoderConfig cfg;
    cfg.input_dim = 5;
    cfg.chunk_frames = 0;
    cfg.causal_conv = false;
    ParamStore store;
    Rng rng(11);
    Encoder enc(cfg, Stream::kVisual, "v.", store, rng);
    NoGradGuard ng;
    const Tensor x = random_features(rng, 10, 5);
    std::vector<double> p(x.values().begin(), x.values().end());
    p[9 * 5] += 1.0;
    CHECK_FALSE(rows_equal(enc.encode(x).frames, enc.encode(Tensor({10, 5}, p)).frames, 0));
  }

  TEST_CASE("zero residual branches reduce to the front-end") {
    EncoderConfig cfg;
    cfg.input_dim = 4;
    ParamStore store;
    Rng rng(5);
    Encoder enc(cfg, Stream::kAudio, "a.", store, rng);
    enc.zero_residual_branches();
    NoGradGuard ng;
    const Tensor x = random_features(rng, 9, 4);
    Tensor expect = enc.frontend(x);
    // Each layer ends in a norm with unit gain and zero bias.
    const Tensor g = Tensor::full({cfg.dim}, 1.0), b = Tensor::zeros({cfg.dim});
    for (std::size_t l = 0; l < cfg.layers; ++l) expect = layer_norm(expect, g, b);
    const Tensor got = enc.encode(x).frames;
    for (std::size_t i = 0; i < got.numel(); ++i) CHECK(got.at(i) == doctest::Approx(expect.at(i)).epsilon(1e-12));
  }

  TEST_CASE("receptive field audit matches chunk geometry") {
    EncoderConfig cfg;
    cfg.input_dim = 4;
    cfg.dim = 8;
    cfg.ff_dim = 8;
    ParamStore store;
    Rng rng(2);
    Encoder enc(cfg, Stream::kAudio, "a.", store, rng);
    CHECK(receptive_field_audit(enc, 24, 0) == 11);
    CHECK(receptive_field_audit(enc, 24, 11) == 0);
    CHECK(receptive_field_audit(enc, 24, 12) == 11);
    CHECK(configured_lookahead(cfg, 24, 0) == 11);

    cfg.chunk_frames = 1;
    ParamStore s2;
    Encoder causal(cfg, Stream::kAudio, "a.", s2, rng);
    for (std::size_t t : {0, 3, 7}) CHECK(receptive_field_audit(causal, 10, t) == 0);
  }

  TEST_CASE("offline and streaming share parameter shapes") {
    EncoderConfig s;
    EncoderConfig o = s;
    o.chunk_frames = 0;
    o.causal_conv = false;
    ParamStore a, b;
    Rng r1(1), r2(1);
    Encoder ea(s, Stream::kAudio, "x.", a, r1), eb(o, Stream::kAudio, "x.", b, r2);
    REQUIRE(a.entries().size() == b.entries().size());
    for (std::size_t i = 0; i < a.entries().size(); ++i) {
      CHECK(a.entries()[i].first == b.entries()[i].first);
      CHECK(a.entries()[i].second.shape() == b.entries()[i].second.shape());
    }
  }

  TEST_CASE("encode gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      auto cfg = tiny_config();
      cfg.causal_conv = seed % 2 == 0;
      ParamStore store;
      Rng rng(100 + seed);
      Encoder enc(cfg, Stream::kAudio, "a.", store, rng);
      REQUIRE(store.parameter_count() <= 500);
      const Tensor x = random_features(rng, 5, 3);
      const Tensor w = random_features(rng, 5, 4);
      auto loss = [&] { return sum(mul(enc.encode(x).frames, w)); };
      const auto r = testing::grad_check(loss, store.tensors());
      INFO(r.worst_where);
      CHECK(r.ok);
      CHECK(r.checked > 0);
    }
  }

  TEST_CASE("feature width mismatch is a dimension error") {
    ParamStore store;
    Rng rng(1);
    Encoder enc(tiny_config(), Stream::kAudio, "a.", store, rng);
    CHECK_THROWS_AS(enc.encode(Tensor::zeros({4, 2})), DimensionError);
  }
}
