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

// Microbenchmarks for the per-utterance hot paths.

#include <benchmark/benchmark.h>

#include "avsr/ctc/ctc.hpp"
#include "avsr/decoder/decoder.hpp"
#include "avsr/fusion/fusion.hpp"
#include "avsr/numcore/ops.hpp"
#include "avsr/streamsim/streamsim.hpp"

using namespace avsr;

namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.normal();
  return Tensor({r, c}, v);
}

void BM_CtcLoss(benchmark::State& state) {
  const std::size_t T = state.range(0), W = 17;
  Rng rng(1);
  const Tensor lp = log_softmax(random_matrix(rng, T, W));
  ctc::LabelSeq y;
  for (std::size_t i = 0; i < T / 8; ++i) y.push_back(1 + rng.index(W - 1));
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(ctc::ctc_loss(lp, y).item());
}
BENCHMARK(BM_CtcLoss)->Arg(40)->Arg(160);

void BM_CtcLossBackward(benchmark::State& state) {
  const std::size_t T = state.range(0), W = 17;
  Rng rng(1);
  Tensor logits = random_matrix(rng, T, W);
  logits.set_requires_grad(true);
  ctc::LabelSeq y;
  for (std::size_t i = 0; i < T / 8; ++i) y.push_back(1 + rng.index(W - 1));
  for (auto _ : state) {
    logits.zero_grad();
    backward(ctc::ctc_loss(log_softmax(logits), y));
  }
}
BENCHMARK(BM_CtcLossBackward)->Arg(40)->Arg(160);

void BM_ForcedAlign(benchmark::State& state) {
  const std::size_t T = state.range(0), W = 17;
  Rng rng(2);
  const ctc::PosteriorMatrix post{log_softmax(random_matrix(rng, T, W)), 40.0};
  ctc::LabelSeq y;
  for (std::size_t i = 0; i < T / 8; ++i) y.push_back(1 + rng.index(W - 1));
  for (auto _ : state) benchmark::DoNotOptimize(ctc::forced_align(post, y).log_prob);
}
BENCHMARK(BM_ForcedAlign)->Arg(40)->Arg(160);

void BM_AvForward(benchmark::State& state) {
  fusion::ModelConfig cfg;
  fusion::AvModel m(cfg, 3);
  Rng rng(3);
  const std::size_t T = state.range(0);
  const Tensor a = random_matrix(rng, T, cfg.audio.input_dim), v = random_matrix(rng, T, cfg.visual.input_dim);
  NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(a, v).lp_av.numel());
}
BENCHMARK(BM_AvForward)->Arg(40)->Arg(120)->Unit(benchmark::kMillisecond);

void BM_TaDecode(benchmark::State& state) {
  fusion::ModelConfig cfg;
  cfg.decoder.beam = state.range(0);
  fusion::AvModel m(cfg, 4);
  Rng rng(4);
  const std::size_t T = 60;
  NoGradGuard ng;
  const auto out = m.forward(random_matrix(rng, T, cfg.audio.input_dim), random_matrix(rng, T, cfg.visual.input_dim));
  const ctc::PosteriorMatrix post{out.lp_av, 40.0};
  for (auto _ : state) {
    benchmark::DoNotOptimize(decoder::ta_decode(post, out.joint, m.attention_decoder(), cfg.decoder).joint_score);
  }
}
BENCHMARK(BM_TaDecode)->Arg(1)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
