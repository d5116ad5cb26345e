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

#include "avsr/pipeline/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "avsr/errors.hpp"

namespace avsr::pipeline {

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

namespace {

decoder::Hypothesis search(const ctc::PosteriorMatrix& post, const Tensor& states, const decoder::AttentionDecoder& dec,
                           const DecodeOptions& opt) {
  return opt.search == Search::kTriggered ? decoder::ta_decode(post, states, dec, opt.decoder)
                                          : decoder::offline_joint_decode(post, states, dec, opt.decoder);
}

template <typename Decode>
Evaluation run(const synthdata::Corpus& corpus, const DecodeOptions& opt, Decode decode) {
  Evaluation ev;
  ev.hypotheses.resize(corpus.utterances.size());
  parallel_for(corpus.utterances.size(), opt.workers, [&](std::size_t i) {
    NoGradGuard ng;
    ev.hypotheses[i] = decode(corpus.utterances[i]);
  });
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    ev.wer.add(metrics::wer(ev.hypotheses[i].prefix, corpus.utterances[i].target));
  }
  return ev;
}

}  // namespace

Evaluation evaluate(const fusion::AvModel& model, const synthdata::Corpus& corpus, const DecodeOptions& opt) {
  const double frame_ms = model.config().audio.frame_ms;
  return run(corpus, opt, [&](const synthdata::Utterance& u) {
    const auto out = model.forward(u.stream_a, u.stream_v);
    return search({out.lp_av, frame_ms}, out.joint, model.attention_decoder(), opt);
  });
}

Evaluation evaluate(const fusion::SingleStreamModel& model, const synthdata::Corpus& corpus,
                    const DecodeOptions& opt) {
  const bool audio = model.stream() == encoder::Stream::kAudio;
  const double frame_ms = model.config().encoder(model.stream()).frame_ms;
  // The single-stream decoder is as wide as the encoder; keep the rest of
  // the caller's search settings.
  return run(corpus, opt, [&](const synthdata::Utterance& u) {
    const auto out = model.forward(audio ? u.stream_a : u.stream_v);
    return search({out.lp, frame_ms}, out.h.frames, model.attention_decoder(), opt);
  });
}

synthdata::Corpus at_snr(const synthdata::Corpus& corpus, double snr_db) {
  synthdata::Corpus out;
  out.spec = corpus.spec;
  out.spec.snr_db_choices = {snr_db};
  out.utterances.reserve(corpus.utterances.size());
  for (const auto& u : corpus.utterances) out.utterances.push_back(synthdata::with_snr(u, snr_db));
  return out;
}

metrics::OffsetAccumulator measure_offsets(const fusion::AvModel& model, const synthdata::Corpus& corpus,
                                           const std::vector<decoder::Hypothesis>* hyps, std::size_t workers) {
  if (hyps && hyps->size() != corpus.utterances.size()) {
    throw ContractError("measure_offsets: " + std::to_string(hyps->size()) + " hypotheses for " +
                        std::to_string(corpus.utterances.size()) + " utterances");
  }
  struct PerUtt {
    metrics::TokenOffsets v, a;
    bool aligned = false;
  };
  std::vector<PerUtt> res(corpus.utterances.size());
  const double frame_ms = model.config().audio.frame_ms;
  parallel_for(corpus.utterances.size(), workers, [&](std::size_t i) {
    NoGradGuard ng;
    const auto& u = corpus.utterances[i];
    if (!ctc::feasible(u.target, u.frames())) return;
    const auto out = model.forward(u.stream_a, u.stream_v);
    const auto z_av = ctc::forced_align({out.lp_av, frame_ms}, u.target).path;
    const auto z_a = ctc::forced_align({out.lp_a, frame_ms}, u.target).path;
    const auto z_v = ctc::forced_align({out.lp_v, frame_ms}, u.target).path;
    res[i].v = metrics::response_offset(z_av, z_v, u.target);
    res[i].a = metrics::response_offset(z_av, z_a, u.target);
    res[i].aligned = true;
  });
  metrics::OffsetAccumulator acc;
  for (std::size_t i = 0; i < res.size(); ++i) {
    const auto& u = corpus.utterances[i];
    if (!res[i].aligned) {
      metrics::TokenOffsets flagged;
      flagged.collapse_mismatch = true;
      acc.add(u.snr_db, flagged, flagged, {});
      continue;
    }
    const auto correct = hyps ? metrics::correct_reference_tokens((*hyps)[i].prefix, u.target) : std::vector<bool>{};
    acc.add(u.snr_db, res[i].v, res[i].a, correct);
  }
  return acc;
}

std::size_t init_from_pretrained(fusion::AvModel& av, const fusion::SingleStreamModel& audio,
                                 const fusion::SingleStreamModel& visual) {
  if (audio.stream() != encoder::Stream::kAudio || visual.stream() != encoder::Stream::kVisual) {
    throw ContractError("init_from_pretrained: expected an audio and a visual model");
  }
  return av.params().copy_from(audio.params(), "a.", "a.") + av.params().copy_from(visual.params(), "v.", "v.");
}

}  // namespace avsr::pipeline
