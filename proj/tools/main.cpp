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

// avsr: corpus generation, training, decoding and reports from one binary.
// Exit codes: 0 ok, 1 usage, 2 data, 3 numeric failure.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "avsr/errors.hpp"
#include "avsr/fusion/trainer.hpp"
#include "avsr/metrics/metrics.hpp"
#include "avsr/pipeline/pipeline.hpp"
#include "avsr/streamsim/streamsim.hpp"
#include "model_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace avsr;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

std::uint64_t default_seed() {
  if (const char* s = std::getenv("AVSR_SEED")) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw ContractError(std::string("AVSR_SEED is not an unsigned integer: ") + s);
    }
  }
  return 1;
}

double parse_snr(const std::string& s) {
  if (s == "inf" || s == "+inf" || s == "clean") return synthdata::kCleanSnr;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ContractError("field 'snr': cannot parse '" + s + "' (number or inf)");
  }
}

std::vector<double> parse_snrs(const std::vector<std::string>& v) {
  std::vector<double> out;
  for (const auto& s : v) out.push_back(parse_snr(s));
  return out;
}

std::size_t parse_tau(const std::string& s) {
  if (s == "inf") return decoder::kUnboundedLookahead;
  const double v = parse_snr(s);
  if (!(v >= 1)) throw ContractError("field 'tau': must be at least 1 (or inf)");
  return v >= 1e15 ? decoder::kUnboundedLookahead : static_cast<std::size_t>(v);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// Model shape and search settings shared by training and decoding commands.
struct ModelFlags {
  std::string config_file;
  std::optional<std::size_t> dim, layers, heads, ff_dim, chunk, beam, ctc_beam, decoder_layers;
  std::optional<std::string> tau;
  std::optional<double> lambda, eos_threshold;

  void add(CLI::App* app, bool shape) {
    if (shape) {
      app->add_option("--model-config", config_file, "Model key=value file");
      app->add_option("--dim", dim, "Encoder, fusion and decoder width");
      app->add_option("--layers", layers, "Encoder layers");
      app->add_option("--heads", heads, "Attention heads");
      app->add_option("--ff-dim", ff_dim, "Feed-forward width");
      app->add_option("--decoder-layers", decoder_layers, "Decoder layers");
    }
    app->add_option("--chunk", chunk, "Encoder chunk in frames (0 = full context)");
    app->add_option("--tau", tau, "Decoder look-ahead in frames (inf = offline)");
    app->add_option("--beam", beam, "Beam width");
    app->add_option("--ctc-beam", ctc_beam, "CTC pre-pruning width (0 = off)");
    app->add_option("--lambda", lambda, "CTC weight in joint scoring");
    app->add_option("--eos-threshold", eos_threshold, "End-sentinel probability that finalises a prefix early (0 = off)");
  }

  void apply(fusion::ModelConfig& m) const {
    if (dim) {
      m.audio.dim = m.visual.dim = m.fusion.dim = m.decoder.dim = *dim;
      m.audio.ff_dim = m.visual.ff_dim = m.decoder.ff_dim = 2 * *dim;
      m.fusion.hidden = 2 * *dim;
    }
    if (layers) m.audio.layers = m.visual.layers = *layers;
    if (heads) m.audio.heads = m.visual.heads = m.decoder.heads = *heads;
    if (ff_dim) m.audio.ff_dim = m.visual.ff_dim = m.decoder.ff_dim = *ff_dim;
    if (decoder_layers) m.decoder.layers = *decoder_layers;
    if (chunk) m.audio.chunk_frames = m.visual.chunk_frames = *chunk;
    if (tau) m.decoder.lookahead_tau = parse_tau(*tau);
    if (beam) m.decoder.beam = *beam;
    if (ctc_beam) m.decoder.ctc_beam = *ctc_beam;
    if (lambda) m.decoder.ctc_weight_lambda = *lambda;
    if (eos_threshold) m.decoder.eos_threshold = *eos_threshold;
    m.validate();
  }

  fusion::ModelConfig build(const synthdata::GenSpec& spec) const {
    fusion::ModelConfig m;
    if (!config_file.empty()) m = fusion::ModelConfig::from_kv(KeyValues::load(config_file));
    m.labels = spec.labels;
    m.audio.input_dim = spec.audio_dim;
    m.visual.input_dim = spec.visual_dim;
    m.audio.frame_ms = m.visual.frame_ms = spec.frame_ms;
    apply(m);
    return m;
  }
};

struct TrainFlags {
  fusion::TrainConfig cfg;
  std::vector<std::string> noise;
  std::string log;

  void add(CLI::App* app) {
    app->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
    app->add_option("--batch", cfg.batch, "Utterances per step")->capture_default_str();
    app->add_option("--lr", cfg.lr, "Peak learning rate")->capture_default_str();
    app->add_option("--warmup", cfg.warmup_steps, "Linear warm-up steps")->capture_default_str();
    app->add_option("--weight-decay", cfg.weight_decay, "Decoupled weight decay")->capture_default_str();
    app->add_option("--clip", cfg.clip_norm, "Global gradient-norm clip (0 = off)")->capture_default_str();
    app->add_option("--optimizer", cfg.optimizer, "adamw or sgd")->capture_default_str();
    app->add_option("--noise-snr", noise, "Noise-injection SNR set (dB or inf); 'none' disables");
    app->add_option("--mask-rate", cfg.mask_rate_per_s, "Time masks per second")->capture_default_str();
    app->add_option("--mask-max-ms", cfg.mask_max_ms, "Longest time mask")->capture_default_str();
    app->add_flag("--realign-every-step", cfg.realign_every_step, "Refresh alignment targets every step");
    app->add_option("--log", log, "Per-step JSONL training log");
  }

  fusion::TrainConfig build(std::uint64_t seed) const {
    fusion::TrainConfig c = cfg;
    c.seed = seed;
    if (noise.size() == 1 && noise[0] == "none") {
      c.noise_snr_choices.clear();
    } else if (!noise.empty()) {
      c.noise_snr_choices = parse_snrs(noise);
    }
    c.validate();
    return c;
  }
};

fusion::StepHook progress_hook(bool quiet) {
  return [quiet](const fusion::StepRecord& r) {
    if (!quiet && r.step % 20 == 0) {
      std::fprintf(stderr, "epoch %zu step %zu loss %.4f ctc %.4f lr %.2e\n", r.epoch, r.step, r.loss.total,
                   r.loss.l_ctc, r.lr);
    }
    if (!std::isfinite(r.loss.total)) throw NumericError("training loss became non-finite at step " +
                                                         std::to_string(r.step));
    return true;
  };
}

std::string g_run_config;

// The resolved seed plus every option of the subcommand that ran, defaults
// included, in the format --config reads back.
std::string make_run_config(const CLI::App& root, std::uint64_t seed) {
  std::string out = "seed=" + std::to_string(seed) + "\n";
  for (const CLI::App* sub : root.get_subcommands()) {
    std::istringstream is(sub->config_to_str(true, false));
    for (std::string line; std::getline(is, line);) {
      if (!line.empty() && !line.ends_with("=\"\"")) out += sub->get_name() + "." + line + "\n";
    }
  }
  return out;
}

std::string run_config_of(const CLI::App&) { return g_run_config; }

// ---------------------------------------------------------------- generate

struct GenerateCmd {
  synthdata::GenSpec spec;
  std::size_t count = 500;
  std::vector<std::string> snr;
  std::string visual_snr = "6";
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--out", out, "Corpus directory")->required();
    app->add_option("--count", count, "Utterances")->capture_default_str();
    app->add_option("--labels", spec.labels, "Vocabulary size")->capture_default_str();
    app->add_option("--min-frames", spec.min_frames)->capture_default_str();
    app->add_option("--max-frames", spec.max_frames)->capture_default_str();
    app->add_option("--min-label-rate", spec.min_label_rate, "Labels per frame")->capture_default_str();
    app->add_option("--max-label-rate", spec.max_label_rate)->capture_default_str();
    app->add_option("--audio-dim", spec.audio_dim)->capture_default_str();
    app->add_option("--visual-dim", spec.visual_dim)->capture_default_str();
    app->add_option("--audio-sigma", spec.audio_kernel_sigma, "Audio emission kernel width")->capture_default_str();
    app->add_option("--visual-sigma", spec.visual_kernel_sigma)->capture_default_str();
    app->add_option("--max-lag-v", spec.max_lag_v, "Visual lag drawn from 0..max")->capture_default_str();
    app->add_option("--confusable-a", spec.confusable_fraction_a, "Labels paired in audio")->capture_default_str();
    app->add_option("--confusable-v", spec.confusable_fraction_v)->capture_default_str();
    app->add_option("--snr", snr, "Audio SNR choices in dB (inf = clean)");
    app->add_option("--visual-snr", visual_snr, "Visual SNR in dB")->capture_default_str();
    app->add_option("--frame-ms", spec.frame_ms)->capture_default_str();
    app->add_option("--prototype-seed", spec.prototype_seed, "Shared by train and test corpora")
        ->capture_default_str();
  }

  int run(const CLI::App& root, std::uint64_t seed) {
    spec.seed = seed;
    spec.snr_db_choices = parse_snrs(snr);
    spec.visual_snr_db = parse_snr(visual_snr);
    spec.validate();
    const auto corpus = synthdata::generate(spec, count);
    synthdata::save_corpus(corpus, ctc::Vocab::letters(spec.labels), out, cli::commented(run_config_of(root)));
    std::printf("wrote %zu utterances to %s\n", corpus.utterances.size(), out.c_str());
    return kOk;
  }
};

// ---------------------------------------------------------------- pretrain

struct PretrainCmd {
  std::string corpus, out, stream = "a";
  double alpha = 0.3;
  bool quiet = false;
  ModelFlags model;
  TrainFlags train;

  void add(CLI::App* app) {
    app->add_option("--corpus", corpus, "Training corpus directory")->required();
    app->add_option("--stream", stream, "a or v")->check(CLI::IsMember({"a", "v"}))->capture_default_str();
    app->add_option("--out", out, "Checkpoint path")->required();
    app->add_option("--alpha", alpha, "CTC weight")->capture_default_str();
    app->add_flag("--quiet", quiet, "No per-step progress on stderr");
    model.add(app, true);
    train.add(app);
  }

  int run(const CLI::App& root, std::uint64_t seed) {
    const auto data = cli::load_corpus_dir(corpus);
    const auto mc = model.build(data.spec);
    const auto tc = train.build(seed);
    fusion::SingleStreamModel m(mc, stream == "a" ? encoder::Stream::kAudio : encoder::Stream::kVisual, seed);
    const auto log = fusion::pretrain(m, data, alpha, tc, progress_hook(quiet));
    const std::string rc = run_config_of(root);
    cli::save_model(out, cli::model_kind(m), mc, m.params(), seed, rc);
    if (!train.log.empty()) log.write_jsonl(train.log, rc);
    if (!log.steps.empty()) std::printf("final loss %.4f (ctc %.4f)\n", log.steps.back().loss.total,
                                        log.steps.back().loss.l_ctc);
    std::printf("wrote %s\n", out.c_str());
    return kOk;
  }
};

// ---------------------------------------------------------------- finetune

struct FinetuneCmd {
  std::string corpus, out, init_a, init_v, align_mode = "av", freeze = "none";
  fusion::JointLossConfig loss;
  bool quiet = false;
  ModelFlags model;
  TrainFlags train;

  void add(CLI::App* app) {
    app->add_option("--corpus", corpus, "Training corpus directory")->required();
    app->add_option("--out", out, "Checkpoint path")->required();
    app->add_option("--init-a", init_a, "Pre-trained audio checkpoint");
    app->add_option("--init-v", init_v, "Pre-trained visual checkpoint");
    app->add_option("--align-mode", align_mode, "none, av, a2v or v2a")
        ->check(CLI::IsMember({"none", "av", "a2v", "v2a"}))
        ->capture_default_str();
    app->add_option("--freeze", freeze, "none, a, v or both")
        ->check(CLI::IsMember({"none", "a", "v", "both"}))
        ->capture_default_str();
    app->add_option("--alpha", loss.alpha, "CTC weight")->capture_default_str();
    app->add_option("--beta-av2a", loss.beta_av2a, "Audio alignment weight")->capture_default_str();
    app->add_option("--beta-av2v", loss.beta_av2v, "Visual alignment weight")->capture_default_str();
    app->add_flag("--label-frames-only", loss.label_frames_only, "Alignment CE on label frames only");
    app->add_flag("--quiet", quiet, "No per-step progress on stderr");
    model.add(app, true);
    train.add(app);
  }

  int run(const CLI::App& root, std::uint64_t seed) {
    const auto data = cli::load_corpus_dir(corpus);
    fusion::ModelConfig mc = model.build(data.spec);
    std::optional<cli::LoadedModel> la, lv;
    if (!init_a.empty()) la = cli::load_model(init_a);
    if (!init_v.empty()) lv = cli::load_model(init_v);
    // Pre-trained encoders fix their own shapes.
    if (la) mc.audio = la->config.audio;
    if (lv) mc.visual = lv->config.visual;
    model.apply(mc);
    loss.validate();
    const auto tc = train.build(seed);
    fusion::AvModel m(mc, seed);
    if (la) {
      if (la->kind != "a") throw DataError(init_a + " is not an audio checkpoint");
      m.params().copy_from(la->ckpt.params, "a.", "a.");
    }
    if (lv) {
      if (lv->kind != "v") throw DataError(init_v + " is not a visual checkpoint");
      m.params().copy_from(lv->ckpt.params, "v.", "v.");
    }
    m.set_freeze(fusion::parse_freeze(freeze));
    const auto log =
        fusion::finetune(m, data, loss, fusion::parse_align_source(align_mode), tc, progress_hook(quiet));
    const std::string rc = run_config_of(root);
    cli::save_model(out, "av", mc, m.params(), seed, rc);
    if (!train.log.empty()) log.write_jsonl(train.log, rc);
    if (log.skipped_total > 0) std::printf("skipped %zu utterance-steps without a usable alignment\n", log.skipped_total);
    if (!log.steps.empty()) std::printf("final loss %.4f (ctc %.4f)\n", log.steps.back().loss.total,
                                        log.steps.back().loss.l_ctc);
    std::printf("wrote %s\n", out.c_str());
    return kOk;
  }
};

// ---------------------------------------------------------------- align

struct AlignCmd {
  std::string corpus, ckpt, head, out;

  void add(CLI::App* app) {
    app->add_option("--corpus", corpus)->required();
    app->add_option("--ckpt", ckpt)->required();
    app->add_option("--head", head, "av, a or v (default: the checkpoint's own)")
        ->check(CLI::IsMember({"av", "a", "v"}));
    app->add_option("--out", out, "Alignments JSONL")->required();
  }

  int run(const CLI::App& root, std::uint64_t) {
    const auto data = cli::load_corpus_dir(corpus);
    const auto lm = cli::load_model(ckpt);
    const auto vocab = ctc::Vocab::letters(data.spec.labels);
    const std::string h = head.empty() ? lm.kind : head;
    std::unique_ptr<fusion::AvModel> av;
    std::unique_ptr<fusion::SingleStreamModel> single;
    if (lm.kind == "av") {
      av = cli::restore_av(lm, lm.config);
    } else {
      if (h != lm.kind) throw ContractError("field 'head': a single-stream checkpoint only has head " + lm.kind);
      single = cli::restore_single(lm, lm.config);
    }
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    std::ofstream f(out);
    if (!f) throw DataError("cannot write " + out);
    f << json{{"type", "config"}, {"run_config", run_config_of(root)}}.dump() << '\n';
    NoGradGuard ng;
    const double frame_ms = lm.config.audio.frame_ms;
    for (const auto& u : data.utterances) {
      Tensor lp;
      if (av) {
        const auto o = av->forward(u.stream_a, u.stream_v);
        lp = h == "av" ? o.lp_av : (h == "a" ? o.lp_a : o.lp_v);
      } else {
        lp = single->forward(lm.kind == "a" ? u.stream_a : u.stream_v).lp;
      }
      json j{{"id", u.id}, {"head", h}};
      if (!ctc::feasible(u.target, u.frames())) {
        j["skipped"] = "target needs more frames than the utterance has";
      } else {
        const auto fa = ctc::forced_align({lp, frame_ms}, u.target);
        j["path"] = fa.path.labels;
        j["rendered"] = vocab.render_path(fa.path.labels);
        j["token_frames"] = ctc::token_start_frames(fa.path.labels);
        j["log_prob"] = fa.log_prob;
      }
      f << j.dump() << '\n';
    }
    std::printf("aligned %zu utterances with head %s -> %s\n", data.utterances.size(), h.c_str(), out.c_str());
    return kOk;
  }
};

// ---------------------------------------------------------------- decode

struct DecodeCmd {
  std::string corpus, ckpt, out, mode = "streaming", search = "triggered";
  std::vector<std::string> snr;
  std::size_t workers = 1;
  ModelFlags model;

  void add(CLI::App* app) {
    app->add_option("--corpus", corpus)->required();
    app->add_option("--ckpt", ckpt)->required();
    app->add_option("--out", out, "Results JSON");
    app->add_option("--mode", mode, "offline (full context, unbounded look-ahead) or streaming")
        ->check(CLI::IsMember({"offline", "streaming"}))
        ->capture_default_str();
    app->add_option("--search", search, "triggered (frame-synchronous) or label (label-synchronous)")
        ->check(CLI::IsMember({"triggered", "label"}))
        ->capture_default_str();
    app->add_option("--snr", snr, "Re-mix test audio at these SNRs (default: as stored)");
    app->add_option("--workers", workers, "Decoding threads (0 = all cores)")->capture_default_str();
    model.add(app, false);
  }

  int run(const CLI::App& root, std::uint64_t) {
    const auto data = cli::load_corpus_dir(corpus);
    const auto lm = cli::load_model(ckpt);
    fusion::ModelConfig mc = lm.config;
    if (mode == "offline") {
      mc.audio.chunk_frames = mc.visual.chunk_frames = 0;
      mc.decoder.lookahead_tau = decoder::kUnboundedLookahead;
    }
    model.apply(mc);
    pipeline::DecodeOptions opt;
    opt.decoder = mc.decoder;
    opt.search = search == "label" ? pipeline::Search::kLabelSync : pipeline::Search::kTriggered;
    opt.workers = workers;
    const auto vocab = ctc::Vocab::letters(data.spec.labels);

    std::vector<std::pair<double, synthdata::Corpus>> sets;
    if (snr.empty()) {
      sets.emplace_back(std::nan(""), data);
    } else {
      for (double s : parse_snrs(snr)) sets.emplace_back(s, pipeline::at_snr(data, s));
    }
    json results{{"run_config", run_config_of(root)}, {"checkpoint", ckpt}, {"kind", lm.kind}, {"mode", mode}};
    json wer_by_snr = json::object(), utts = json::array();
    std::unique_ptr<fusion::AvModel> av;
    std::unique_ptr<fusion::SingleStreamModel> single;
    if (lm.kind == "av") {
      av = cli::restore_av(lm, mc);
    } else {
      single = cli::restore_single(lm, mc);
    }
    for (const auto& [s, set] : sets) {
      const auto ev = av ? pipeline::evaluate(*av, set, opt) : pipeline::evaluate(*single, set, opt);
      const std::string key = std::isnan(s) ? "stored" : metrics::format_snr(s);
      wer_by_snr[key] = 100.0 * ev.wer.rate();
      std::printf("snr %-7s WER %6.2f%%  (%zu utterances, %zu reference words)\n", key.c_str(),
                  100.0 * ev.wer.rate(), ev.wer.utterances, ev.wer.ref_words);
      for (std::size_t i = 0; i < set.utterances.size(); ++i) {
        const auto& u = set.utterances[i];
        const auto& h = ev.hypotheses[i];
        const auto w = metrics::wer(h.prefix, u.target);
        utts.push_back({{"id", u.id},
                        {"snr", key},
                        {"ref", vocab.decode(u.target)},
                        {"hyp", vocab.decode(h.prefix)},
                        {"score", h.joint_score},
                        {"edits", w.edits()}});
      }
    }
    results["wer_by_snr"] = wer_by_snr;
    results["utterances"] = utts;
    if (!out.empty()) write_json(out, results);
    return kOk;
  }
};

// ---------------------------------------------------------------- stream

struct StreamCmd {
  std::string corpus, ckpt, out, id;
  std::size_t index = 0, arrival = 0;
  ModelFlags model;

  void add(CLI::App* app) {
    app->add_option("--corpus", corpus)->required();
    app->add_option("--ckpt", ckpt)->required();
    app->add_option("--id", id, "Utterance id (default: --index)");
    app->add_option("--index", index, "Utterance position in the manifest")->capture_default_str();
    app->add_option("--arrival", arrival, "Frames per arrival (0 = encoder chunk)")->capture_default_str();
    app->add_option("--out", out, "Event log JSONL");
    model.add(app, false);
  }

  int run(const CLI::App& root, std::uint64_t) {
    const auto data = cli::load_corpus_dir(corpus);
    const auto lm = cli::load_model(ckpt);
    fusion::ModelConfig mc = lm.config;
    model.apply(mc);
    const auto m = cli::restore_av(lm, mc);
    const synthdata::Utterance* u = nullptr;
    if (!id.empty()) {
      for (const auto& x : data.utterances)
        if (x.id == id) u = &x;
      if (!u) throw DataError("no utterance '" + id + "' in " + corpus);
    } else {
      if (index >= data.utterances.size()) throw ContractError("field 'index': past the end of the corpus");
      u = &data.utterances[index];
    }
    streamsim::SessionConfig sc;
    sc.chunk_frames = arrival;
    sc.decoder = mc.decoder;
    const auto res = streamsim::run_streaming_session(*u, *m, sc);
    const auto vocab = ctc::Vocab::letters(data.spec.labels);
    for (const auto& e : res.events) {
      std::printf("chunk %3zu  %7.0f ms  committed [%s]  partial [%s]%s\n", e.chunk_index, e.ms_elapsed_algorithmic,
                  vocab.decode(e.committed).c_str(), vocab.decode(e.partial).c_str(), e.final ? "  (final)" : "");
    }
    std::printf("reference [%s]\n", vocab.decode(u->target).c_str());
    if (!out.empty()) res.write_jsonl(out, vocab, run_config_of(root));
    return kOk;
  }
};

// ---------------------------------------------------------------- offset

struct OffsetCmd {
  std::string corpus, ckpt, out;
  std::vector<std::string> snr;
  std::size_t workers = 1;

  void add(CLI::App* app) {
    app->add_option("--corpus", corpus)->required();
    app->add_option("--ckpt", ckpt, "Audio-visual checkpoint")->required();
    app->add_option("--snr", snr, "Re-mix test audio at these SNRs (default: as stored)");
    app->add_option("--out", out, "Offsets JSON");
    app->add_option("--workers", workers)->capture_default_str();
  }

  int run(const CLI::App& root, std::uint64_t) {
    const auto data = cli::load_corpus_dir(corpus);
    const auto lm = cli::load_model(ckpt);
    const auto m = cli::restore_av(lm, lm.config);
    std::vector<synthdata::Corpus> sets;
    if (snr.empty()) {
      sets.push_back(data);
    } else {
      for (double s : parse_snrs(snr)) sets.push_back(pipeline::at_snr(data, s));
    }
    metrics::OffsetAccumulator acc;
    pipeline::DecodeOptions opt;
    opt.decoder = lm.config.decoder;
    opt.workers = workers;
    for (const auto& set : sets) {
      const auto ev = pipeline::evaluate(*m, set, opt);
      const auto part = pipeline::measure_offsets(*m, set, &ev.hypotheses, workers);
      for (const auto& [s, c] : part.by_snr) {
        auto& dst = acc.by_snr[s];
        dst.sum_v += c.sum_v, dst.sum_a += c.sum_a, dst.abs_v += c.abs_v, dst.abs_a += c.abs_a;
        dst.tokens += c.tokens, dst.utterances += c.utterances, dst.excluded += c.excluded;
        dst.sum_v_correct += c.sum_v_correct, dst.sum_a_correct += c.sum_a_correct;
        dst.tokens_correct += c.tokens_correct;
      }
    }
    const auto rep = metrics::summarize(acc);
    json rows = json::array();
    std::printf("%-8s %9s %9s %9s %9s %7s %8s\n", "snr", "V->AV", "A->AV", "|V->AV|", "|A->AV|", "tokens", "excluded");
    for (const auto& r : rep.per_snr) {
      std::printf("%-8s %9.3f %9.3f %9.3f %9.3f %7zu %8zu\n", metrics::format_snr(r.snr_db).c_str(), r.mean_v_to_av,
                  r.mean_a_to_av, r.mean_abs_v_to_av, r.mean_abs_a_to_av, r.tokens, r.excluded);
      rows.push_back({{"snr", metrics::format_snr(r.snr_db)},
                      {"v_to_av", r.mean_v_to_av},
                      {"a_to_av", r.mean_a_to_av},
                      {"abs_v_to_av", r.mean_abs_v_to_av},
                      {"abs_a_to_av", r.mean_abs_a_to_av},
                      {"v_to_av_correct", r.mean_v_to_av_correct},
                      {"a_to_av_correct", r.mean_a_to_av_correct},
                      {"tokens", r.tokens},
                      {"tokens_correct", r.tokens_correct},
                      {"utterances", r.utterances},
                      {"excluded", r.excluded}});
    }
    std::printf("all      %9.3f %9.3f %9.3f %9.3f %7zu %8zu\n", rep.mean_offset_v_to_av, rep.mean_offset_a_to_av,
                rep.mean_abs_offset_v_to_av, rep.mean_abs_offset_a_to_av, rep.token_count, rep.excluded_count);
    if (!out.empty()) {
      write_json(out, {{"run_config", run_config_of(root)},
                       {"checkpoint", ckpt},
                       {"mean_offset_v_to_av", rep.mean_offset_v_to_av},
                       {"mean_offset_a_to_av", rep.mean_offset_a_to_av},
                       {"mean_abs_offset_v_to_av", rep.mean_abs_offset_v_to_av},
                       {"mean_abs_offset_a_to_av", rep.mean_abs_offset_a_to_av},
                       {"utterances", rep.utterance_count},
                       {"excluded", rep.excluded_count},
                       {"per_snr", rows}});
    }
    return kOk;
  }
};

// ---------------------------------------------------------------- latency

struct LatencyCmd {
  std::string ckpt, model_config;
  double audio_frontend_ms = 35, visual_frontend_ms = 100, frame_ms = 40;
  std::size_t chunk = 12;
  std::string tau = "12";

  void add(CLI::App* app) {
    app->add_option("--ckpt", ckpt, "Read settings from a checkpoint instead");
    app->add_option("--model-config", model_config, "Read settings from a model key=value file instead");
    app->add_option("--audio-frontend-ms", audio_frontend_ms)->capture_default_str();
    app->add_option("--visual-frontend-ms", visual_frontend_ms)->capture_default_str();
    app->add_option("--frame-ms", frame_ms)->capture_default_str();
    app->add_option("--chunk", chunk, "Encoder chunk frames (0 = offline)")->capture_default_str();
    app->add_option("--tau", tau, "Decoder look-ahead frames (inf = offline)")->capture_default_str();
  }

  int run(const CLI::App&, std::uint64_t) {
    fusion::ModelConfig mc;
    if (!ckpt.empty()) {
      mc = cli::load_model(ckpt).config;
    } else if (!model_config.empty()) {
      mc = fusion::ModelConfig::from_kv(KeyValues::load(model_config));
    } else {
      mc.audio.frontend_delay_ms = audio_frontend_ms;
      mc.visual.frontend_delay_ms = visual_frontend_ms;
      mc.audio.frame_ms = mc.visual.frame_ms = frame_ms;
      mc.audio.chunk_frames = mc.visual.chunk_frames = chunk;
      mc.decoder.lookahead_tau = parse_tau(tau);
    }
    const auto b = streamsim::compute_latency(mc);
    auto ms = [](double v) { return std::isinf(v) ? std::string("offline") : std::to_string(std::lround(v)) + " ms"; };
    std::printf("audio encoder   %s\n", ms(b.audio_encoder_ms).c_str());
    std::printf("visual encoder  %s\n", ms(b.visual_encoder_ms).c_str());
    std::printf("encoder         %s\n", ms(b.encoder_ms).c_str());
    std::printf("decoder         +%s\n", ms(b.decoder_ms).c_str());
    std::printf("end-to-end      %s\n", ms(b.end_to_end_ms).c_str());
    return kOk;
  }
};

// ---------------------------------------------------------------- report

struct ReportCmd {
  std::vector<std::string> wer_runs, offset_runs;
  std::string out;

  void add(CLI::App* app) {
    app->add_option("--wer", wer_runs, "NAME=results.json from decode");
    app->add_option("--offset", offset_runs, "NAME=offsets.json from offset");
    app->add_option("--out", out, "Report directory")->required();
  }

  static std::pair<std::string, std::string> split(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ContractError("field 'run': expected NAME=PATH, got '" + s + "'");
    return {s.substr(0, eq), s.substr(eq + 1)};
  }

  int run(const CLI::App&, std::uint64_t) {
    std::vector<metrics::RunSummary> runs;
    auto find = [&](const std::string& name) -> metrics::RunSummary& {
      for (auto& r : runs)
        if (r.name == name) return r;
      runs.push_back({name, true, {}, std::nullopt, ""});
      return runs.back();
    };
    for (const auto& s : wer_runs) {
      const auto [name, path] = split(s);
      auto& r = find(name);
      if (!fs::exists(path)) {
        r.present = false;
        continue;
      }
      const json j = read_json(path);
      for (const auto& [k, v] : j.at("wer_by_snr").items()) {
        if (k != "stored") r.wer_by_snr[parse_snr(k)] = v.get<double>();
      }
      r.run_config = j.value("run_config", "");
    }
    for (const auto& s : offset_runs) {
      const auto [name, path] = split(s);
      auto& r = find(name);
      if (!fs::exists(path)) {
        r.present = false;
        continue;
      }
      const json j = read_json(path);
      metrics::OffsetReport rep;
      rep.mean_offset_v_to_av = j.at("mean_offset_v_to_av").get<double>();
      rep.mean_offset_a_to_av = j.at("mean_offset_a_to_av").get<double>();
      rep.utterance_count = j.at("utterances").get<std::size_t>();
      rep.excluded_count = j.at("excluded").get<std::size_t>();
      for (const auto& row : j.at("per_snr")) {
        metrics::OffsetReport::Row x;
        x.snr_db = parse_snr(row.at("snr").get<std::string>());
        x.mean_v_to_av = row.at("v_to_av").get<double>();
        x.mean_a_to_av = row.at("a_to_av").get<double>();
        x.tokens = row.at("tokens").get<std::size_t>();
        rep.per_snr.push_back(x);
      }
      r.offsets = rep;
    }
    const auto files = metrics::emit_report(runs, out);
    std::ifstream wt(files.wer_table), ot(files.offset_table);
    std::cout << wt.rdbuf() << '\n' << ot.rdbuf();
    return kOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming audio-visual recognition on synthetic corpora"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from a config file (as embedded in every artifact)");
  std::uint64_t seed = 0;
  bool seed_given = false;
  app.add_option_function<std::uint64_t>(
      "--seed",
      [&](const std::uint64_t& s) {
        seed = s;
        seed_given = true;
      },
      "Random seed (default: AVSR_SEED or 1)");

  GenerateCmd generate;
  PretrainCmd pretrain;
  FinetuneCmd finetune;
  AlignCmd align;
  DecodeCmd decode;
  StreamCmd stream;
  OffsetCmd offset;
  LatencyCmd latency;
  ReportCmd report;
  std::function<int(const CLI::App&, std::uint64_t)> action;
  auto sub = [&](const char* name, const char* help, auto& cmd) {
    CLI::App* s = app.add_subcommand(name, help);
    cmd.add(s);
    s->callback([&action, &cmd] { action = [&cmd](const CLI::App& root, std::uint64_t sd) { return cmd.run(root, sd); }; });
  };
  sub("generate", "Generate a synthetic two-stream corpus", generate);
  sub("pretrain", "Train a single-stream model (CTC + attention)", pretrain);
  sub("finetune", "Train the fused audio-visual model", finetune);
  sub("align", "Forced alignments of reference transcripts", align);
  sub("decode", "Decode a corpus and score WER", decode);
  sub("stream", "Simulate chunked arrival of one utterance", stream);
  sub("offset", "Response offsets between stream alignments", offset);
  sub("latency", "Algorithmic latency budget", latency);
  sub("report", "Tables and plot data from decode/offset results", report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  try {
    if (!seed_given) seed = default_seed();
    g_run_config = make_run_config(app, seed);
    return action(app, seed);
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const ContractError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const InfeasibleTargetError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  }
}
