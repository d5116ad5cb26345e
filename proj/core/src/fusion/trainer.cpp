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

#include "avsr/fusion/trainer.hpp"

#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include "avsr/errors.hpp"
#include "avsr/numcore/ops.hpp"
#include "avsr/numcore/optim.hpp"
#include "json.hpp"

namespace avsr::fusion {

namespace {

std::string format_list(const std::vector<double>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    if (std::isinf(v[i]))
      os << "inf";
    else
      os << v[i];
  }
  return os.str();
}

std::vector<double> parse_list(const std::string& text, const std::string& field) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item == "inf") {
      out.push_back(synthdata::kCleanSnr);
      continue;
    }
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ContractError("train field '" + field + "': '" + item + "' is not a number");
    }
  }
  return out;
}

/// Optimiser front so both update rules share the loop.
class Updater {
 public:
  Updater(std::vector<Tensor> params, const TrainConfig& cfg, std::size_t total_steps)
      : params_(std::move(params)), cfg_(cfg), schedule_(cfg.warmup_steps, total_steps) {
    if (cfg.optimizer == "adamw") adam_ = std::make_unique<AdamW>(params_, cfg.lr, schedule_, cfg.weight_decay);
  }

  double rate() const { return adam_ ? adam_->schedule().current(cfg_.lr) : schedule_.current(cfg_.lr); }

  double step() {
    if (adam_) return adam_->step(cfg_.clip_norm);
    double sq = 0;
    for (const auto& p : params_)
      if (p.has_grad())
        for (double g : p.grad()) sq += g * g;
    sgd_step(params_, cfg_.lr, schedule_, cfg_.weight_decay);
    return std::sqrt(sq);
  }

 private:
  std::vector<Tensor> params_;
  const TrainConfig& cfg_;
  WarmupCosine schedule_;
  std::unique_ptr<AdamW> adam_;
};

std::vector<Tensor> trainable(const ParamStore& store, const std::string& exclude_prefix = "") {
  std::vector<Tensor> out;
  for (const auto& [name, t] : store.entries()) {
    if (!t.requires_grad()) continue;
    if (!exclude_prefix.empty() && name.rfind(exclude_prefix, 0) == 0) continue;
    out.push_back(t);
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x5eed0000ULL + epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

void accumulate(LossBreakdown& acc, const LossBreakdown& x) {
  acc.l_ctc += x.l_ctc;
  acc.l_ce_decoder += x.l_ce_decoder;
  acc.l_align_av2a += x.l_align_av2a;
  acc.l_align_av2v += x.l_align_av2v;
  acc.total += x.total;
}

void divide(LossBreakdown& acc, std::size_t n) {
  if (n == 0) return;
  const double k = 1.0 / static_cast<double>(n);
  acc.l_ctc *= k;
  acc.l_ce_decoder *= k;
  acc.l_align_av2a *= k;
  acc.l_align_av2v *= k;
  acc.total *= k;
}

struct Item {
  Tensor loss;
  LossBreakdown breakdown;
};

/// Shared mini-batch loop. `loss_for(index, epoch)` returns nothing for an
/// utterance that must be skipped (its reason already recorded).
template <typename LossFn, typename EpochFn>
TrainLog run_loop(std::size_t n, const TrainConfig& cfg, std::vector<Tensor> params, LossFn&& loss_for,
                  EpochFn&& on_epoch, const StepHook& hook) {
  cfg.validate();
  if (n == 0) throw DataError("training corpus is empty");
  const std::size_t per_epoch = (n + cfg.batch - 1) / cfg.batch;
  Updater upd(params, cfg, cfg.epochs * per_epoch);
  TrainLog log;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    on_epoch(epoch, log);
    const auto order = epoch_order(n, cfg.seed, epoch);
    for (std::size_t b = 0; b < n; b += cfg.batch) {
      for (auto& p : params) p.zero_grad();
      StepRecord rec;
      rec.epoch = epoch;
      rec.step = step;
      rec.lr = upd.rate();
      std::vector<Item> items;
      for (std::size_t k = b; k < std::min(n, b + cfg.batch); ++k) {
        auto item = loss_for(order[k], epoch, log);
        if (!item) {
          ++rec.skipped;
          continue;
        }
        items.push_back(std::move(*item));
      }
      rec.utterances = items.size();
      if (!items.empty()) {
        Tensor total = scale(items[0].loss, 1.0 / static_cast<double>(items.size()));
        for (std::size_t i = 1; i < items.size(); ++i)
          total = add(total, scale(items[i].loss, 1.0 / static_cast<double>(items.size())));
        for (const auto& it : items) accumulate(rec.loss, it.breakdown);
        divide(rec.loss, items.size());
        backward(total);
        rec.grad_norm = upd.step();
      }
      log.skipped_total += rec.skipped;
      log.steps.push_back(rec);
      ++step;
      if (hook && !hook(rec)) return log;
    }
  }
  return log;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ContractError("train field '" + field + "': " + why);
  };
  if (batch == 0) fail("batch", "must be >= 1");
  if (!(lr > 0)) fail("lr", "must be positive");
  if (weight_decay < 0) fail("weight_decay", "must be non-negative");
  if (clip_norm < 0) fail("clip_norm", "must be non-negative");
  if (optimizer != "adamw" && optimizer != "sgd") fail("optimizer", "must be adamw or sgd");
  if (mask_rate_per_s < 0) fail("mask_rate_per_s", "must be non-negative");
  if (mask_max_ms < 0) fail("mask_max_ms", "must be non-negative");
}

KeyValues TrainConfig::to_kv(const std::string& p) const {
  KeyValues kv;
  kv.set(p + "epochs", static_cast<long long>(epochs));
  kv.set(p + "batch", static_cast<long long>(batch));
  kv.set(p + "lr", lr);
  kv.set(p + "warmup_steps", static_cast<long long>(warmup_steps));
  kv.set(p + "weight_decay", weight_decay);
  kv.set(p + "clip_norm", clip_norm);
  kv.set(p + "optimizer", optimizer);
  kv.set(p + "noise_snr_choices", format_list(noise_snr_choices));
  kv.set(p + "mask_rate_per_s", mask_rate_per_s);
  kv.set(p + "mask_max_ms", mask_max_ms);
  kv.set(p + "realign_every_step", realign_every_step);
  kv.set(p + "seed", std::to_string(seed));
  return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv, const std::string& p, const TrainConfig& d) {
  auto size = [&](const char* k, std::size_t fallback) {
    const long long v = kv.get_int(p + k, static_cast<long long>(fallback));
    if (v < 0) throw ContractError("train field '" + p + k + "': must be non-negative");
    return static_cast<std::size_t>(v);
  };
  TrainConfig c;
  c.epochs = size("epochs", d.epochs);
  c.batch = size("batch", d.batch);
  c.lr = kv.get_double(p + "lr", d.lr);
  c.warmup_steps = size("warmup_steps", d.warmup_steps);
  c.weight_decay = kv.get_double(p + "weight_decay", d.weight_decay);
  c.clip_norm = kv.get_double(p + "clip_norm", d.clip_norm);
  c.optimizer = kv.get_string(p + "optimizer", d.optimizer);
  c.noise_snr_choices = kv.has(p + "noise_snr_choices")
                            ? parse_list(kv.get_string(p + "noise_snr_choices", ""), p + "noise_snr_choices")
                            : d.noise_snr_choices;
  c.mask_rate_per_s = kv.get_double(p + "mask_rate_per_s", d.mask_rate_per_s);
  c.mask_max_ms = kv.get_double(p + "mask_max_ms", d.mask_max_ms);
  c.realign_every_step = kv.get_bool(p + "realign_every_step", d.realign_every_step);
  try {
    c.seed = std::stoull(kv.get_string(p + "seed", std::to_string(d.seed)));
  } catch (const std::exception&) {
    throw ContractError("train field '" + p + "seed': not an unsigned integer");
  }
  c.validate();
  return c;
}

void TrainLog::write_jsonl(const std::filesystem::path& path, const std::string& run_config) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write training log " + path.string());
  nlohmann::json head;
  head["type"] = "config";
  head["run_config"] = run_config;
  head["skipped_total"] = skipped_total;
  head["skip_reasons"] = skip_reasons;
  os << head.dump() << '\n';
  for (const auto& s : steps) {
    nlohmann::json j;
    j["type"] = "step";
    j["epoch"] = s.epoch;
    j["step"] = s.step;
    j["utterances"] = s.utterances;
    j["skipped"] = s.skipped;
    j["l_ctc"] = s.loss.l_ctc;
    j["l_ce_decoder"] = s.loss.l_ce_decoder;
    j["l_align_av2a"] = s.loss.l_align_av2a;
    j["l_align_av2v"] = s.loss.l_align_av2v;
    j["total"] = s.loss.total;
    j["lr"] = s.lr;
    j["grad_norm"] = s.grad_norm;
    os << j.dump() << '\n';
  }
}

synthdata::Utterance augment(const synthdata::Utterance& u, std::size_t index, std::size_t epoch,
                             const TrainConfig& cfg, double frame_ms) {
  Rng rng(derive_seed(derive_seed(cfg.seed, 0xa46e0000ULL + epoch), index));
  synthdata::Utterance out = u;
  if (!cfg.noise_snr_choices.empty() && u.clean_a.defined()) {
    out = synthdata::with_snr(u, cfg.noise_snr_choices[rng.index(cfg.noise_snr_choices.size())]);
  }
  if (cfg.mask_rate_per_s > 0 && cfg.mask_max_ms > 0) {
    out.stream_a = synthdata::time_mask(out.stream_a, frame_ms, cfg.mask_rate_per_s, cfg.mask_max_ms, rng);
    out.stream_v = synthdata::time_mask(out.stream_v, frame_ms, cfg.mask_rate_per_s, cfg.mask_max_ms, rng);
  }
  return out;
}

TrainLog pretrain(SingleStreamModel& model, const synthdata::Corpus& corpus, double alpha, const TrainConfig& cfg,
                  const StepHook& hook) {
  if (!(alpha >= 0 && alpha <= 1)) throw ContractError("pretrain: alpha must lie in [0,1]");
  const double frame_ms = model.encoder().config().frame_ms;
  const auto& utts = corpus.utterances;
  auto loss_for = [&](std::size_t i, std::size_t epoch, TrainLog&) -> std::optional<Item> {
    const auto u = augment(utts[i], i, epoch, cfg, frame_ms);
    const auto out = model.forward(model.stream() == Stream::kAudio ? u.stream_a : u.stream_v);
    auto r = single_stream_loss(model, out, u.target, alpha);
    return Item{r.total, r.breakdown};
  };
  return run_loop(utts.size(), cfg, trainable(model.params()), loss_for, [](std::size_t, TrainLog&) {}, hook);
}

TrainLog finetune(AvModel& model, const synthdata::Corpus& corpus, const JointLossConfig& loss, AlignSource mode,
                  const TrainConfig& cfg, const StepHook& hook) {
  loss.validate();
  const double frame_ms = model.config().audio.frame_ms;
  const auto& utts = corpus.utterances;
  std::vector<AlignmentTargets> targets(utts.size());

  auto refresh = [&](std::size_t epoch, TrainLog&) {
    if (mode == AlignSource::kNone || cfg.realign_every_step) return;
    NoGradGuard ng;
    for (std::size_t i = 0; i < utts.size(); ++i) {
      const auto u = augment(utts[i], i, epoch, cfg, frame_ms);
      targets[i] = extract_alignment(model.forward(u.stream_a, u.stream_v), u.target, mode);
    }
  };
  auto loss_for = [&](std::size_t i, std::size_t epoch, TrainLog& log) -> std::optional<Item> {
    const auto u = augment(utts[i], i, epoch, cfg, frame_ms);
    const auto out = model.forward(u.stream_a, u.stream_v);
    if (mode != AlignSource::kNone && cfg.realign_every_step) targets[i] = extract_alignment(out, u.target, mode);
    if (mode != AlignSource::kNone && !targets[i].path) {
      log.skip_reasons.push_back(u.id + ": " + targets[i].skip_reason);
      return std::nullopt;
    }
    auto r = total_loss(model, out, u.target, loss, mode, targets[i]);
    return Item{r.total, r.breakdown};
  };
  return run_loop(utts.size(), cfg, trainable(model.params()), loss_for, refresh, hook);
}

TrainLog train_ctc_only(AvModel& model, const synthdata::Corpus& corpus, const TrainConfig& cfg,
                        const StepHook& hook) {
  const double frame_ms = model.config().audio.frame_ms;
  const auto& utts = corpus.utterances;
  auto loss_for = [&](std::size_t i, std::size_t epoch, TrainLog&) -> std::optional<Item> {
    const auto u = augment(utts[i], i, epoch, cfg, frame_ms);
    const auto out = model.forward(u.stream_a, u.stream_v);
    Item it;
    it.loss = ctc::ctc_loss(out.lp_av, u.target);
    it.breakdown.l_ctc = it.loss.item();
    it.breakdown.total = it.breakdown.l_ctc;
    return it;
  };
  return run_loop(utts.size(), cfg, trainable(model.params(), "dec."), loss_for, [](std::size_t, TrainLog&) {},
                  hook);
}

}  // namespace avsr::fusion
