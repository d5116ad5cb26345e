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

#include "avsr/ctc/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

#include "avsr/errors.hpp"

namespace avsr::ctc {

double log_add(double a, double b) {
  if (is_log_zero(a)) return is_log_zero(b) ? kLogZero : b;
  if (is_log_zero(b)) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

namespace {

double clamp_zero(double x) { return is_log_zero(x) ? kLogZero : x; }

// Blank-interleaved target: ∅ l1 ∅ l2 ... lL ∅.
LabelSeq extend_target(std::span<const Label> target) {
  LabelSeq ext(2 * target.size() + 1, kBlank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  return ext;
}

bool can_skip(const LabelSeq& ext, std::size_t s) {
  return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
}

void check_target(std::span<const Label> target, std::size_t frames, std::size_t width,
                  const char* op) {
  for (Label l : target) {
    if (l == kBlank || l >= width) {
      throw ContractError(std::string(op) + ": target label " + std::to_string(l) +
                          " is blank or outside the vocabulary of width " + std::to_string(width));
    }
  }
  if (!feasible(target, frames)) {
    throw InfeasibleTargetError(std::string(op) + ": target of " + std::to_string(target.size()) +
                                " labels needs " + std::to_string(min_frames(target)) +
                                " frames, only " + std::to_string(frames) + " available");
  }
}

// Forward variables alpha[t*S+s], log domain, emissions included.
std::vector<double> forward_vars(std::span<const double> lp, std::size_t T, std::size_t W,
                                 const LabelSeq& ext) {
  const std::size_t S = ext.size();
  std::vector<double> alpha(T * S, kLogZero);
  alpha[0] = lp[ext[0]];
  if (S > 1) alpha[1] = lp[ext[1]];
  for (std::size_t t = 1; t < T; ++t) {
    const double* prev = &alpha[(t - 1) * S];
    double* cur = &alpha[t * S];
    for (std::size_t s = 0; s < S; ++s) {
      double a = prev[s];
      if (s >= 1) a = log_add(a, prev[s - 1]);
      if (can_skip(ext, s)) a = log_add(a, prev[s - 2]);
      cur[s] = is_log_zero(a) ? kLogZero : clamp_zero(a + lp[t * W + ext[s]]);
    }
  }
  return alpha;
}

double total_from_alpha(const std::vector<double>& alpha, std::size_t T, std::size_t S) {
  double p = alpha[(T - 1) * S + S - 1];
  if (S > 1) p = log_add(p, alpha[(T - 1) * S + S - 2]);
  return p;
}

}  // namespace

Vocab::Vocab(std::vector<std::string> labels) {
  symbols_.reserve(labels.size() + 1);
  symbols_.emplace_back("∅");
  index_["∅"] = kBlank;
  for (auto& l : labels) {
    if (l.empty() || l.find(' ') != std::string::npos) {
      throw ContractError("vocab: label symbols must be non-empty without spaces");
    }
    if (!index_.emplace(l, symbols_.size()).second) throw ContractError("vocab: duplicate symbol " + l);
    symbols_.push_back(std::move(l));
  }
}

Vocab Vocab::letters(std::size_t count) {
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < count; ++i) {
    std::string s(1, static_cast<char>('a' + i % 26));
    if (i >= 26) s += std::to_string(i / 26);
    labels.push_back(s);
  }
  return Vocab(std::move(labels));
}

const std::string& Vocab::symbol(Label id) const {
  if (id >= symbols_.size()) throw ContractError("vocab: id " + std::to_string(id) + " out of range");
  return symbols_[id];
}

Label Vocab::id(const std::string& symbol) const {
  auto it = index_.find(symbol);
  if (it == index_.end()) throw DataError("vocab: unknown symbol '" + symbol + "'");
  return it->second;
}

LabelSeq Vocab::encode(const std::string& text) const {
  LabelSeq out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    const Label l = id(tok);
    if (l == kBlank) throw DataError("vocab: blank is not a target symbol");
    out.push_back(l);
  }
  return out;
}

std::string Vocab::decode(std::span<const Label> labels) const {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i) out += ' ';
    out += symbol(labels[i]);
  }
  return out;
}

std::string Vocab::render_path(std::span<const Label> path) const { return decode(path); }

void PosteriorMatrix::validate(double tol) const {
  const std::size_t T = frames(), W = width();
  const auto v = log_probs.values();
  for (std::size_t t = 0; t < T; ++t) {
    double acc = kLogZero;
    for (std::size_t k = 0; k < W; ++k) acc = log_add(acc, v[t * W + k]);
    if (std::abs(acc) > tol) {
      throw ContractError("posterior row " + std::to_string(t) + " log-sum-exps to " + std::to_string(acc));
    }
  }
}

std::size_t min_frames(std::span<const Label> target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

bool feasible(std::span<const Label> target, std::size_t frames) {
  return frames >= 1 && min_frames(target) <= frames;
}

Tensor ctc_loss(const Tensor& log_probs, std::span<const Label> target) {
  if (log_probs.rank() != 2) throw DimensionError("ctc_loss: log_probs must be [T, V+1], got " + shape_str(log_probs.shape()));
  const std::size_t T = log_probs.rows(), W = log_probs.cols();
  check_target(target, T, W, "ctc_loss");
  const LabelSeq ext = extend_target(target);
  const std::size_t S = ext.size();
  const auto lp = log_probs.values();

  const auto alpha = forward_vars(lp, T, W, ext);
  const double log_total = total_from_alpha(alpha, T, S);
  if (is_log_zero(log_total)) {
    throw NumericError("ctc_loss: all alignments have zero probability");
  }

  // Backward variables with emission at t included.
  std::vector<double> beta(T * S, kLogZero);
  beta[(T - 1) * S + S - 1] = lp[(T - 1) * W + ext[S - 1]];
  if (S > 1) beta[(T - 1) * S + S - 2] = lp[(T - 1) * W + ext[S - 2]];
  for (std::size_t t = T - 1; t-- > 0;) {
    const double* next = &beta[(t + 1) * S];
    double* cur = &beta[t * S];
    for (std::size_t s = 0; s < S; ++s) {
      double b = next[s];
      if (s + 1 < S) b = log_add(b, next[s + 1]);
      if (s + 2 < S && can_skip(ext, s + 2)) b = log_add(b, next[s + 2]);
      cur[s] = is_log_zero(b) ? kLogZero : clamp_zero(b + lp[t * W + ext[s]]);
    }
  }

  auto occupancy = std::make_shared<std::vector<double>>(T * W, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      const double a = alpha[t * S + s], b = beta[t * S + s];
      if (is_log_zero(a) || is_log_zero(b)) continue;
      (*occupancy)[t * W + ext[s]] += std::exp(a + b - lp[t * W + ext[s]] - log_total);
    }

  return make_op_result({}, {-log_total}, {log_probs}, "ctc_loss", [occupancy](detail::Node& self) {
    auto& parent = *self.parents[0];
    if (!parent.requires_grad) return;
    parent.ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < occupancy->size(); ++i) parent.grad[i] -= g * (*occupancy)[i];
  });
}

double sequence_log_prob(const PosteriorMatrix& post, std::span<const Label> target) {
  const std::size_t T = post.frames(), W = post.width();
  if (!feasible(target, T)) return kLogZero;
  const LabelSeq ext = extend_target(target);
  const auto alpha = forward_vars(post.log_probs.values(), T, W, ext);
  return total_from_alpha(alpha, T, ext.size());
}

ForcedAlignment forced_align(const PosteriorMatrix& post, std::span<const Label> target) {
  const std::size_t T = post.frames(), W = post.width();
  check_target(target, T, W, "forced_align");
  const LabelSeq ext = extend_target(target);
  const std::size_t S = ext.size();
  const auto lp = post.log_probs.values();

  // best[t*S+s]: max log-prob of completing the path from state s at frame t.
  std::vector<double> best(T * S, kLogZero);
  best[(T - 1) * S + S - 1] = lp[(T - 1) * W + ext[S - 1]];
  if (S > 1) best[(T - 1) * S + S - 2] = lp[(T - 1) * W + ext[S - 2]];
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double m = best[(t + 1) * S + s];
      if (s + 1 < S) m = std::max(m, best[(t + 1) * S + s + 1]);
      if (s + 2 < S && can_skip(ext, s + 2)) m = std::max(m, best[(t + 1) * S + s + 2]);
      best[t * S + s] = is_log_zero(m) ? kLogZero : clamp_zero(m + lp[t * W + ext[s]]);
    }
  }

  auto tied = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)); };
  // Pick among candidate states at one frame: max score, ties to the smaller label id.
  auto choose = [&](std::size_t t, std::initializer_list<std::size_t> cands) {
    std::size_t pick = S;
    for (std::size_t s : cands) {
      if (s >= S) continue;
      const double v = best[t * S + s];
      if (is_log_zero(v)) continue;
      if (pick == S) {
        pick = s;
        continue;
      }
      const double pv = best[t * S + pick];
      if (tied(v, pv) ? ext[s] < ext[pick] : v > pv) pick = s;
    }
    return pick;
  };

  ForcedAlignment out;
  out.path.labels.resize(T);
  std::size_t s = choose(0, {0, 1});
  if (s == S) throw NumericError("forced_align: no alignment with non-zero probability");
  out.log_prob = best[s];
  out.path.labels[0] = ext[s];
  for (std::size_t t = 1; t < T; ++t) {
    const std::size_t skip = (s + 2 < S && can_skip(ext, s + 2)) ? s + 2 : S;
    s = choose(t, {s, s + 1, skip});
    out.path.labels[t] = ext[s];
  }
  return out;
}

LabelSeq collapse(std::span<const Label> path) {
  LabelSeq out;
  Label prev = kBlank;
  for (Label l : path) {
    if (l != kBlank && l != prev) out.push_back(l);
    prev = l;
  }
  return out;
}

std::vector<std::size_t> token_start_frames(std::span<const Label> path) {
  std::vector<std::size_t> out;
  Label prev = kBlank;
  for (std::size_t t = 0; t < path.size(); ++t) {
    if (path[t] != kBlank && path[t] != prev) out.push_back(t);
    prev = path[t];
  }
  return out;
}

std::vector<PrefixState> initial_beam() {
  PrefixState s;
  s.log_pb = 0.0;
  return {s};
}

std::vector<PrefixCandidate> expand_frame(const std::vector<PrefixState>& beam,
                                          std::span<const double> frame_logp, std::size_t t,
                                          const ExpandOptions& opts) {
  std::vector<PrefixCandidate> cands;
  std::map<LabelSeq, std::size_t> where;
  cands.reserve(beam.size() * 2);
  for (const auto& b : beam) {
    PrefixCandidate c;
    c.state.prefix = b.prefix;
    c.state.triggers = b.triggers;
    where.emplace(b.prefix, cands.size());
    cands.push_back(std::move(c));
  }
  const double lp_blank = frame_logp[kBlank];
  for (std::size_t i = 0; i < beam.size(); ++i) {
    const PrefixState& b = beam[i];
    const double total = b.total();
    if (is_log_zero(total)) continue;
    PrefixState& self = cands[i].state;
    self.log_pb = log_add(self.log_pb, clamp_zero(total + lp_blank));
    const Label last = b.prefix.empty() ? kBlank : b.prefix.back();
    if (last != kBlank) self.log_pnb = log_add(self.log_pnb, clamp_zero(b.log_pnb + frame_logp[last]));
    for (Label c = 1; c < frame_logp.size(); ++c) {
      if (frame_logp[c] < opts.token_min_logp) continue;
      const double from = (c == last) ? b.log_pb : total;
      if (is_log_zero(from)) continue;
      const double mass = clamp_zero(from + frame_logp[c]);
      LabelSeq ext = b.prefix;
      ext.push_back(c);
      auto it = where.find(ext);
      if (it == where.end()) {
        PrefixCandidate nc;
        nc.is_new = true;
        nc.parent = i;
        nc.token = c;
        nc.state.prefix = ext;
        nc.state.triggers = b.triggers;
        nc.state.triggers.push_back(t);
        it = where.emplace(std::move(ext), cands.size()).first;
        cands.push_back(std::move(nc));
      }
      auto& dst = cands[it->second].state;
      dst.log_pnb = log_add(dst.log_pnb, mass);
    }
  }
  return cands;
}

namespace {

// Best-first with a lexicographic tie-break so pruning is deterministic.
bool ranks_before(const PrefixState& a, const PrefixState& b) {
  const double ta = a.total(), tb = b.total();
  if (ta != tb) return ta > tb;
  return a.prefix < b.prefix;
}

std::vector<PrefixState> prune(std::vector<PrefixCandidate>&& cands, std::size_t beam) {
  std::vector<PrefixState> kept;
  kept.reserve(cands.size());
  for (auto& c : cands)
    if (!is_log_zero(c.state.total())) kept.push_back(std::move(c.state));
  std::sort(kept.begin(), kept.end(), ranks_before);
  if (kept.size() > beam) kept.resize(beam);
  return kept;
}

}  // namespace

std::vector<BeamHypothesis> prefix_beam_search(const PosteriorMatrix& post, std::size_t beam,
                                               const ExpandOptions& opts) {
  if (beam == 0) throw ContractError("prefix_beam_search: beam must be >= 1");
  auto states = initial_beam();
  for (std::size_t t = 0; t < post.frames(); ++t) {
    states = prune(expand_frame(states, post.row(t), t, opts), beam);
  }
  std::vector<BeamHypothesis> out;
  for (auto& s : states) out.push_back({std::move(s.prefix), s.total(), std::move(s.triggers)});
  return out;
}

std::vector<double> beam_mass_trace(const PosteriorMatrix& post, std::size_t beam) {
  auto states = initial_beam();
  std::vector<double> trace;
  for (std::size_t t = 0; t < post.frames(); ++t) {
    states = prune(expand_frame(states, post.row(t), t), beam);
    double mass = kLogZero;
    for (const auto& s : states) mass = log_add(mass, s.total());
    trace.push_back(mass);
  }
  return trace;
}

PrefixScorer::PrefixScorer(const PosteriorMatrix& post) : post_(post) {}

PrefixScorer::State PrefixScorer::initial() const {
  const std::size_t T = post_.frames();
  State s;
  s.r_nb.assign(T, kLogZero);
  s.r_b.assign(T, kLogZero);
  double acc = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    acc = clamp_zero(acc + post_.at(t, kBlank));
    s.r_b[t] = acc;
  }
  return s;
}

double PrefixScorer::extend(const State& g, Label c, State* next) const {
  const std::size_t T = post_.frames();
  State h;
  h.r_nb.assign(T, kLogZero);
  h.r_b.assign(T, kLogZero);
  h.last = c;
  h.empty = false;
  h.r_nb[0] = g.empty ? post_.at(0, c) : kLogZero;
  double psi = h.r_nb[0];
  for (std::size_t t = 1; t < T; ++t) {
    const double phi = (!g.empty && g.last == c) ? g.r_b[t - 1] : log_add(g.r_b[t - 1], g.r_nb[t - 1]);
    const double lc = post_.at(t, c);
    h.r_nb[t] = clamp_zero(log_add(h.r_nb[t - 1], phi) + lc);
    h.r_b[t] = clamp_zero(log_add(h.r_b[t - 1], h.r_nb[t - 1]) + post_.at(t, kBlank));
    psi = log_add(psi, clamp_zero(phi + lc));
  }
  if (next) *next = std::move(h);
  return psi;
}

double PrefixScorer::final_score(const State& s) const {
  const std::size_t T = post_.frames();
  return log_add(s.r_nb[T - 1], s.r_b[T - 1]);
}

}  // namespace avsr::ctc
