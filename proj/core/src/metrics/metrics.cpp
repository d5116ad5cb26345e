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

#include "avsr/metrics/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "avsr/errors.hpp"

namespace avsr::metrics {

namespace {

enum class Op { kMatch, kSub, kIns, kDel };

// Levenshtein table with a backtrace. Ties prefer match/sub, then deletion,
// then insertion, so the script is deterministic.
template <typename T>
std::vector<Op> edit_script(const std::vector<T>& hyp, const std::vector<T>& ref) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  }
  std::vector<Op> ops;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        ops.push_back(same ? Op::kMatch : Op::kSub);
        --i, --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ops.push_back(Op::kDel);
      --i;
    } else {
      ops.push_back(Op::kIns);
      --j;
    }
  }
  std::reverse(ops.begin(), ops.end());
  return ops;
}

template <typename T>
WerResult wer_impl(const std::vector<T>& hyp, const std::vector<T>& ref) {
  WerResult r;
  r.ref_len = ref.size();
  r.hyp_len = hyp.size();
  for (Op op : edit_script(hyp, ref)) {
    if (op == Op::kSub) ++r.substitutions;
    if (op == Op::kIns) ++r.insertions;
    if (op == Op::kDel) ++r.deletions;
  }
  if (ref.empty() && !hyp.empty()) {
    // Error rate is undefined; count every hypothesis word as an insertion
    // against a denominator of one and flag the utterance.
    r.undefined = true;
    r.wer = static_cast<double>(r.edits());
  } else if (!ref.empty()) {
    r.wer = static_cast<double>(r.edits()) / static_cast<double>(ref.size());
  }
  return r;
}

double safe_div(long long num, std::size_t den) { return den == 0 ? 0.0 : static_cast<double>(num) / den; }

std::string sanitize(const std::string& name) {
  std::string out;
  for (char c : name) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out.empty() ? "run" : out;
}

std::string fmt(double v, int prec) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

// Left column padded to the widest entry, the rest right aligned.
void write_table(std::ostream& os, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w;
  for (const auto& r : rows) {
    if (w.size() < r.size()) w.resize(r.size(), 0);
    for (std::size_t c = 0; c < r.size(); ++c) w[c] = std::max(w[c], r[c].size());
  }
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c == 0) {
        line += r[c] + std::string(w[c] - r[c].size(), ' ');
      } else {
        line += "  " + std::string(w[c] - r[c].size(), ' ') + r[c];
      }
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    os << line << '\n';
  }
}

void open_or_throw(std::ofstream& f, const std::filesystem::path& p) {
  f.open(p);
  if (!f) throw DataError("cannot write " + p.string());
}

}  // namespace

WerResult wer(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) { return wer_impl(hyp, ref); }
WerResult wer(const ctc::LabelSeq& hyp, const ctc::LabelSeq& ref) { return wer_impl(hyp, ref); }

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

std::vector<bool> correct_reference_tokens(const ctc::LabelSeq& hyp, const ctc::LabelSeq& ref) {
  std::vector<bool> ok(ref.size(), false);
  std::size_t i = 0;
  for (Op op : edit_script(hyp, ref)) {
    if (op == Op::kMatch) ok[i] = true;
    if (op != Op::kIns) ++i;
  }
  return ok;
}

void WerAccumulator::add(const WerResult& r) {
  edits += r.edits();
  ref_words += r.ref_len;
  ++utterances;
  if (r.undefined) ++undefined;
}

double WerAccumulator::rate() const {
  return ref_words == 0 ? 0.0 : static_cast<double>(edits) / static_cast<double>(ref_words);
}

double TokenOffsets::mean() const {
  if (deltas.empty()) return 0.0;
  long long s = 0;
  for (long long d : deltas) s += d;
  return static_cast<double>(s) / static_cast<double>(deltas.size());
}

TokenOffsets response_offset(const ctc::AlignmentPath& ref, const ctc::AlignmentPath& other,
                             const ctc::LabelSeq& target) {
  TokenOffsets r;
  const auto fr = ctc::token_start_frames(ref.labels);
  const auto fo = ctc::token_start_frames(other.labels);
  r.collapse_mismatch = ctc::collapse(ref.labels) != target || ctc::collapse(other.labels) != target;
  r.matched = std::min(fr.size(), fo.size());
  r.deltas.reserve(r.matched);
  for (std::size_t i = 0; i < r.matched; ++i) {
    r.deltas.push_back(static_cast<long long>(fo[i]) - static_cast<long long>(fr[i]));
  }
  return r;
}

void OffsetAccumulator::add(double snr_db, const TokenOffsets& v_to_av, const TokenOffsets& a_to_av,
                            const std::vector<bool>& correct) {
  Cell& c = by_snr[snr_db];
  ++c.utterances;
  if (v_to_av.collapse_mismatch || a_to_av.collapse_mismatch || v_to_av.matched != a_to_av.matched) {
    ++c.excluded;
    return;
  }
  for (std::size_t i = 0; i < v_to_av.matched; ++i) {
    const long long dv = v_to_av.deltas[i], da = a_to_av.deltas[i];
    c.sum_v += dv;
    c.sum_a += da;
    c.abs_v += std::llabs(dv);
    c.abs_a += std::llabs(da);
    ++c.tokens;
    if (i < correct.size() && correct[i]) {
      c.sum_v_correct += dv;
      c.sum_a_correct += da;
      ++c.tokens_correct;
    }
  }
}

OffsetReport summarize(const OffsetAccumulator& acc) {
  OffsetReport rep;
  long long sv = 0, sa = 0, av = 0, aa = 0;
  for (const auto& [snr, c] : acc.by_snr) {
    OffsetReport::Row row;
    row.snr_db = snr;
    row.mean_v_to_av = safe_div(c.sum_v, c.tokens);
    row.mean_a_to_av = safe_div(c.sum_a, c.tokens);
    row.mean_abs_v_to_av = safe_div(c.abs_v, c.tokens);
    row.mean_abs_a_to_av = safe_div(c.abs_a, c.tokens);
    row.mean_v_to_av_correct = safe_div(c.sum_v_correct, c.tokens_correct);
    row.mean_a_to_av_correct = safe_div(c.sum_a_correct, c.tokens_correct);
    row.tokens = c.tokens;
    row.tokens_correct = c.tokens_correct;
    row.utterances = c.utterances;
    row.excluded = c.excluded;
    rep.per_snr.push_back(row);
    sv += c.sum_v, sa += c.sum_a, av += c.abs_v, aa += c.abs_a;
    rep.token_count += c.tokens;
    rep.utterance_count += c.utterances;
    rep.excluded_count += c.excluded;
  }
  rep.mean_offset_v_to_av = safe_div(sv, rep.token_count);
  rep.mean_offset_a_to_av = safe_div(sa, rep.token_count);
  rep.mean_abs_offset_v_to_av = safe_div(av, rep.token_count);
  rep.mean_abs_offset_a_to_av = safe_div(aa, rep.token_count);
  return rep;
}

std::string format_snr(double snr_db) {
  if (std::isinf(snr_db)) return snr_db > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << snr_db;
  return os.str();
}

ReportFiles emit_report(const std::vector<RunSummary>& runs, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "curves");
  ReportFiles files;
  files.wer_table = dir / "wer_table.txt";
  files.offset_table = dir / "offset_table.txt";
  files.manifest = dir / "curves.manifest";

  // Column set is the union of SNRs over present runs, ascending with inf last.
  std::set<double> snrs;
  for (const auto& r : runs) {
    if (!r.present) continue;
    for (const auto& [s, _] : r.wer_by_snr) snrs.insert(s);
    if (r.offsets) {
      for (const auto& row : r.offsets->per_snr) snrs.insert(row.snr_db);
    }
  }

  {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> head{"run"};
    for (double s : snrs) head.push_back(format_snr(s) + "dB");
    rows.push_back(head);
    for (const auto& r : runs) {
      std::vector<std::string> row{r.name};
      if (!r.present) {
        row.push_back("(absent)");
      } else {
        for (double s : snrs) {
          auto it = r.wer_by_snr.find(s);
          row.push_back(it == r.wer_by_snr.end() ? "-" : fmt(it->second, 2));
        }
      }
      rows.push_back(row);
    }
    std::ofstream f;
    open_or_throw(f, files.wer_table);
    f << "# WER (%) by audio SNR\n";
    write_table(f, rows);
  }

  {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> head{"run", "offset"};
    for (double s : snrs) head.push_back(format_snr(s) + "dB");
    head.push_back("all");
    rows.push_back(head);
    for (const auto& r : runs) {
      if (!r.present || !r.offsets) {
        rows.push_back({r.name, r.present ? "(no offsets)" : "(absent)"});
        continue;
      }
      for (int which = 0; which < 2; ++which) {
        std::vector<std::string> row{r.name, which == 0 ? "V->AV" : "A->AV"};
        for (double s : snrs) {
          auto it = std::find_if(r.offsets->per_snr.begin(), r.offsets->per_snr.end(),
                                 [&](const OffsetReport::Row& x) { return x.snr_db == s; });
          if (it == r.offsets->per_snr.end() || it->tokens == 0) {
            row.push_back("-");
          } else {
            row.push_back(fmt(which == 0 ? it->mean_v_to_av : it->mean_a_to_av, 3));
          }
        }
        row.push_back(fmt(which == 0 ? r.offsets->mean_offset_v_to_av : r.offsets->mean_offset_a_to_av, 3));
        rows.push_back(row);
      }
    }
    std::ofstream f;
    open_or_throw(f, files.offset_table);
    f << "# mean response offset (frames) against the AV alignment, all tokens\n";
    write_table(f, rows);
  }

  std::ofstream manifest;
  open_or_throw(manifest, files.manifest);
  manifest << "# file\trun\tx\ty\n";
  auto curve = [&](const std::string& run, const std::string& metric, const std::string& ylabel,
                   const std::vector<std::pair<double, double>>& pts) {
    const fs::path p = dir / "curves" / (sanitize(run) + "." + metric + ".dat");
    std::ofstream f;
    open_or_throw(f, p);
    f << "# snr_db\t" << ylabel << '\n';
    for (const auto& [x, y] : pts) f << format_snr(x) << '\t' << std::setprecision(10) << y << '\n';
    files.curves.push_back(p);
    manifest << fs::relative(p, dir).string() << '\t' << run << "\tsnr_db\t" << ylabel << '\n';
  };
  for (const auto& r : runs) {
    if (!r.present) {
      manifest << "# absent: " << r.name << '\n';
      continue;
    }
    std::vector<std::pair<double, double>> w(r.wer_by_snr.begin(), r.wer_by_snr.end());
    curve(r.name, "wer", "wer_percent", w);
    if (r.offsets) {
      std::vector<std::pair<double, double>> v, a;
      for (const auto& row : r.offsets->per_snr) {
        if (row.tokens == 0) continue;
        v.emplace_back(row.snr_db, row.mean_v_to_av);
        a.emplace_back(row.snr_db, row.mean_a_to_av);
      }
      curve(r.name, "offset_v", "offset_v_to_av_frames", v);
      curve(r.name, "offset_a", "offset_a_to_av_frames", a);
    }
  }
  return files;
}

}  // namespace avsr::metrics
