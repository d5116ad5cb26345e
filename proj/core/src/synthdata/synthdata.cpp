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

#include "avsr/synthdata/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "avsr/errors.hpp"
#include "json.hpp"

namespace avsr::synthdata {

namespace {

std::size_t labels_for(double rate, std::size_t frames) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(rate * static_cast<double>(frames))));
}

// Onsets live in [1, T - 2 - max_lag] so both kernels stay inside the utterance.
std::size_t onset_slots(const GenSpec& s, std::size_t frames) {
  const std::size_t reserved = 2 + s.max_lag_v;
  return frames > reserved ? frames - reserved : 0;
}

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

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    if (item == "inf" || item == "+inf") {
      out.push_back(kCleanSnr);
      continue;
    }
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ContractError("snr list entry '" + item + "' is not a number");
    out.push_back(v);
  }
  return out;
}

std::vector<std::pair<ctc::Label, ctc::Label>> pair_up(std::vector<ctc::Label> order, std::size_t count) {
  std::vector<std::pair<ctc::Label, ctc::Label>> pairs;
  for (std::size_t i = 0; i < count; ++i) pairs.emplace_back(order[2 * i], order[2 * i + 1]);
  return pairs;
}

void shuffle(std::vector<ctc::Label>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}

std::vector<double> unit_vector(std::size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  double n = 0;
  for (auto& x : v) {
    x = rng.normal();
    n += x * x;
  }
  // Scale to norm sqrt(dim): unit power per feature.
  const double k = std::sqrt(static_cast<double>(dim) / n);
  for (auto& x : v) x *= k;
  return v;
}

void render(std::vector<double>& out, std::size_t frames, std::size_t dim, double centre, double sigma,
            const std::vector<double>& proto) {
  const double reach = std::ceil(3.0 * sigma);
  const auto lo = static_cast<std::ptrdiff_t>(std::max(0.0, std::floor(centre - reach)));
  const auto hi = static_cast<std::ptrdiff_t>(std::min(static_cast<double>(frames) - 1, std::ceil(centre + reach)));
  for (std::ptrdiff_t t = lo; t <= hi; ++t) {
    const double d = static_cast<double>(t) - centre;
    const double g = std::exp(-d * d / (2 * sigma * sigma));
    for (std::size_t f = 0; f < dim; ++f) out[static_cast<std::size_t>(t) * dim + f] += g * proto[f];
  }
}

std::vector<double> gaussian(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

void GenSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ContractError("generator field '" + field + "': " + why);
  };
  if (labels < 2) fail("labels", "need at least 2 labels");
  if (min_frames == 0 || min_frames > max_frames) fail("min_frames", "need 0 < min_frames <= max_frames");
  if (!(min_label_rate > 0) || min_label_rate > max_label_rate) fail("min_label_rate", "need 0 < min <= max");
  if (audio_dim == 0) fail("audio_dim", "must be positive");
  if (visual_dim == 0) fail("visual_dim", "must be positive");
  if (!(audio_kernel_sigma > 0)) fail("audio_kernel_sigma", "must be positive");
  if (!(visual_kernel_sigma > 0)) fail("visual_kernel_sigma", "must be positive");
  if (confusable_fraction_a < 0 || confusable_fraction_a > 1) fail("confusable_fraction_a", "must lie in [0,1]");
  if (confusable_fraction_v < 0 || confusable_fraction_v > 1) fail("confusable_fraction_v", "must lie in [0,1]");
  if (!(frame_ms > 0)) fail("frame_ms", "must be positive");
  // Every onset needs two frames of its own so repeats stay separable.
  for (std::size_t T = min_frames; T <= max_frames; ++T) {
    const std::size_t L = labels_for(max_label_rate, T);
    if (2 * L - 1 > onset_slots(*this, T)) {
      throw InfeasibleTargetError("generator: " + std::to_string(L) + " labels do not fit in " + std::to_string(T) +
                                  " frames with lag " + std::to_string(max_lag_v));
    }
  }
}

KeyValues GenSpec::to_kv(const std::string& p) const {
  KeyValues kv;
  kv.set(p + "labels", static_cast<long long>(labels));
  kv.set(p + "min_frames", static_cast<long long>(min_frames));
  kv.set(p + "max_frames", static_cast<long long>(max_frames));
  kv.set(p + "min_label_rate", min_label_rate);
  kv.set(p + "max_label_rate", max_label_rate);
  kv.set(p + "audio_dim", static_cast<long long>(audio_dim));
  kv.set(p + "visual_dim", static_cast<long long>(visual_dim));
  kv.set(p + "audio_kernel_sigma", audio_kernel_sigma);
  kv.set(p + "visual_kernel_sigma", visual_kernel_sigma);
  kv.set(p + "max_lag_v", static_cast<long long>(max_lag_v));
  kv.set(p + "confusable_fraction_a", confusable_fraction_a);
  kv.set(p + "confusable_fraction_v", confusable_fraction_v);
  kv.set(p + "snr_db_choices", format_list(snr_db_choices));
  kv.set(p + "visual_snr_db", visual_snr_db);
  kv.set(p + "frame_ms", frame_ms);
  kv.set(p + "prototype_seed", std::to_string(prototype_seed));
  kv.set(p + "seed", std::to_string(seed));
  return kv;
}

GenSpec GenSpec::from_kv(const KeyValues& kv, const std::string& p, const GenSpec& d) {
  auto size = [&](const char* k, std::size_t fallback) {
    const long long v = kv.get_int(p + k, static_cast<long long>(fallback));
    if (v < 0) throw ContractError("generator field '" + p + k + "': must be non-negative");
    return static_cast<std::size_t>(v);
  };
  auto u64 = [&](const char* k, std::uint64_t fallback) {
    const std::string s = kv.get_string(p + k, std::to_string(fallback));
    try {
      return static_cast<std::uint64_t>(std::stoull(s));
    } catch (const std::exception&) {
      throw ContractError("generator field '" + p + k + "': '" + s + "' is not an unsigned integer");
    }
  };
  GenSpec g;
  g.labels = size("labels", d.labels);
  g.min_frames = size("min_frames", d.min_frames);
  g.max_frames = size("max_frames", d.max_frames);
  g.min_label_rate = kv.get_double(p + "min_label_rate", d.min_label_rate);
  g.max_label_rate = kv.get_double(p + "max_label_rate", d.max_label_rate);
  g.audio_dim = size("audio_dim", d.audio_dim);
  g.visual_dim = size("visual_dim", d.visual_dim);
  g.audio_kernel_sigma = kv.get_double(p + "audio_kernel_sigma", d.audio_kernel_sigma);
  g.visual_kernel_sigma = kv.get_double(p + "visual_kernel_sigma", d.visual_kernel_sigma);
  g.max_lag_v = size("max_lag_v", d.max_lag_v);
  g.confusable_fraction_a = kv.get_double(p + "confusable_fraction_a", d.confusable_fraction_a);
  g.confusable_fraction_v = kv.get_double(p + "confusable_fraction_v", d.confusable_fraction_v);
  g.snr_db_choices = kv.has(p + "snr_db_choices") ? parse_list(kv.get_string(p + "snr_db_choices", ""))
                                                   : d.snr_db_choices;
  g.visual_snr_db = kv.get_double(p + "visual_snr_db", d.visual_snr_db);
  g.frame_ms = kv.get_double(p + "frame_ms", d.frame_ms);
  g.prototype_seed = u64("prototype_seed", d.prototype_seed);
  g.seed = u64("seed", d.seed);
  g.validate();
  return g;
}

Prototypes make_prototypes(const GenSpec& spec) {
  Rng rng(derive_seed(spec.prototype_seed, 0x70726f746fULL));
  Prototypes p;
  p.audio.assign(spec.labels + 1, {});
  p.visual.assign(spec.labels + 1, {});
  for (std::size_t k = 1; k <= spec.labels; ++k) {
    p.audio[k] = unit_vector(spec.audio_dim, rng);
    p.visual[k] = unit_vector(spec.visual_dim, rng);
  }
  std::vector<ctc::Label> order(spec.labels);
  std::iota(order.begin(), order.end(), 1);
  const auto n_a = static_cast<std::size_t>(std::floor(spec.confusable_fraction_a * spec.labels / 2.0));
  const auto n_v = static_cast<std::size_t>(std::floor(spec.confusable_fraction_v * spec.labels / 2.0));
  shuffle(order, rng);
  p.pairs_a = pair_up(order, n_a);
  auto shared = [&](const std::pair<ctc::Label, ctc::Label>& q) {
    for (const auto& a : p.pairs_a)
      if ((a.first == q.first && a.second == q.second) || (a.first == q.second && a.second == q.first)) return true;
    return false;
  };
  for (int attempt = 0;; ++attempt) {
    if (attempt == 10000) throw InfeasibleTargetError("generator: cannot draw visual pairs disjoint from audio pairs");
    shuffle(order, rng);
    p.pairs_v = pair_up(order, n_v);
    if (std::none_of(p.pairs_v.begin(), p.pairs_v.end(), shared)) break;
  }
  for (const auto& [x, y] : p.pairs_a) p.audio[y] = p.audio[x];
  for (const auto& [x, y] : p.pairs_v) p.visual[y] = p.visual[x];
  return p;
}

Utterance generate_one(const GenSpec& spec, const Prototypes& protos, std::size_t index) {
  Rng rng(derive_seed(spec.seed, index));
  Utterance u;
  u.id = "utt" + std::to_string(index);
  const auto T = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(spec.min_frames),
                                                      static_cast<std::int64_t>(spec.max_frames)));
  const std::size_t L = labels_for(rng.uniform(spec.min_label_rate, spec.max_label_rate), T);
  const std::size_t slots = onset_slots(spec, T);
  if (2 * L - 1 > slots) throw InfeasibleTargetError("generator: labels do not fit in " + std::to_string(T) + " frames");
  // L positions with gaps of at least two: pick L of (slots - L + 1), then spread.
  std::vector<std::size_t> pool(slots - L + 1);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < L; ++i) std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
  std::vector<std::size_t> picks(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(L));
  std::sort(picks.begin(), picks.end());
  for (std::size_t i = 0; i < L; ++i) u.event_frames.push_back(1 + picks[i] + i);
  for (std::size_t i = 0; i < L; ++i) u.target.push_back(1 + rng.index(spec.labels));
  u.lag_v = rng.index(spec.max_lag_v + 1);

  std::vector<double> a(T * spec.audio_dim, 0.0), v(T * spec.visual_dim, 0.0);
  for (std::size_t i = 0; i < L; ++i) {
    const double e = static_cast<double>(u.event_frames[i]);
    render(a, T, spec.audio_dim, e, spec.audio_kernel_sigma, protos.audio[u.target[i]]);
    render(v, T, spec.visual_dim, e + static_cast<double>(u.lag_v), spec.visual_kernel_sigma,
           protos.visual[u.target[i]]);
  }
  const auto noise_a = gaussian(a.size(), rng);
  const auto noise_v = gaussian(v.size(), rng);
  u.snr_db = spec.snr_db_choices.empty() ? kCleanSnr : spec.snr_db_choices[rng.index(spec.snr_db_choices.size())];
  u.clean_a = Tensor({T, spec.audio_dim}, a);
  u.noise_a = Tensor({T, spec.audio_dim}, noise_a);
  u.stream_a = Tensor({T, spec.audio_dim}, mix_at_snr(a, noise_a, u.snr_db));
  u.stream_v = Tensor({T, spec.visual_dim}, mix_at_snr(v, noise_v, spec.visual_snr_db));
  return u;
}

Corpus generate(const GenSpec& spec, std::size_t n) {
  spec.validate();
  const auto protos = make_prototypes(spec);
  Corpus c{spec, {}};
  c.utterances.reserve(n);
  for (std::size_t i = 0; i < n; ++i) c.utterances.push_back(generate_one(spec, protos, i));
  return c;
}

Utterance with_snr(const Utterance& u, double snr_db) {
  Utterance out = u;
  out.snr_db = snr_db;
  out.stream_a = Tensor(u.clean_a.shape(), mix_at_snr(to_vec(u.clean_a), to_vec(u.noise_a), snr_db));
  return out;
}

double signal_power(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double s = 0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

std::vector<double> mix_at_snr(const std::vector<double>& clean, const std::vector<double>& noise, double snr_db) {
  if (clean.size() != noise.size()) {
    throw DimensionError("mix_at_snr: clean has " + std::to_string(clean.size()) + " samples, noise " +
                         std::to_string(noise.size()));
  }
  if (std::isinf(snr_db) && snr_db > 0) return clean;
  const double pc = signal_power(clean), pn = signal_power(noise);
  if (!(pc > 0)) throw ContractError("mix_at_snr: clean signal has zero power");
  if (!(pn > 0)) throw ContractError("mix_at_snr: noise signal has zero power");
  if (!std::isfinite(snr_db)) throw ContractError("mix_at_snr: snr must be finite or +inf");
  const double scale = std::sqrt(pc / (pn * std::pow(10.0, snr_db / 10.0)));
  std::vector<double> out(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) out[i] = clean[i] + scale * noise[i];
  return out;
}

double measured_snr_db(const std::vector<double>& clean, const std::vector<double>& mixed) {
  std::vector<double> n(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) n[i] = mixed[i] - clean[i];
  return 10.0 * std::log10(signal_power(clean) / signal_power(n));
}

Tensor time_mask(const Tensor& features, double frame_ms, double rate_per_s, double max_ms, Rng& rng,
                 std::vector<MaskSpan>* spans) {
  const std::size_t T = features.rows(), F = features.cols();
  std::vector<double> out(features.values().begin(), features.values().end());
  const auto max_w = static_cast<std::size_t>(std::floor(max_ms / frame_ms + 1e-9));
  if (max_w == 0 || rate_per_s <= 0 || T == 0) return Tensor(features.shape(), std::move(out));
  const double expected = static_cast<double>(T) * frame_ms / 1000.0 * rate_per_s;
  auto count = static_cast<std::size_t>(std::floor(expected + 1e-9));
  const double frac = expected - static_cast<double>(count);
  if (frac > 1e-9 && rng.uniform() < frac) ++count;
  for (std::size_t m = 0; m < count; ++m) {
    const std::size_t w = std::min(rng.index(max_w + 1), T);
    const std::size_t b = rng.index(T - w + 1);
    for (std::size_t t = b; t < b + w; ++t)
      for (std::size_t f = 0; f < F; ++f) out[t * F + f] = 0.0;
    if (spans) spans->push_back({b, b + w});
  }
  return Tensor(features.shape(), std::move(out));
}

namespace {

constexpr char kFeatMagic[8] = {'A', 'V', 'S', 'R', 'F', 'E', 'A', 'T'};

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "feature files assume a little-endian host");
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("feature file " + path.string() + " is truncated");
  return v;
}

}  // namespace

void write_features(const std::filesystem::path& path, const Tensor& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write feature file " + path.string());
  os.write(kFeatMagic, 8);
  put<std::uint32_t>(os, 1);
  put<std::uint64_t>(os, m.rows());
  put<std::uint64_t>(os, m.cols());
  os.write(reinterpret_cast<const char*>(m.values().data()), static_cast<std::streamsize>(m.numel() * sizeof(double)));
  if (!os) throw DataError("failed writing feature file " + path.string());
}

Tensor read_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open feature file " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kFeatMagic, 8) != 0) throw DataError(path.string() + " is not a feature file");
  if (get<std::uint32_t>(is, path) != 1) throw DataError(path.string() + ": unsupported feature file version");
  const auto rows = get<std::uint64_t>(is, path), cols = get<std::uint64_t>(is, path);
  if (rows == 0 || cols == 0 || rows * cols > (1ull << 28)) throw DataError(path.string() + ": implausible shape");
  std::vector<double> v(rows * cols);
  if (!is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)))) {
    throw DataError("feature file " + path.string() + " is truncated");
  }
  for (double x : v)
    if (!std::isfinite(x)) throw DataError(path.string() + " holds non-finite values");
  return Tensor({rows, cols}, std::move(v));
}

void save_corpus(const Corpus& corpus, const ctc::Vocab& vocab, const std::filesystem::path& dir,
                 const std::string& provenance) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");
  {
    std::ofstream cfg(dir / "genspec.cfg");
    if (!provenance.empty()) cfg << provenance;
    cfg << corpus.spec.to_kv().format();
    if (!cfg) throw DataError("cannot write " + (dir / "genspec.cfg").string());
  }
  std::ofstream man(dir / "manifest.jsonl");
  if (!man) throw DataError("cannot write " + (dir / "manifest.jsonl").string());
  for (const auto& u : corpus.utterances) {
    const std::string base = "features/" + u.id;
    write_features(dir / (base + ".a.bin"), u.stream_a);
    write_features(dir / (base + ".v.bin"), u.stream_v);
    write_features(dir / (base + ".clean.bin"), u.clean_a);
    write_features(dir / (base + ".noise.bin"), u.noise_a);
    nlohmann::json j;
    j["id"] = u.id;
    j["text"] = vocab.decode(u.target);
    j["audio"] = base + ".a.bin";
    j["visual"] = base + ".v.bin";
    j["audio_clean"] = base + ".clean.bin";
    j["audio_noise"] = base + ".noise.bin";
    j["frames"] = u.frames();
    j["lag_v"] = u.lag_v;
    if (std::isinf(u.snr_db))
      j["snr_db"] = "inf";
    else
      j["snr_db"] = u.snr_db;
    j["events"] = u.event_frames;
    man << j.dump() << '\n';
  }
}

Corpus load_corpus(const std::filesystem::path& dir, const ctc::Vocab& vocab) {
  Corpus c;
  c.spec = GenSpec::from_kv(KeyValues::load(dir / "genspec.cfg"), "", GenSpec{});
  std::ifstream man(dir / "manifest.jsonl");
  if (!man) throw DataError("missing corpus manifest " + (dir / "manifest.jsonl").string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(man, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Utterance u;
      u.id = j.at("id").get<std::string>();
      u.target = vocab.encode(j.at("text").get<std::string>());
      u.stream_a = read_features(dir / j.at("audio").get<std::string>());
      u.stream_v = read_features(dir / j.at("visual").get<std::string>());
      u.clean_a = read_features(dir / j.at("audio_clean").get<std::string>());
      u.noise_a = read_features(dir / j.at("audio_noise").get<std::string>());
      u.lag_v = j.at("lag_v").get<std::size_t>();
      const auto& s = j.at("snr_db");
      u.snr_db = s.is_string() ? kCleanSnr : s.get<double>();
      if (j.contains("events")) u.event_frames = j.at("events").get<std::vector<std::size_t>>();
      if (u.stream_a.rows() != u.stream_v.rows() || u.stream_a.rows() != j.at("frames").get<std::size_t>()) {
        throw DataError("stream lengths disagree");
      }
      if (!ctc::feasible(u.target, u.frames())) throw DataError("target does not fit its frames");
      c.utterances.push_back(std::move(u));
    } catch (const DataError& e) {
      throw DataError("manifest line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception& e) {
      throw DataError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

}  // namespace avsr::synthdata
