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

#include "model_io.hpp"

#include <sstream>

#include "avsr/errors.hpp"

namespace avsr::cli {

std::string model_kind(const fusion::AvModel&) { return "av"; }
std::string model_kind(const fusion::SingleStreamModel& m) {
  return m.stream() == encoder::Stream::kAudio ? "a" : "v";
}

std::string commented(const std::string& text) {
  std::istringstream is(text);
  std::string out;
  for (std::string line; std::getline(is, line);) out += "# " + line + "\n";
  return out;
}

void save_model(const std::filesystem::path& path, const std::string& kind, const fusion::ModelConfig& cfg,
                const ParamStore& params, std::uint64_t seed, const std::string& run_config) {
  Checkpoint ck;
  ck.seed = seed;
  KeyValues kv = cfg.to_kv();
  kv.set("kind", kind);
  ck.config = kv.format() + commented(run_config);
  ck.params = params;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  save_checkpoint(path, ck);
}

LoadedModel load_model(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  LoadedModel m;
  m.ckpt = load_checkpoint(path);
  const KeyValues kv = KeyValues::parse(m.ckpt.config);
  m.kind = kv.get_string("kind", "");
  if (m.kind != "av" && m.kind != "a" && m.kind != "v") {
    throw DataError("checkpoint " + path.string() + " does not name a model kind");
  }
  m.config = fusion::ModelConfig::from_kv(kv);
  m.seed = m.ckpt.seed;
  return m;
}

std::unique_ptr<fusion::AvModel> restore_av(const LoadedModel& m, const fusion::ModelConfig& cfg) {
  if (m.kind != "av") throw DataError("expected an audio-visual checkpoint, got kind '" + m.kind + "'");
  auto model = std::make_unique<fusion::AvModel>(cfg, m.seed);
  restore_params(model->params(), m.ckpt.params);
  return model;
}

std::unique_ptr<fusion::SingleStreamModel> restore_single(const LoadedModel& m, const fusion::ModelConfig& cfg) {
  if (m.kind != "a" && m.kind != "v") {
    throw DataError("expected a single-stream checkpoint, got kind '" + m.kind + "'");
  }
  const auto stream = m.kind == "a" ? encoder::Stream::kAudio : encoder::Stream::kVisual;
  auto model = std::make_unique<fusion::SingleStreamModel>(cfg, stream, m.seed);
  restore_params(model->params(), m.ckpt.params);
  return model;
}

synthdata::Corpus load_corpus_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "genspec.cfg")) throw DataError("no corpus at " + dir.string());
  const auto spec = synthdata::GenSpec::from_kv(KeyValues::load(dir / "genspec.cfg"), "", synthdata::GenSpec{});
  return synthdata::load_corpus(dir, ctc::Vocab::letters(spec.labels));
}

}  // namespace avsr::cli
