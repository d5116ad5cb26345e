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

#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "avsr/ctc/ctc.hpp"

namespace avsr::testing {

/// Visits every frame-level path over `width` symbols of length T.
template <typename F>
void for_each_path(std::size_t T, std::size_t width, F&& visit) {
  std::vector<ctc::Label> path(T, 0);
  while (true) {
    visit(path);
    std::size_t i = 0;
    while (i < T && ++path[i] == width) path[i++] = 0;
    if (i == T) break;
  }
}

inline double path_log_prob(const std::vector<double>& lp, std::size_t width,
                            const std::vector<ctc::Label>& path) {
  double s = 0.0;
  for (std::size_t t = 0; t < path.size(); ++t) s += lp[t * width + path[t]];
  return s;
}

inline std::vector<ctc::Label> oracle_collapse(const std::vector<ctc::Label>& path) {
  std::vector<ctc::Label> out;
  for (std::size_t t = 0; t < path.size(); ++t) {
    if (path[t] == 0) continue;
    if (t > 0 && path[t] == path[t - 1]) continue;
    out.push_back(path[t]);
  }
  return out;
}

/// log Σ over enumerated paths collapsing to target (−inf when none).
inline double brute_force_log_likelihood(const std::vector<double>& lp, std::size_t T, std::size_t width,
                                         const std::vector<ctc::Label>& target) {
  double total = 0.0;
  bool any = false;
  for_each_path(T, width, [&](const std::vector<ctc::Label>& path) {
    if (oracle_collapse(path) == target) {
      total += std::exp(path_log_prob(lp, width, path));
      any = true;
    }
  });
  return any ? std::log(total) : -std::numeric_limits<double>::infinity();
}

/// Highest log-probability over enumerated paths collapsing to target.
inline double brute_force_best_path(const std::vector<double>& lp, std::size_t T, std::size_t width,
                                    const std::vector<ctc::Label>& target) {
  double best = -std::numeric_limits<double>::infinity();
  for_each_path(T, width, [&](const std::vector<ctc::Label>& path) {
    if (oracle_collapse(path) == target) best = std::max(best, path_log_prob(lp, width, path));
  });
  return best;
}

/// Posterior of every collapsed label sequence.
inline std::map<std::vector<ctc::Label>, double> brute_force_sequence_probs(const std::vector<double>& lp,
                                                                            std::size_t T, std::size_t width) {
  std::map<std::vector<ctc::Label>, double> out;
  for_each_path(T, width, [&](const std::vector<ctc::Label>& path) {
    out[oracle_collapse(path)] += std::exp(path_log_prob(lp, width, path));
  });
  return out;
}

}  // namespace avsr::testing
