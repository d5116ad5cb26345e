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

#include "avsr/numcore/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "avsr/errors.hpp"

namespace avsr {

double WarmupCosine::rate_at(double peak, std::size_t step) const {
  if (step < warmup_) {
    return peak * static_cast<double>(step + 1) / static_cast<double>(warmup_);
  }
  if (total_ <= warmup_) return peak;
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup_) / static_cast<double>(total_ - warmup_));
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void sgd_step(std::span<Tensor> params, double peak_lr, WarmupCosine& schedule, double weight_decay) {
  for (const auto& p : params) {
    if (p.requires_grad() && !p.has_grad()) {
      throw ContractError("sgd_step: trainable parameter has no populated grad");
    }
  }
  const double lr = schedule.current(peak_lr);
  for (auto& p : params) {
    if (!p.requires_grad()) continue;
    auto v = p.values_mut();
    auto g = p.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = v[i] - lr * g[i] - lr * weight_decay * v[i];
  }
  schedule.advance();
}

AdamW::AdamW(std::vector<Tensor> params, double peak_lr, WarmupCosine schedule, double weight_decay,
             double beta1, double beta2, double eps)
    : params_(std::move(params)),
      peak_lr_(peak_lr),
      weight_decay_(weight_decay),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      schedule_(schedule) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

double AdamW::step(double clip_norm) {
  double sq = 0.0;
  for (const auto& p : params_)
    if (p.requires_grad() && p.has_grad())
      for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  const double clip = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;

  ++t_;
  const double lr = schedule_.current(peak_lr_);
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto v = p.values_mut();
    auto g = p.grad();
    auto& m1 = m_[k];
    auto& m2 = v_[k];
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double gi = g[i] * clip;
      m1[i] = beta1_ * m1[i] + (1.0 - beta1_) * gi;
      m2[i] = beta2_ * m2[i] + (1.0 - beta2_) * gi * gi;
      const double update = (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + eps_);
      v[i] = v[i] - lr * weight_decay_ * v[i] - lr * update;
    }
  }
  schedule_.advance();
  return norm;
}

}  // namespace avsr
