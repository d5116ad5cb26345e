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

#include <cstddef>
#include <span>
#include <vector>

#include "avsr/numcore/tensor.hpp"

namespace avsr {

/// Linear warmup to the peak rate, then cosine annealing to zero at
/// `total_steps`. warmup_steps = total_steps = 0 gives a constant rate.
class WarmupCosine {
 public:
  WarmupCosine() = default;
  WarmupCosine(std::size_t warmup_steps, std::size_t total_steps)
      : warmup_(warmup_steps), total_(total_steps) {}

  double rate_at(double peak, std::size_t step) const;
  double current(double peak) const { return rate_at(peak, step_); }
  std::size_t step() const { return step_; }
  void advance() { ++step_; }

 private:
  std::size_t warmup_ = 0;
  std::size_t total_ = 0;
  std::size_t step_ = 0;
};

/// p <- p - lr*g - lr*decay*p, with lr taken from the schedule at its current
/// step; the schedule then advances. Leaves without grads are an error unless
/// they are frozen (requires_grad false), which are skipped.
void sgd_step(std::span<Tensor> params, double peak_lr, WarmupCosine& schedule,
              double weight_decay = 0.0);

/// Decoupled-weight-decay Adam sharing the same schedule type.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, double peak_lr, WarmupCosine schedule, double weight_decay = 0.0,
        double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9);

  /// Applies one update. Params that received no grad this step are left
  /// untouched. Returns the pre-clip global grad norm.
  double step(double clip_norm = 0.0);
  const WarmupCosine& schedule() const { return schedule_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double peak_lr_, weight_decay_, beta1_, beta2_, eps_;
  WarmupCosine schedule_;
  std::size_t t_ = 0;
};

}  // namespace avsr
