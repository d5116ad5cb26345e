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
#include <cstdint>
#include <memory>
#include <vector>

#include "avsr/numcore/tensor.hpp"

namespace avsr {

/// Row-major boolean mask, 1 = position may be used.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  bool operator()(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

// All primitives take 2-D operands as [rows, cols] unless stated otherwise.

Tensor matmul(const Tensor& a, const Tensor& b);
/// a · bᵀ for a [M,K] and b [N,K].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Elementwise sum. `b` may equal a's shape, be a 1-D row vector matching
/// a's last extent (broadcast over rows), or be a scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

/// Row-wise over the last axis.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
/// Row-wise softmax restricted to allowed entries; masked outputs are exactly 0
/// and masked inputs never influence the result.
Tensor masked_softmax(const Tensor& a, std::shared_ptr<const Mask> mask);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Full 1-D convolution over rows: x [T,Cin], w [K,Cin,Cout]; output row t reads
/// input rows t-pad_left .. t-pad_left+K-1 (zeros outside).
Tensor conv1d(const Tensor& x, const Tensor& w, std::size_t pad_left, std::size_t pad_right);
/// Per-channel 1-D convolution: x [T,C], w [K,C].
Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, std::size_t pad_left,
                        std::size_t pad_right);

/// Rows of `table` [N,D] selected by `ids`.
Tensor embed(const Tensor& table, const std::vector<std::size_t>& ids);
/// axis 0 stacks rows, axis 1 stacks columns.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// out[t] = x[t, ids[t]].
Tensor pick(const Tensor& x, const std::vector<std::size_t>& ids);

}  // namespace avsr
