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

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "avsr/numcore/random.hpp"
#include "avsr/numcore/tensor.hpp"

namespace avsr {

/// Named, ordered collection of trainable leaves.
class ParamStore {
 public:
  /// Glorot-uniform over (fan_in, fan_out) taken from the last two extents;
  /// rank-3 conv weights use K*Cin as fan_in.
  Tensor add_glorot(const std::string& name, Shape shape, Rng& rng);
  Tensor add_zeros(const std::string& name, Shape shape);
  Tensor add_constant(const std::string& name, Shape shape, double value);
  Tensor add(const std::string& name, Tensor t);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  /// Tensors whose names start with `prefix`.
  std::vector<Tensor> with_prefix(const std::string& prefix) const;
  std::size_t parameter_count() const;

  void zero_grad();
  void set_trainable(const std::string& prefix, bool on);

  /// Copies values for every name present in both stores (shapes must match).
  std::size_t copy_from(const ParamStore& other, const std::string& src_prefix = "",
                        const std::string& dst_prefix = "");

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace avsr
