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

#include "avsr/numcore/params.hpp"

#include <algorithm>
#include <cmath>

#include "avsr/errors.hpp"

namespace avsr {

Tensor ParamStore::add_glorot(const std::string& name, Shape shape, Rng& rng) {
  if (shape.size() < 2) throw ContractError("glorot init needs rank >= 2 for " + name);
  std::size_t fan_in = shape[shape.size() - 2];
  const std::size_t fan_out = shape.back();
  if (shape.size() == 3) fan_in *= shape[0];
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return add(name, Tensor(std::move(shape), std::move(v), true));
}

Tensor ParamStore::add_zeros(const std::string& name, Shape shape) {
  return add(name, Tensor::zeros(std::move(shape), true));
}

Tensor ParamStore::add_constant(const std::string& name, Shape shape, double value) {
  return add(name, Tensor::full(std::move(shape), value, true));
}

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (contains(name)) throw ContractError("duplicate parameter name: " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(name, t);
  return t;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].second;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [_, t] : entries_) out.push_back(t);
  return out;
}

std::vector<Tensor> ParamStore::with_prefix(const std::string& prefix) const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : entries_)
    if (name.rfind(prefix, 0) == 0) out.push_back(t);
  return out;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

void ParamStore::set_trainable(const std::string& prefix, bool on) {
  for (auto& [name, t] : entries_)
    if (name.rfind(prefix, 0) == 0) t.set_requires_grad(on);
}

std::size_t ParamStore::copy_from(const ParamStore& other, const std::string& src_prefix,
                                  const std::string& dst_prefix) {
  std::size_t copied = 0;
  for (auto& [name, t] : entries_) {
    if (name.rfind(dst_prefix, 0) != 0) continue;
    const std::string src = src_prefix + name.substr(dst_prefix.size());
    if (!other.contains(src)) continue;
    const Tensor& o = other.get(src);
    if (o.shape() != t.shape()) {
      throw DimensionError("copy_from: " + src + " has shape " + shape_str(o.shape()) + ", expected " +
                           shape_str(t.shape()));
    }
    std::copy(o.values().begin(), o.values().end(), t.values_mut().begin());
    ++copied;
  }
  return copied;
}

}  // namespace avsr
