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

#include "avsr/numcore/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "avsr/errors.hpp"

namespace avsr {

namespace {
thread_local bool g_grad_enabled = true;

void check_finite(std::span<const double> values, const char* where) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << where << ": non-finite value at flat index " << i;
      throw NumericError(os.str());
    }
  }
}
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  check_finite(values, "tensor");
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor(Shape{rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("tensor: use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("tensor: rows() needs rank 2, shape " + shape_str(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("tensor: cols() needs rank 2, shape " + shape_str(shape()));
  return node_->shape[1];
}

std::span<const double> Tensor::values() const {
  shape();
  return node_->value;
}

std::span<double> Tensor::values_mut() {
  shape();
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("tensor: item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t i) const { return values()[i]; }

double Tensor::at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  shape();
  if (!node_->parents.empty()) throw ContractError("tensor: requires_grad is settable on leaves only");
  node_->requires_grad = on;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor: grad requested but none populated");
  return node_->grad;
}

std::span<double> Tensor::grad_mut() {
  shape();
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor make_op_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                      const char* op, std::function<void(detail::Node&)> backward_fn) {
  check_finite(value, op);
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const auto& t : inputs) node->parents.push_back(t.node_ptr());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  detail::Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn) {
      n->backward_fn(*n);
      check_finite(n->grad, n->op);
    }
  }
  // Interior grads are scratch; only leaves keep theirs.
  for (auto* n : order) {
    if (n->backward_fn) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

}  // namespace avsr
