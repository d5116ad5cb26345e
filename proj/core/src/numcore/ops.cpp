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

#include "avsr/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "avsr/errors.hpp"

namespace avsr {

namespace {

using detail::Node;

[[noreturn]] void dim_error(const char* op, const std::string& what) {
  throw DimensionError(std::string(op) + ": " + what);
}

void need_rank2(const char* op, const Tensor& t, const char* name) {
  if (t.rank() != 2) dim_error(op, std::string(name) + " must be rank 2, got " + shape_str(t.shape()));
}

// Parent accessor that yields a grad buffer only when the parent wants one.
double* grad_of(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

const double* value_of(const Node& self, std::size_t i) { return self.parents[i]->value.data(); }

// Rows/cols view of the last axis, treating 1-D as a single row.
std::pair<std::size_t, std::size_t> row_view(const Tensor& t) {
  if (t.rank() == 0) return {1, 1};
  const auto c = t.shape().back();
  return {c == 0 ? 0 : t.numel() / c, c};
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  need_rank2("matmul", a, "lhs");
  need_rank2("matmul", b, "rhs");
  const std::size_t M = a.rows(), K = a.cols(), N = b.cols();
  if (b.rows() != K) {
    dim_error("matmul", "inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(M * N, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < M; ++i) {
    double* c = &out[i * N];
    for (std::size_t k = 0; k < K; ++k) {
      const double av = A[i * K + k];
      const double* br = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * br[j];
    }
  }
  return make_op_result({M, N}, std::move(out), {a, b}, "matmul", [M, K, N](Node& self) {
    const double* G = self.grad.data();
    const double* A = value_of(self, 0);
    const double* B = value_of(self, 1);
    if (double* gA = grad_of(self, 0)) {
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          double s = 0.0;
          const double* br = B + k * N;
          const double* gr = G + i * N;
          for (std::size_t j = 0; j < N; ++j) s += gr[j] * br[j];
          gA[i * K + k] += s;
        }
    }
    if (double* gB = grad_of(self, 1)) {
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          const double av = A[i * K + k];
          const double* gr = G + i * N;
          double* gb = gB + k * N;
          for (std::size_t j = 0; j < N; ++j) gb[j] += av * gr[j];
        }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  need_rank2("matmul_nt", a, "lhs");
  need_rank2("matmul_nt", b, "rhs");
  const std::size_t M = a.rows(), K = a.cols(), N = b.rows();
  if (b.cols() != K) {
    dim_error("matmul_nt", "contracted extents differ: " + shape_str(a.shape()) + " x " +
                               shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(M * N, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += A[i * K + k] * B[j * K + k];
      out[i * N + j] = s;
    }
  return make_op_result({M, N}, std::move(out), {a, b}, "matmul_nt", [M, K, N](Node& self) {
    const double* G = self.grad.data();
    const double* A = value_of(self, 0);
    const double* B = value_of(self, 1);
    if (double* gA = grad_of(self, 0)) {
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
          const double g = G[i * N + j];
          if (g == 0.0) continue;
          for (std::size_t k = 0; k < K; ++k) gA[i * K + k] += g * B[j * K + k];
        }
    }
    if (double* gB = grad_of(self, 1)) {
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
          const double g = G[i * N + j];
          if (g == 0.0) continue;
          for (std::size_t k = 0; k < K; ++k) gB[j * K + k] += g * A[i * K + k];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  need_rank2("transpose", a, "operand");
  const std::size_t R = a.rows(), C = a.cols();
  std::vector<double> out(R * C);
  const double* A = a.values().data();
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[c * R + r] = A[r * C + c];
  return make_op_result({C, R}, std::move(out), {a}, "transpose", [R, C](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) g[r * C + c] += self.grad[c * R + r];
  });
}

namespace {

enum class Broadcast { kSame, kRow, kScalar };

Broadcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.numel() == 1 && b.rank() == 0) return Broadcast::kScalar;
  if (b.rank() == 1 && a.rank() >= 1 && b.dim(0) == a.shape().back()) return Broadcast::kRow;
  dim_error(op, "cannot broadcast " + shape_str(b.shape()) + " onto " + shape_str(a.shape()));
}

template <typename Fwd>
Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, double sign_b,
                          bool product) {
  const Broadcast kind = broadcast_kind(op, a, b);
  const std::size_t n = a.numel();
  const std::size_t width = kind == Broadcast::kRow ? b.numel() : 1;
  const double* A = a.values().data();
  const double* B = b.values().data();
  auto bidx = [kind, width](std::size_t i) {
    switch (kind) {
      case Broadcast::kSame: return i;
      case Broadcast::kRow: return i % width;
      default: return std::size_t{0};
    }
  };
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(A[i], B[bidx(i)]);
  return make_op_result(a.shape(), std::move(out), {a, b}, op,
                        [n, bidx, sign_b, product](Node& self) {
                          const double* G = self.grad.data();
                          const double* A = value_of(self, 0);
                          const double* B = value_of(self, 1);
                          if (double* gA = grad_of(self, 0))
                            for (std::size_t i = 0; i < n; ++i)
                              gA[i] += product ? G[i] * B[bidx(i)] : G[i];
                          if (double* gB = grad_of(self, 1))
                            for (std::size_t i = 0; i < n; ++i)
                              gB[bidx(i)] += product ? G[i] * A[i] : sign_b * G[i];
                        });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise("add", a, b, [](double x, double y) { return x + y; }, 1.0, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise("sub", a, b, [](double x, double y) { return x - y; }, -1.0, false);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise("mul", a, b, [](double x, double y) { return x * y; }, 0.0, true);
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= factor;
  return make_op_result(a.shape(), std::move(out), {a}, "scale", [factor](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_op_result(a.shape(), std::move(out), {a}, "relu", [](Node& self) {
    const double* A = value_of(self, 0);
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (A[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v = 1.0 / (1.0 + std::exp(-v));
  return make_op_result(a.shape(), std::move(out), {a}, "sigmoid", [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double s = self.value[i];
        g[i] += self.grad[i] * s * (1.0 - s);
      }
  });
}

Tensor softmax(const Tensor& a) {
  const auto [R, C] = row_view(a);
  const double* A = a.values().data();
  std::vector<double> out(R * C);
  for (std::size_t r = 0; r < R; ++r) {
    const double* x = A + r * C;
    double* y = &out[r * C];
    const double mx = *std::max_element(x, x + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < C; ++c) y[c] /= z;
  }
  return make_op_result(a.shape(), std::move(out), {a}, "softmax", [R, C](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < R; ++r) {
      const double* y = &self.value[r * C];
      const double* gy = &self.grad[r * C];
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += gy[c] * y[c];
      for (std::size_t c = 0; c < C; ++c) g[r * C + c] += y[c] * (gy[c] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  const auto [R, C] = row_view(a);
  const double* A = a.values().data();
  std::vector<double> out(R * C);
  for (std::size_t r = 0; r < R; ++r) {
    const double* x = A + r * C;
    double* y = &out[r * C];
    const double mx = *std::max_element(x, x + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(x[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < C; ++c) y[c] = x[c] - lse;
  }
  return make_op_result(a.shape(), std::move(out), {a}, "log_softmax", [R, C](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < R; ++r) {
      const double* y = &self.value[r * C];
      const double* gy = &self.grad[r * C];
      double total = 0.0;
      for (std::size_t c = 0; c < C; ++c) total += gy[c];
      for (std::size_t c = 0; c < C; ++c) g[r * C + c] += gy[c] - std::exp(y[c]) * total;
    }
  });
}

Tensor masked_softmax(const Tensor& a, std::shared_ptr<const Mask> mask) {
  need_rank2("masked_softmax", a, "operand");
  const std::size_t R = a.rows(), C = a.cols();
  if (!mask || mask->rows != R || mask->cols != C) {
    dim_error("masked_softmax", "mask extents do not match operand " + shape_str(a.shape()));
  }
  const double* A = a.values().data();
  std::vector<double> out(R * C, 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c)
      if ((*mask)(r, c)) mx = std::max(mx, A[r * C + c]);
    if (!std::isfinite(mx)) {
      throw ContractError("masked_softmax: row " + std::to_string(r) + " has no allowed entries");
    }
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c)
      if ((*mask)(r, c)) z += (out[r * C + c] = std::exp(A[r * C + c] - mx));
    for (std::size_t c = 0; c < C; ++c)
      if ((*mask)(r, c)) out[r * C + c] /= z;
  }
  return make_op_result({R, C}, std::move(out), {a}, "masked_softmax", [R, C, mask](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < R; ++r) {
      const double* y = &self.value[r * C];
      const double* gy = &self.grad[r * C];
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += gy[c] * y[c];
      for (std::size_t c = 0; c < C; ++c)
        if ((*mask)(r, c)) g[r * C + c] += y[c] * (gy[c] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto [R, C] = row_view(x);
  if (gain.numel() != C || bias.numel() != C) {
    dim_error("layer_norm", "gain/bias extents " + shape_str(gain.shape()) + "/" +
                                shape_str(bias.shape()) + " do not match width " + std::to_string(C));
  }
  const double* X = x.values().data();
  const double* Gm = gain.values().data();
  const double* Bt = bias.values().data();
  std::vector<double> out(R * C);
  auto xhat = std::make_shared<std::vector<double>>(R * C);
  auto inv_std = std::make_shared<std::vector<double>>(R);
  for (std::size_t r = 0; r < R; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < C; ++c) mu += X[r * C + c];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double d = X[r * C + c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(C);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < C; ++c) {
      const double h = (X[r * C + c] - mu) * is;
      (*xhat)[r * C + c] = h;
      out[r * C + c] = h * Gm[c] + Bt[c];
    }
  }
  return make_op_result(x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
                        [R, C, xhat, inv_std](Node& self) {
                          const double* G = self.grad.data();
                          const double* Gm = value_of(self, 1);
                          const auto& H = *xhat;
                          if (double* gx = grad_of(self, 0)) {
                            std::vector<double> dh(C);
                            for (std::size_t r = 0; r < R; ++r) {
                              double s1 = 0.0, s2 = 0.0;
                              for (std::size_t c = 0; c < C; ++c) {
                                dh[c] = G[r * C + c] * Gm[c];
                                s1 += dh[c];
                                s2 += dh[c] * H[r * C + c];
                              }
                              const double k = (*inv_std)[r] / static_cast<double>(C);
                              for (std::size_t c = 0; c < C; ++c)
                                gx[r * C + c] += k * (static_cast<double>(C) * dh[c] - s1 -
                                                      H[r * C + c] * s2);
                            }
                          }
                          if (double* gg = grad_of(self, 1))
                            for (std::size_t r = 0; r < R; ++r)
                              for (std::size_t c = 0; c < C; ++c) gg[c] += G[r * C + c] * H[r * C + c];
                          if (double* gb = grad_of(self, 2))
                            for (std::size_t r = 0; r < R; ++r)
                              for (std::size_t c = 0; c < C; ++c) gb[c] += G[r * C + c];
                        });
}

Tensor conv1d(const Tensor& x, const Tensor& w, std::size_t pad_left, std::size_t pad_right) {
  need_rank2("conv1d", x, "input");
  if (w.rank() != 3 || w.dim(1) != x.cols()) {
    dim_error("conv1d", "weight " + shape_str(w.shape()) + " incompatible with input " +
                            shape_str(x.shape()) + " (expected [K," + std::to_string(x.cols()) + ",Cout])");
  }
  const std::size_t T = x.rows(), Cin = x.cols(), K = w.dim(0), Cout = w.dim(2);
  if (T + pad_left + pad_right < K) dim_error("conv1d", "kernel longer than padded input");
  const std::size_t To = T + pad_left + pad_right - K + 1;
  const double* X = x.values().data();
  const double* W = w.values().data();
  std::vector<double> out(To * Cout, 0.0);
  for (std::size_t t = 0; t < To; ++t)
    for (std::size_t k = 0; k < K; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(pad_left);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      const double* xr = X + static_cast<std::size_t>(src) * Cin;
      for (std::size_t c = 0; c < Cin; ++c) {
        const double xv = xr[c];
        const double* wr = W + (k * Cin + c) * Cout;
        double* o = &out[t * Cout];
        for (std::size_t d = 0; d < Cout; ++d) o[d] += xv * wr[d];
      }
    }
  return make_op_result({To, Cout}, std::move(out), {x, w}, "conv1d",
                        [T, Cin, K, Cout, To, pad_left](Node& self) {
                          const double* G = self.grad.data();
                          const double* X = value_of(self, 0);
                          const double* W = value_of(self, 1);
                          double* gx = grad_of(self, 0);
                          double* gw = grad_of(self, 1);
                          for (std::size_t t = 0; t < To; ++t)
                            for (std::size_t k = 0; k < K; ++k) {
                              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) -
                                                         static_cast<std::ptrdiff_t>(pad_left);
                              if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
                              const std::size_t s = static_cast<std::size_t>(src);
                              const double* g = G + t * Cout;
                              for (std::size_t c = 0; c < Cin; ++c) {
                                const double* wr = W + (k * Cin + c) * Cout;
                                if (gx) {
                                  double acc = 0.0;
                                  for (std::size_t d = 0; d < Cout; ++d) acc += g[d] * wr[d];
                                  gx[s * Cin + c] += acc;
                                }
                                if (gw) {
                                  const double xv = X[s * Cin + c];
                                  double* gwr = gw + (k * Cin + c) * Cout;
                                  for (std::size_t d = 0; d < Cout; ++d) gwr[d] += xv * g[d];
                                }
                              }
                            }
                        });
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, std::size_t pad_left,
                        std::size_t pad_right) {
  need_rank2("depthwise_conv1d", x, "input");
  need_rank2("depthwise_conv1d", w, "weight");
  if (w.cols() != x.cols()) {
    dim_error("depthwise_conv1d", "weight " + shape_str(w.shape()) + " channels differ from input " +
                                      shape_str(x.shape()));
  }
  const std::size_t T = x.rows(), C = x.cols(), K = w.rows();
  if (T + pad_left + pad_right < K) dim_error("depthwise_conv1d", "kernel longer than padded input");
  const std::size_t To = T + pad_left + pad_right - K + 1;
  const double* X = x.values().data();
  const double* W = w.values().data();
  std::vector<double> out(To * C, 0.0);
  for (std::size_t t = 0; t < To; ++t)
    for (std::size_t k = 0; k < K; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(pad_left);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      const double* xr = X + static_cast<std::size_t>(src) * C;
      for (std::size_t c = 0; c < C; ++c) out[t * C + c] += W[k * C + c] * xr[c];
    }
  return make_op_result({To, C}, std::move(out), {x, w}, "depthwise_conv1d",
                        [T, C, K, To, pad_left](Node& self) {
                          const double* G = self.grad.data();
                          const double* X = value_of(self, 0);
                          const double* W = value_of(self, 1);
                          double* gx = grad_of(self, 0);
                          double* gw = grad_of(self, 1);
                          for (std::size_t t = 0; t < To; ++t)
                            for (std::size_t k = 0; k < K; ++k) {
                              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) -
                                                         static_cast<std::ptrdiff_t>(pad_left);
                              if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
                              const std::size_t s = static_cast<std::size_t>(src);
                              for (std::size_t c = 0; c < C; ++c) {
                                const double g = G[t * C + c];
                                if (gx) gx[s * C + c] += g * W[k * C + c];
                                if (gw) gw[k * C + c] += g * X[s * C + c];
                              }
                            }
                        });
}

Tensor embed(const Tensor& table, const std::vector<std::size_t>& ids) {
  need_rank2("embed", table, "table");
  const std::size_t N = table.rows(), D = table.cols();
  const double* E = table.values().data();
  std::vector<double> out(ids.size() * D);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= N) {
      dim_error("embed", "index " + std::to_string(ids[i]) + " outside table of " + std::to_string(N) + " rows");
    }
    std::copy_n(E + ids[i] * D, D, &out[i * D]);
  }
  return make_op_result({ids.size(), D}, std::move(out), {table}, "embed", [ids, D](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t d = 0; d < D; ++d) g[ids[i] * D + d] += self.grad[i * D + d];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) dim_error("concat", "no operands");
  if (axis > 1) dim_error("concat", "axis must be 0 or 1");
  for (const auto& p : parts) need_rank2("concat", p, "operand");
  const std::size_t other = axis == 0 ? parts[0].cols() : parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const std::size_t o = axis == 0 ? p.cols() : p.rows();
    if (o != other) {
      dim_error("concat", "operand " + shape_str(p.shape()) + " disagrees with " + shape_str(parts[0].shape()) +
                              " off the concat axis");
    }
    extents.push_back(axis == 0 ? p.rows() : p.cols());
    total += extents.back();
  }
  const std::size_t R = axis == 0 ? total : other;
  const std::size_t C = axis == 0 ? other : total;
  std::vector<double> out(R * C);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const double* P = parts[i].values().data();
    const std::size_t pc = parts[i].cols();
    for (std::size_t r = 0; r < parts[i].rows(); ++r)
      for (std::size_t c = 0; c < pc; ++c) {
        if (axis == 0) out[(offset + r) * C + c] = P[r * pc + c];
        else out[r * C + offset + c] = P[r * pc + c];
      }
    offset += extents[i];
  }
  return make_op_result({R, C}, std::move(out), parts, "concat", [axis, extents, C](Node& self) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < extents.size(); ++i) {
      const Node& p = *self.parents[i];
      const std::size_t pr = p.shape[0], pc = p.shape[1];
      if (double* g = grad_of(self, i))
        for (std::size_t r = 0; r < pr; ++r)
          for (std::size_t c = 0; c < pc; ++c)
            g[r * pc + c] += axis == 0 ? self.grad[(offset + r) * C + c] : self.grad[r * C + offset + c];
      offset += extents[i];
    }
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  need_rank2("slice", x, "operand");
  if (axis > 1) dim_error("slice", "axis must be 0 or 1");
  const std::size_t extent = x.dim(axis);
  if (begin > end || end > extent) {
    dim_error("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside extent " +
                           std::to_string(extent) + " of " + shape_str(x.shape()));
  }
  const std::size_t R = x.rows(), C = x.cols();
  const std::size_t oR = axis == 0 ? end - begin : R;
  const std::size_t oC = axis == 0 ? C : end - begin;
  const double* X = x.values().data();
  std::vector<double> out(oR * oC);
  for (std::size_t r = 0; r < oR; ++r)
    for (std::size_t c = 0; c < oC; ++c)
      out[r * oC + c] = axis == 0 ? X[(begin + r) * C + c] : X[r * C + begin + c];
  return make_op_result({oR, oC}, std::move(out), {x}, "slice", [axis, begin, oR, oC, C](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t r = 0; r < oR; ++r)
        for (std::size_t c = 0; c < oC; ++c) {
          const std::size_t dst = axis == 0 ? (begin + r) * C + c : r * C + begin + c;
          g[dst] += self.grad[r * oC + c];
        }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_op_result({}, {s}, {a}, "sum", [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) {
  const std::size_t n = a.numel();
  if (n == 0) throw ContractError("mean: empty operand");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Tensor pick(const Tensor& x, const std::vector<std::size_t>& ids) {
  need_rank2("pick", x, "operand");
  const std::size_t R = x.rows(), C = x.cols();
  if (ids.size() != R) {
    dim_error("pick", std::to_string(ids.size()) + " indices for " + std::to_string(R) + " rows");
  }
  std::vector<double> out(R);
  for (std::size_t r = 0; r < R; ++r) {
    if (ids[r] >= C) dim_error("pick", "index " + std::to_string(ids[r]) + " outside width " + std::to_string(C));
    out[r] = x.values()[r * C + ids[r]];
  }
  return make_op_result({R}, std::move(out), {x}, "pick", [ids, C](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t r = 0; r < ids.size(); ++r) g[r * C + ids[r]] += self.grad[r];
  });
}

}  // namespace avsr
