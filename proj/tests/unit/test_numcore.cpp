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

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>

#include "avsr/errors.hpp"
#include "avsr/numcore/checkpoint.hpp"
#include "avsr/numcore/ops.hpp"
#include "avsr/numcore/optim.hpp"
#include "avsr/numcore/params.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace avsr;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool rg = true, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v), rg);
}

// Weighted sum turns any tensor into a scalar with non-uniform upstream grads.
Tensor probe_loss(const Tensor& t, std::uint64_t seed = 99) {
  Rng rng(seed);
  const Tensor w = random_tensor(rng, t.shape(), false);
  return sum(mul(t, w));
}

void expect_grad_ok(const std::function<Tensor()>& fn, const std::vector<Tensor>& params) {
  const auto r = testing::grad_check(fn, params);
  INFO(r.worst_where);
  CHECK(r.ok);
  CHECK(r.checked > 0);
}

}  // namespace

TEST_SUITE("numcore") {
  TEST_CASE("forward examples") {
    const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    const Tensor id = Tensor::matrix(2, 2, {1, 0, 0, 1});
    const Tensor p = matmul(a, id);
    CHECK(std::vector<double>(p.values().begin(), p.values().end()) == std::vector<double>{1, 2, 3, 4});

    const Tensor s = softmax(Tensor({2}, {0.0, 0.0}));
    CHECK(s.at(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.at(1) == doctest::Approx(0.5).epsilon(1e-15));

    const Tensor ls = log_softmax(Tensor({2}, {std::log(2.0), 0.0}));
    CHECK(std::abs(ls.at(0) - std::log(2.0 / 3.0)) < 1e-12);
    CHECK(std::abs(ls.at(1) - std::log(1.0 / 3.0)) < 1e-12);
  }

  TEST_CASE("backward of sum of squares") {
    Tensor x({3}, {1, 2, 3}, true);
    backward(sum(mul(x, x)));
    REQUIRE(x.has_grad());
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
    CHECK(x.grad()[2] == 6.0);
  }

  TEST_CASE("backward of a constant is a no-op") {
    Tensor x({3}, {1, 2, 3}, false);
    const Tensor loss = sum(x);
    CHECK_NOTHROW(backward(loss));
    CHECK_FALSE(x.has_grad());
  }

  TEST_CASE("non-scalar loss is a contract error") {
    Tensor x({3}, {1, 2, 3}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
  }

  TEST_CASE("shape mismatch names the primitive and extents") {
    const Tensor a = Tensor::zeros({2, 3});
    const Tensor b = Tensor::zeros({2, 3});
    try {
      matmul(a, b);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("matmul") != std::string::npos);
      CHECK(msg.find("[2,3]") != std::string::npos);
    }
    CHECK_THROWS_AS(add(a, Tensor::zeros({4})), DimensionError);
    CHECK_THROWS_AS(concat({a, Tensor::zeros({3, 2})}, 0), DimensionError);
    CHECK_THROWS_AS(slice(a, 1, 2, 5), DimensionError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  }

  TEST_CASE("non-finite values are rejected") {
    CHECK_THROWS_AS(Tensor({1}, {std::nan("")}), NumericError);
    CHECK_THROWS_AS(Tensor({1}, {INFINITY}), NumericError);
    const Tensor big({1}, {1e200});
    CHECK_THROWS_AS(mul(big, big), NumericError);
  }

  TEST_CASE("softmax rows sum to one, log_softmax rows log-sum-exp to zero") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor x = random_tensor(rng, {5, 7}, false, 10.0);
      const Tensor s = softmax(x);
      const Tensor ls = log_softmax(x);
      for (std::size_t r = 0; r < 5; ++r) {
        double total = 0.0, lse = 0.0;
        for (std::size_t c = 0; c < 7; ++c) {
          total += s.at(r, c);
          lse += std::exp(ls.at(r, c));
        }
        CHECK(std::abs(total - 1.0) < 1e-9);
        CHECK(std::abs(std::log(lse)) < 1e-9);
      }
    }
  }

  TEST_CASE("every primitive matches finite differences") {
    Rng rng(2024);
    SUBCASE("matmul and matmul_nt") {
      Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 2}), c = random_tensor(rng, {5, 4});
      expect_grad_ok([&] { return probe_loss(matmul(a, b)); }, {a, b});
      expect_grad_ok([&] { return probe_loss(matmul_nt(a, c)); }, {a, c});
      expect_grad_ok([&] { return probe_loss(transpose(a)); }, {a});
    }
    SUBCASE("elementwise with broadcasting") {
      Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {3, 4}), row = random_tensor(rng, {4});
      Tensor s = random_tensor(rng, {});
      expect_grad_ok([&] { return probe_loss(add(a, b)); }, {a, b});
      expect_grad_ok([&] { return probe_loss(add(a, row)); }, {a, row});
      expect_grad_ok([&] { return probe_loss(sub(a, row)); }, {a, row});
      expect_grad_ok([&] { return probe_loss(mul(a, b)); }, {a, b});
      expect_grad_ok([&] { return probe_loss(mul(a, row)); }, {a, row});
      expect_grad_ok([&] { return probe_loss(add(a, s)); }, {a, s});
      expect_grad_ok([&] { return probe_loss(scale(a, -1.7)); }, {a});
    }
    SUBCASE("nonlinearities") {
      Tensor a = random_tensor(rng, {4, 5});
      expect_grad_ok([&] { return probe_loss(relu(a)); }, {a});
      expect_grad_ok([&] { return probe_loss(sigmoid(a)); }, {a});
      expect_grad_ok([&] { return probe_loss(softmax(a)); }, {a});
      expect_grad_ok([&] { return probe_loss(log_softmax(a)); }, {a});
      auto mask = std::make_shared<Mask>();
      mask->rows = 4;
      mask->cols = 5;
      mask->allowed = {1, 0, 0, 0, 0, 1, 1, 0, 0, 0, 1, 1, 1, 0, 1, 1, 1, 1, 1, 1};
      expect_grad_ok([&] { return probe_loss(masked_softmax(a, mask)); }, {a});
    }
    SUBCASE("layer_norm") {
      Tensor x = random_tensor(rng, {3, 6}), g = random_tensor(rng, {6}), b = random_tensor(rng, {6});
      expect_grad_ok([&] { return probe_loss(layer_norm(x, g, b)); }, {x, g, b});
    }
    SUBCASE("convolutions") {
      Tensor x = random_tensor(rng, {6, 3}), w = random_tensor(rng, {3, 3, 2}), dw = random_tensor(rng, {4, 3});
      expect_grad_ok([&] { return probe_loss(conv1d(x, w, 2, 0)); }, {x, w});
      expect_grad_ok([&] { return probe_loss(conv1d(x, w, 1, 1)); }, {x, w});
      expect_grad_ok([&] { return probe_loss(depthwise_conv1d(x, dw, 3, 0)); }, {x, dw});
      expect_grad_ok([&] { return probe_loss(depthwise_conv1d(x, dw, 1, 2)); }, {x, dw});
    }
    SUBCASE("indexing and reshaping") {
      Tensor table = random_tensor(rng, {5, 3}), a = random_tensor(rng, {4, 3}), b = random_tensor(rng, {2, 3});
      Tensor c = random_tensor(rng, {4, 2});
      expect_grad_ok([&] { return probe_loss(embed(table, {4, 0, 4, 2})); }, {table});
      expect_grad_ok([&] { return probe_loss(concat({a, b}, 0)); }, {a, b});
      expect_grad_ok([&] { return probe_loss(concat({a, c}, 1)); }, {a, c});
      expect_grad_ok([&] { return probe_loss(slice(a, 0, 1, 3)); }, {a});
      expect_grad_ok([&] { return probe_loss(slice(a, 1, 1, 3)); }, {a});
      expect_grad_ok([&] { return probe_loss(pick(a, {2, 0, 1, 2})); }, {a});
      expect_grad_ok([&] { return mean(mul(a, a)); }, {a});
    }
  }

  TEST_CASE("random composed graphs match finite differences") {
    // Random two-layer nets with a random choice of nonlinearity and
    // normalisation, each under 200 parameters.
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
      Rng rng(seed);
      const std::size_t in = 2 + rng.index(4), hid = 2 + rng.index(5), out = 2 + rng.index(4);
      const std::size_t T = 2 + rng.index(4);
      Tensor x = random_tensor(rng, {T, in});
      Tensor w1 = random_tensor(rng, {in, hid}), b1 = random_tensor(rng, {hid});
      Tensor w2 = random_tensor(rng, {hid, out}), g = random_tensor(rng, {out}), b2 = random_tensor(rng, {out});
      const auto kind = rng.index(3);
      std::vector<std::size_t> ids(T);
      for (auto& i : ids) i = rng.index(out);
      auto fn = [&]() {
        Tensor h = add(matmul(x, w1), b1);
        h = kind == 0 ? relu(h) : kind == 1 ? sigmoid(h) : softmax(h);
        Tensor o = layer_norm(matmul(h, w2), g, b2);
        return scale(mean(pick(log_softmax(o), ids)), -1.0);
      };
      const auto r = testing::grad_check(fn, {x, w1, b1, w2, g, b2});
      INFO("seed " << seed << ": " << r.worst_where);
      CHECK(r.ok);
    }
  }

  TEST_CASE("backward leaves forward values untouched") {
    Rng rng(5);
    Tensor a = random_tensor(rng, {3, 3}), b = random_tensor(rng, {3, 3});
    const Tensor h = softmax(matmul(a, b));
    const std::vector<double> before(h.values().begin(), h.values().end());
    const std::vector<double> a_before(a.values().begin(), a.values().end());
    backward(probe_loss(h));
    CHECK(std::memcmp(before.data(), h.values().data(), before.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(a_before.data(), a.values().data(), a_before.size() * sizeof(double)) == 0);
  }

  TEST_CASE("no-grad mode records nothing") {
    Tensor a({2}, {1, 2}, true);
    NoGradGuard ng;
    const Tensor b = mul(a, a);
    CHECK_FALSE(b.requires_grad());
  }
}

TEST_SUITE("optim") {
  TEST_CASE("plain gradient step") {
    Tensor p({1}, {1.0}, true);
    p.grad_mut()[0] = 0.5;
    WarmupCosine constant;
    std::vector<Tensor> params{p};
    sgd_step(params, 0.1, constant, 0.0);
    CHECK(p.at(0) == doctest::Approx(0.95).epsilon(1e-15));
    CHECK(constant.step() == 1);
  }

  TEST_CASE("decoupled weight decay") {
    Tensor p({1}, {2.0}, true);
    p.grad_mut()[0] = 0.0;
    WarmupCosine constant;
    std::vector<Tensor> params{p};
    sgd_step(params, 0.1, constant, 0.5);
    CHECK(p.at(0) == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
  }

  TEST_CASE("missing grads are a contract error") {
    Tensor p({1}, {1.0}, true);
    WarmupCosine constant;
    std::vector<Tensor> params{p};
    CHECK_THROWS_AS(sgd_step(params, 0.1, constant), ContractError);
  }

  TEST_CASE("warmup starts at peak over warmup steps") {
    const WarmupCosine sched(10, 100);
    CHECK(sched.rate_at(1e-3, 0) == doctest::Approx(1e-3 / 10).epsilon(1e-15));
  }

  TEST_CASE("schedule trace follows the closed-form curve") {
    const double peak = 1e-3;
    WarmupCosine sched(10, 100);
    for (std::size_t s = 0; s < 120; ++s) {
      double expected;
      if (s < 10) {
        expected = peak * (s + 1) / 10.0;
      } else {
        const double progress = std::min(1.0, (s - 10) / 90.0);
        expected = 0.5 * peak * (1.0 + std::cos(std::numbers::pi * progress));
      }
      CHECK(std::abs(sched.current(peak) - expected) < 1e-9);
      sched.advance();
    }
  }

  TEST_CASE("adamw moves against the gradient") {
    Tensor p({2}, {1.0, -1.0}, true);
    AdamW opt({p}, 0.1, WarmupCosine{});
    for (int i = 0; i < 50; ++i) {
      p.zero_grad();
      backward(sum(mul(p, p)));
      opt.step();
    }
    CHECK(std::abs(p.at(0)) < 0.2);
    CHECK(std::abs(p.at(1)) < 0.2);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("bit-exact round trip") {
    Rng rng(3);
    Checkpoint ck;
    ck.seed = 0xdeadbeefULL;
    ck.config = "a = 1\nb = two\n";
    ck.params.add_glorot("enc.w", {3, 4}, rng);
    ck.params.add("enc.tiny", Tensor({2}, {5e-324, -0.0}, true));
    ck.params.add_glorot("conv", {2, 3, 4}, rng);
    const auto path = std::filesystem::temp_directory_path() / "avsr_ckpt_roundtrip.bin";
    save_checkpoint(path, ck);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.seed == ck.seed);
    CHECK(back.config == ck.config);
    REQUIRE(back.params.entries().size() == ck.params.entries().size());
    for (std::size_t i = 0; i < ck.params.entries().size(); ++i) {
      const auto& [n1, t1] = ck.params.entries()[i];
      const auto& [n2, t2] = back.params.entries()[i];
      CHECK(n1 == n2);
      CHECK(t1.shape() == t2.shape());
      CHECK(std::memcmp(t1.values().data(), t2.values().data(), t1.numel() * sizeof(double)) == 0);
    }
    std::filesystem::remove(path);
  }

  TEST_CASE("missing file is a data error") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/avsr.ckpt"), DataError);
  }
}
