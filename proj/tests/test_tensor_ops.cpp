#include <doctest.h>

#include <cmath>
#include <cstring>

#include "gradcheck_battery.hpp"
#include "neurohybrid/ops.hpp"
#include "neurohybrid/tensor.hpp"
#include "oracles.hpp"

using namespace neurohybrid;

TEST_SUITE("tensor_ops") {

TEST_CASE("tensor construction validates value count against shape") {
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 3}, std::vector<double>{1.0}), std::invalid_argument);
  Tensor<double> t(Shape{2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t[5] == 1.5);
}

TEST_CASE("copies share storage, clone does not") {
  Tensor<double> a(Shape{3}, std::vector<double>{1, 2, 3});
  Tensor<double> b = a;
  b[0] = 9;
  CHECK(a[0] == 9);
  CHECK(a.same_storage(b));
  Tensor<double> c = a.clone();
  c[0] = 5;
  CHECK(a[0] == 9);
  CHECK(!a.same_storage(c));
}

TEST_CASE("finite-difference battery: every differentiable op, 20 shapes each") {
  const auto results = gradcheck::run_battery(20);
  CHECK(results.size() >= 13);
  for (const auto& r : results) {
    INFO(r.op);
    CHECK(r.trials >= 20);
    CHECK(r.worst_rel_err < 1e-5);
    if (r.op == "weighted_bce") CHECK(r.worst_rel_err < 1e-6);
  }
}

TEST_CASE("conv3d identity kernel reproduces the input exactly") {
  Rng rng(11);
  auto x = oracles::grid_tensor(Shape{1, 1, 4, 4, 4}, rng);
  Tensor<double> k(Shape{1, 1, 1, 1, 1}, std::vector<double>{1.0});
  Tensor<double> b(Shape{1}, 0.0);
  auto y = conv3d(x, k, b, Dims3{1, 1, 1}, Dims3{0, 0, 0});
  CHECK(y.shape() == x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv3d all-ones kernel counts window overlap") {
  Tensor<double> x(Shape{1, 1, 4, 4, 4}, 1.0);
  Tensor<double> k(Shape{1, 1, 3, 3, 3}, 1.0);
  Tensor<double> b(Shape{1}, 0.0);
  auto y = conv3d(x, k, b, Dims3{1, 1, 1}, Dims3{1, 1, 1});
  CHECK(y.shape() == Shape{1, 1, 4, 4, 4});
  const auto at = [&](int64_t d, int64_t h, int64_t w) { return y[(d * 4 + h) * 4 + w]; };
  CHECK(at(1, 1, 1) == 27.0);
  CHECK(at(0, 0, 0) == 8.0);
  CHECK(at(0, 0, 3) == 8.0);
  CHECK(at(0, 1, 1) == 18.0);
}

TEST_CASE("conv3d stride 1 with same padding preserves spatial extents") {
  Rng rng(12);
  for (const int64_t k : {1, 3, 5}) {
    auto x = oracles::grid_tensor(Shape{2, 2, 6, 5, 7}, rng);
    auto kern = oracles::grid_tensor(Shape{3, 2, k, k, k}, rng, 0.3);
    Tensor<double> b(Shape{3}, 0.0);
    auto y = conv3d(x, kern, b, Dims3{1, 1, 1}, Dims3{k / 2, k / 2, k / 2});
    CHECK(y.shape() == Shape{2, 3, 6, 5, 7});
  }
}

TEST_CASE("conv3d rejects bad shapes") {
  Tensor<double> x(Shape{1, 2, 4, 4, 4}, 1.0);
  Tensor<double> b(Shape{1}, 0.0);
  Tensor<double> wrong_channels(Shape{1, 3, 3, 3, 3}, 1.0);
  CHECK_THROWS_AS(conv3d(x, wrong_channels, b, Dims3{1, 1, 1}, Dims3{0, 0, 0}),
                  std::invalid_argument);
  Tensor<double> k(Shape{1, 2, 3, 3, 3}, 1.0);
  CHECK_THROWS_AS(conv3d(x, k, b, Dims3{2, 2, 2}, Dims3{0, 0, 0}),
                  std::invalid_argument);  // (4-3)/2 leaves a partial window
}

TEST_CASE("batchnorm3d of constant channels returns beta") {
  // Statistics pool over batch and spatial dims, so only a per-channel
  // constant input has zero variance.
  Tensor<double> x(Shape{2, 2, 3, 3, 3});
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t i = 0; i < 27; ++i) x[(n * 2 + c) * 27 + i] = c == 0 ? 3.5 : -1.25;
  Tensor<double> gamma(Shape{2}, std::vector<double>{1.5, -2.0});
  Tensor<double> beta(Shape{2}, std::vector<double>{0.25, -0.75});
  auto stats = BatchNormState<double>::init(2);
  auto y = batchnorm3d(x, gamma, beta, stats, Mode::Train, 1e-5, 0.1);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 2; ++c)
      for (int64_t i = 0; i < 27; ++i) {
        const double v = y[(n * 2 + c) * 27 + i];
        CHECK(v == doctest::Approx(beta[c]).epsilon(1e-9));
      }
}

TEST_CASE("batchnorm3d unit-variance pair maps to +-1/sqrt(1+eps)") {
  Tensor<double> x(Shape{2, 1, 1, 1, 1}, std::vector<double>{-1.0, 1.0});
  Tensor<double> gamma(Shape{1}, 1.0);
  Tensor<double> beta(Shape{1}, 0.0);
  auto stats = BatchNormState<double>::init(1);
  const double eps = 1e-5;
  auto y = batchnorm3d(x, gamma, beta, stats, Mode::Train, eps, 0.1);
  const double expect = 1.0 / std::sqrt(1.0 + eps);
  CHECK(y[0] == doctest::Approx(-expect).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("tensors reject non-positive extents, so no op can see an empty batch") {
  CHECK_THROWS_AS(Tensor<double>(Shape{0, 1, 1, 1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<double>(Shape{2, -3}), std::invalid_argument);
}

TEST_CASE("batchnorm3d infer mode uses running stats, not batch stats") {
  Tensor<double> x(Shape{1, 1, 1, 1, 2}, std::vector<double>{3.0, 5.0});
  Tensor<double> gamma(Shape{1}, 1.0);
  Tensor<double> beta(Shape{1}, 0.0);
  auto stats = BatchNormState<double>::init(1);  // mean 0, var 1
  auto y = batchnorm3d(x, gamma, beta, stats, Mode::Infer, 1e-5, 0.1);
  CHECK(y[0] == doctest::Approx(3.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(5.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
}

TEST_CASE("maxpool3d constant input stays constant, 2x2x2 picks the max") {
  Tensor<double> c(Shape{1, 1, 4, 4, 4}, 2.5);
  auto yc = maxpool3d(c, Dims3{2, 2, 2}, Dims3{2, 2, 2});
  for (int64_t i = 0; i < yc.numel(); ++i) CHECK(yc[i] == 2.5);

  std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8};
  Tensor<double> x(Shape{1, 1, 2, 2, 2}, std::move(v));
  auto y = maxpool3d(x, Dims3{2, 2, 2}, Dims3{2, 2, 2});
  CHECK(y.numel() == 1);
  CHECK(y[0] == 8.0);
}

TEST_CASE("maxpool3d rejects a window larger than the input") {
  Tensor<double> x(Shape{1, 1, 2, 2, 2}, 1.0);
  CHECK_THROWS_AS(maxpool3d(x, Dims3{3, 3, 3}, Dims3{1, 1, 1}), std::invalid_argument);
}

TEST_CASE("maxpool3d tie-break routes gradient to the first index") {
  Tensor<double> x(Shape{1, 1, 1, 1, 4}, std::vector<double>{7.0, 7.0, 1.0, 7.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  auto y = maxpool3d(x, Dims3{1, 1, 4}, Dims3{1, 1, 1}, &tape);
  auto loss = sum(y, &tape);
  tape.backward(loss);
  CHECK(x.grad() == std::vector<double>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("global_avg_pool collapses spatial dims to the mean") {
  Tensor<double> c(Shape{2, 3, 2, 2, 2}, 0.75);
  auto yc = global_avg_pool(c);
  CHECK(yc.shape() == Shape{2, 3});
  for (int64_t i = 0; i < yc.numel(); ++i) CHECK(yc[i] == 0.75);

  std::vector<double> v{0, 1, 2, 3, 4, 5, 6, 7};
  Tensor<double> x(Shape{1, 1, 2, 2, 2}, std::move(v));
  auto y = global_avg_pool(x);
  CHECK(y[0] == 3.5);

  x.set_requires_grad(true);
  Tape<double> tape;
  auto y2 = global_avg_pool(x, &tape);
  auto loss = sum(y2, &tape);
  tape.backward(loss);
  for (const double g : x.grad()) CHECK(g == doctest::Approx(1.0 / 8.0).epsilon(1e-15));
}

TEST_CASE("dense computes the affine map") {
  Tensor<double> eye(Shape{3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<double> zero(Shape{3}, 0.0);
  Rng rng(14);
  auto x = oracles::grid_tensor(Shape{2, 3}, rng);
  auto y = dense(x, eye, zero);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

  Tensor<double> x2(Shape{1, 2}, std::vector<double>{1.0, 2.0});
  Tensor<double> w2(Shape{2, 1}, std::vector<double>{1.0, 1.0});
  Tensor<double> b2(Shape{1}, std::vector<double>{0.5});
  CHECK(dense(x2, w2, b2)[0] == 3.5);

  Tensor<double> wbad(Shape{3, 1}, 1.0);
  CHECK_THROWS_AS(dense(x2, wbad, b2), std::invalid_argument);
}

TEST_CASE("relu and sigmoid point values") {
  Tensor<double> x(Shape{3}, std::vector<double>{-2.0, 0.0, 3.0});
  auto r = relu(x);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 3.0);
  Tensor<double> z(Shape{1}, 0.0);
  CHECK(sigmoid(z)[0] == 0.5);
}

TEST_CASE("sigmoid gradient at zero is exactly a quarter") {
  Tensor<double> x(Shape{1}, 0.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  auto s = sigmoid(x, &tape);
  auto loss = sum(s, &tape);
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("sigmoid stays finite and inside (0,1) at extreme inputs") {
  Tensor<double> x(Shape{4}, std::vector<double>{-745.0, -60.0, 60.0, 745.0});
  auto s = sigmoid(x);
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(std::isfinite(s[i]));
    CHECK(s[i] >= 0.0);
    CHECK(s[i] <= 1.0);
  }
  CHECK(s[0] < 1e-100);
  CHECK(s[3] > 1.0 - 1e-15);
}

TEST_CASE("dropout identities: rate zero and infer mode") {
  Rng data_rng(15);
  auto x = oracles::grid_tensor(Shape{50}, data_rng);
  for (const Mode mode : {Mode::Train, Mode::Infer}) {
    Rng rng(1);
    auto y = dropout(x, 0.0, mode, rng);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
  }
  Rng rng(2);
  auto y = dropout(x, 0.7, Mode::Infer, rng);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("dropout keeps the expected mass and rejects rate >= 1") {
  const int64_t n = 100000;
  Tensor<double> x(Shape{n}, 1.0);
  Rng rng(42);
  auto y = dropout(x, 0.5, Mode::Train, rng);
  double mean = 0.0;
  for (int64_t i = 0; i < n; ++i) mean += y[i];
  mean /= static_cast<double>(n);
  CHECK(mean == doctest::Approx(1.0).epsilon(0.01));

  Rng rng2(43);
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::Train, rng2), std::invalid_argument);
}

TEST_CASE("dropout is deterministic under a fixed seed") {
  Rng data_rng(16);
  auto x = oracles::grid_tensor(Shape{64}, data_rng);
  Rng a(7), b(7);
  auto ya = dropout(x, 0.5, Mode::Train, a);
  auto yb = dropout(x, 0.5, Mode::Train, b);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(ya[i] == yb[i]);
}

TEST_CASE("concat joins tensors and round-trips through slice bit-exactly") {
  Rng rng(17);
  auto a = oracles::grid_tensor(Shape{2, 3}, rng);
  auto b = oracles::grid_tensor(Shape{2, 5}, rng);
  auto y = concat<double>({a, b}, 1, nullptr);
  CHECK(y.shape() == Shape{2, 8});
  auto sa = slice(y, 1, 0, 3);
  auto sb = slice(y, 1, 3, 5);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(sa[i] == a[i]);
  for (int64_t i = 0; i < b.numel(); ++i) CHECK(sb[i] == b[i]);

  auto one = concat<double>({a}, 0, nullptr);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(one[i] == a[i]);

  Tensor<double> bad(Shape{3, 5}, 0.0);
  CHECK_THROWS_AS(concat<double>({a, bad}, 1, nullptr), std::invalid_argument);
}

TEST_CASE("backward of sum is all ones and repeat passes agree") {
  Rng rng(18);
  auto x = oracles::grid_tensor(Shape{4, 3}, rng);
  x.set_requires_grad(true);
  {
    Tape<double> tape;
    auto loss = sum(x, &tape);
    tape.backward(loss);
    for (const double g : x.grad()) CHECK(g == 1.0);
  }
  auto w = oracles::grid_tensor(Shape{3, 2}, rng);
  Tensor<double> bias(Shape{2}, 0.1);
  std::vector<double> first;
  for (int pass = 0; pass < 2; ++pass) {
    x.zero_grad();
    Tape<double> tape;
    auto h = dense(x, w, bias, &tape);
    auto s = sigmoid(h, &tape);
    auto loss = sum(s, &tape);
    tape.backward(loss);
    if (pass == 0)
      first = x.grad();
    else
      CHECK(first == x.grad());
  }
}

TEST_CASE("backward rejects non-scalar and off-tape losses") {
  Rng rng(19);
  auto x = oracles::grid_tensor(Shape{3}, rng);
  x.set_requires_grad(true);
  Tape<double> tape;
  auto y = relu(x, &tape);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
  Tensor<double> stranger = Tensor<double>::scalar(1.0);
  CHECK_THROWS_AS(tape.backward(stranger), std::invalid_argument);
}

TEST_CASE("forward passes are pure: identical calls give identical bytes") {
  Rng rng(20);
  auto x = oracles::grid_tensor(Shape{1, 2, 5, 5, 5}, rng);
  auto k = oracles::grid_tensor(Shape{3, 2, 3, 3, 3}, rng, 0.4);
  auto b = oracles::grid_tensor(Shape{3}, rng, 0.2);
  auto y1 = conv3d(x, k, b, Dims3{1, 1, 1}, Dims3{1, 1, 1});
  auto y2 = conv3d(x, k, b, Dims3{1, 1, 1}, Dims3{1, 1, 1});
  CHECK(std::memcmp(y1.data(), y2.data(), sizeof(double) * static_cast<size_t>(y1.numel())) == 0);
}

}  // TEST_SUITE
