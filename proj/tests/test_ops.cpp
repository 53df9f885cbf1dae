// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dyconv/error.hpp"
#include "dyconv/mac_counter.hpp"
#include "dyconv/ops.hpp"
#include "support.hpp"

using namespace dyconv;
using dyconv::testing::max_rel_diff;
using dyconv::testing::naive_conv2d;
using dyconv::testing::random_tensor;

TEST_SUITE("ops") {

TEST_CASE("conv2d of ones sums the window") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0, DType::F64);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0, DType::F64);
  Tensor y = conv2d(x, w, std::nullopt, ConvGeometry{1, 0, 1});
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y[0] == 9.0);
}

TEST_CASE("conv2d with a centred unit kernel is the identity") {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({1, 1, 5, 5}, rng);
  std::vector<double> k(9, 0.0);
  k[4] = 1.0;
  Tensor w = Tensor::from({1, 1, 3, 3}, k, DType::F64);
  Tensor y = conv2d(x, w, std::nullopt, ConvGeometry{1, 1, 1});
  CHECK(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv2d matches direct summation") {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({2, 3, 8, 8}, rng);
  Tensor w = random_tensor({4, 3, 3, 3}, rng);
  Tensor y = conv2d(x, w, std::nullopt, ConvGeometry{2, 1, 1});
  CHECK(y.shape() == Shape{2, 4, 4, 4});
  CHECK(max_rel_diff(y.data(), naive_conv2d(x, w, {}, 2, 1, 1), 1e-9) < 1e-6);

  SUBCASE("grouped with bias") {
    Tensor xg = random_tensor({2, 4, 7, 7}, rng);
    Tensor wg = random_tensor({6, 2, 3, 3}, rng);
    Tensor b = random_tensor({6}, rng);
    Tensor yg = conv2d(xg, wg, b, ConvGeometry{1, 1, 2});
    const std::vector<double> bias(b.data().begin(), b.data().end());
    CHECK(max_rel_diff(yg.data(), naive_conv2d(xg, wg, bias, 1, 1, 2), 1e-9) < 1e-6);
  }
  SUBCASE("depthwise") {
    Tensor xd = random_tensor({1, 5, 6, 6}, rng);
    Tensor wd = random_tensor({5, 1, 3, 3}, rng);
    Tensor yd = conv2d(xd, wd, std::nullopt, ConvGeometry{2, 1, 5});
    CHECK(max_rel_diff(yd.data(), naive_conv2d(xd, wd, {}, 2, 1, 5), 1e-9) < 1e-6);
  }
}

TEST_CASE("conv2d output extent") {
  CHECK(conv_output_extent(224, 3, 2, 1) == 112);
  CHECK(conv_output_extent(7, 1, 1, 0) == 7);
  CHECK(conv_output_extent(8, 3, 2, 1) == 4);
}

TEST_CASE("conv2d errors") {
  Tensor x = Tensor::zeros({1, 4, 5, 5}, DType::F64);
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({3, 2, 3, 3}, DType::F64), std::nullopt, ConvGeometry{1, 1, 2}),
                  ConfigError);
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({4, 3, 3, 3}, DType::F64), std::nullopt, ConvGeometry{1, 1, 1}),
                  ShapeError);
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({4, 4, 3, 3}, DType::F64), Tensor::zeros({3}, DType::F64),
                         ConvGeometry{1, 1, 1}),
                  ShapeError);
}

TEST_CASE("convolution is linear in the kernel") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor({2, 3, 6, 6}, rng);
    Tensor w1 = random_tensor({4, 3, 3, 3}, rng);
    Tensor w2 = random_tensor({4, 3, 3, 3}, rng);
    std::uniform_real_distribution<double> coef(-2.0, 2.0);
    const double a = coef(rng), b = coef(rng);
    const ConvGeometry g{1, 1, 1};
    Tensor lhs = conv2d(x, add(scale(w1, a), scale(w2, b)), std::nullopt, g);
    Tensor rhs = add(scale(conv2d(x, w1, std::nullopt, g), a), scale(conv2d(x, w2, std::nullopt, g), b));
    CHECK(max_rel_diff(lhs.data(), rhs.data(), 1e-9) < 1e-6);
  }
}

TEST_CASE("conv2d_per_sample equals per-sample static convolutions") {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({3, 2, 5, 5}, rng);
  Tensor w = random_tensor({3, 4, 2, 3, 3}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  Tensor y = conv2d_per_sample(x, w, b, ConvGeometry{1, 1, 1});
  const std::size_t per_in = 2 * 25, per_w = 4 * 2 * 9, per_out = 4 * 25;
  for (std::size_t n = 0; n < 3; ++n) {
    Tensor xn = Tensor::from({1, 2, 5, 5}, {x.data().begin() + n * per_in, x.data().begin() + (n + 1) * per_in},
                             DType::F64);
    Tensor wn = Tensor::from({4, 2, 3, 3}, {w.data().begin() + n * per_w, w.data().begin() + (n + 1) * per_w},
                             DType::F64);
    const std::vector<double> bn(b.data().begin() + n * 4, b.data().begin() + (n + 1) * 4);
    const auto ref = naive_conv2d(xn, wn, bn, 1, 1, 1);
    CHECK(max_rel_diff(y.data().subspan(n * per_out, per_out), ref, 1e-9) < 1e-6);
  }
}

TEST_CASE("fully_connected") {
  Tensor x = Tensor::from({1, 2}, {1, 2}, DType::F64);
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1}, DType::F64);
  Tensor y = fully_connected(x, eye, Tensor::zeros({2}, DType::F64));
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);

  // hidden pre-activation of the two-layer XOR network at x = [1, 1]
  Tensor h = fully_connected(Tensor::from({1, 2}, {1, 1}, DType::F64),
                             Tensor::from({2, 2}, {1, 1, 1, 1}, DType::F64), Tensor::from({2}, {0, -1}, DType::F64));
  CHECK(h[0] == 2.0);
  CHECK(h[1] == 1.0);

  std::mt19937_64 rng(7);
  Tensor a = random_tensor({4, 16}, rng);
  Tensor w = random_tensor({8, 16}, rng);
  Tensor r = fully_connected(a, w, std::nullopt);
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t o = 0; o < 8; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < 16; ++i) acc += a[n * 16 + i] * w[o * 16 + i];
      CHECK(testing::rel_diff(r[n * 8 + o], acc, 1e-9) < 1e-6);
    }
  CHECK_THROWS_AS(fully_connected(a, random_tensor({8, 15}, rng), std::nullopt), ShapeError);
}

TEST_CASE("global_avg_pool") {
  Tensor x = Tensor::from({1, 2, 2, 2}, {4, 4, 4, 4, -1, -1, -1, -1}, DType::F64);
  Tensor y = global_avg_pool(x);
  CHECK(y.shape() == Shape{1, 2});
  CHECK(y[0] == 4.0);
  CHECK(y[1] == -1.0);
  CHECK(global_avg_pool(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}, DType::F64))[0] == 2.5);

  std::mt19937_64 rng(8);
  Tensor z = random_tensor({2, 3, 4, 5}, rng, DType::F64, true);
  Tape tape;
  backward(sum(global_avg_pool(z)));
  for (double g : z.grad()) CHECK(g == doctest::Approx(1.0 / 20.0).epsilon(1e-15));
}

TEST_CASE("relu and relu6") {
  Tensor y = relu(Tensor::from({3}, {-1, 0, 2}, DType::F64));
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);
  Tensor z = relu6(Tensor::from({3}, {-1, 3, 9}, DType::F64));
  CHECK(z[0] == 0.0);
  CHECK(z[1] == 3.0);
  CHECK(z[2] == 6.0);
}

TEST_CASE("batch norm train normalizes and updates running statistics") {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({4, 2, 3, 3}, rng, DType::F64, false, 2.0, 6.0);
  BatchNormState state = BatchNormState::with_defaults(2);
  Tensor y = batch_norm(x, Tensor::full({2}, 1.0, DType::F64), Tensor::zeros({2}, DType::F64), state, BnMode::Train);
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0.0, m2 = 0.0, xm = 0.0;
    std::size_t count = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 9; ++i) {
        const std::size_t idx = (n * 2 + c) * 9 + i;
        m += y[idx];
        m2 += y[idx] * y[idx];
        xm += x[idx];
        ++count;
      }
    m /= count;
    const double var = m2 / count - m * m;
    CHECK(std::abs(m) < 1e-9);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    xm /= count;
    CHECK(state.running_mean[c] == doctest::Approx(0.1 * xm));
  }
  CHECK(state.running_var[0] != 1.0);
}

TEST_CASE("batch norm eval uses running statistics and needs them") {
  BatchNormState state;
  state.running_mean = {1.0};
  state.running_var = {4.0};
  Tensor x = Tensor::from({1, 1, 1, 2}, {3.0, -1.0}, DType::F64);
  Tensor y = batch_norm(x, Tensor::full({1}, 2.0, DType::F64), Tensor::full({1}, 0.5, DType::F64), state,
                        BnMode::Eval);
  CHECK(y[0] == doctest::Approx(2.0 * 2.0 / std::sqrt(4.0 + 1e-5) + 0.5));
  CHECK(y[1] == doctest::Approx(2.0 * -2.0 / std::sqrt(4.0 + 1e-5) + 0.5));
  CHECK(state.running_mean[0] == 1.0);

  BatchNormState empty;
  CHECK_THROWS_AS(batch_norm(x, Tensor::full({1}, 1.0, DType::F64), Tensor::zeros({1}, DType::F64), empty,
                             BnMode::Eval),
                  StateError);
}

TEST_CASE("softmax with temperature") {
  Tensor u = softmax_with_temperature(Tensor::zeros({1, 4}, DType::F64), 7.0);
  for (double p : u.data()) CHECK(p == doctest::Approx(0.25));

  Tensor p1 = softmax_with_temperature(Tensor::from({1, 2}, {2, 0}, DType::F64), 1.0);
  CHECK(std::abs(p1[0] - 0.8808) < 1e-4);
  CHECK(std::abs(p1[1] - 0.1192) < 1e-4);

  Tensor p30 = softmax_with_temperature(Tensor::from({1, 2}, {2, 0}, DType::F64), 30.0);
  CHECK(std::abs(p30[0] - 0.5167) < 1e-4);
  CHECK(std::abs(p30[1] - 0.4833) < 1e-4);

  Tensor big = softmax_with_temperature(Tensor::from({1, 2}, {1000, -1000}, DType::F64), 1.0);
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == doctest::Approx(1.0));

  CHECK_THROWS_AS(softmax_with_temperature(u, 0.0), ConfigError);
  CHECK_THROWS_AS(softmax_with_temperature(u, -1.0), ConfigError);
}

TEST_CASE("softmax rows lie on the simplex") {
  std::mt19937_64 rng(10);
  for (double tau : {0.1, 1.0, 30.0}) {
    Tensor p = softmax_with_temperature(random_tensor({16, 5}, rng, DType::F64, false, -20.0, 20.0), tau);
    for (std::size_t r = 0; r < 16; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) {
        CHECK(p[r * 5 + k] >= 0.0);
        CHECK(p[r * 5 + k] <= 1.0);
        s += p[r * 5 + k];
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("softmax entropy is non-decreasing in temperature") {
  std::mt19937_64 rng(12);
  const std::vector<double> taus{0.5, 1.0, 2.0, 5.0, 10.0, 30.0, 100.0};
  for (int trial = 0; trial < 100; ++trial) {
    Tensor z = random_tensor({1, 4}, rng, DType::F64, false, -5.0, 5.0);
    double previous = -1.0;
    for (double tau : taus) {
      const double h = entropy(softmax_with_temperature(z, tau).data());
      CHECK(h + 1e-9 >= previous);
      previous = h;
    }
  }
}

TEST_CASE("cross entropy") {
  Tensor uniform = Tensor::zeros({3, 10}, DType::F64);
  const std::vector<int> labels{0, 4, 9};
  CHECK(cross_entropy_loss(uniform, labels).item() == doctest::Approx(std::log(10.0)));

  std::vector<double> onehot(30, 0.0);
  for (std::size_t n = 0; n < 3; ++n) onehot[n * 10 + static_cast<std::size_t>(labels[n])] = 100.0;
  CHECK(cross_entropy_loss(Tensor::from({3, 10}, onehot, DType::F64), labels).item() < 1e-30);

  std::mt19937_64 rng(13);
  Tensor logits = random_tensor({4, 10}, rng, DType::F64, false, -3.0, 3.0);
  const std::vector<int> l4{1, 3, 5, 7};
  double ref = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double lse = 0.0;
    for (std::size_t c = 0; c < 10; ++c) lse += std::exp(logits[n * 10 + c]);
    ref += std::log(lse) - logits[n * 10 + static_cast<std::size_t>(l4[n])];
  }
  CHECK(testing::rel_diff(cross_entropy_loss(logits, l4).item(), ref / 4.0) < 1e-6);

  const std::vector<int> bad{0, 10, 1};
  CHECK_THROWS_AS(cross_entropy_loss(uniform, bad), DataError);
  const std::vector<int> negative{0, -1, 1};
  CHECK_THROWS_AS(cross_entropy_loss(uniform, negative), DataError);
  const std::vector<int> short_labels{0, 1};
  CHECK_THROWS_AS(cross_entropy_loss(uniform, short_labels), ShapeError);
}

TEST_CASE("mac counter tallies by category") {
  std::mt19937_64 rng(14);
  Tensor x = random_tensor({2, 3, 8, 8}, rng);
  Tensor w = random_tensor({4, 3, 3, 3}, rng);
  MacCounter counter;
  Tensor y = conv2d(x, w, std::nullopt, ConvGeometry{2, 1, 1});
  CHECK(counter.get(MacCategory::Conv) == 2ull * 4 * 4 * 4 * 27);
  Tensor p = global_avg_pool(y);
  CHECK(counter.get(MacCategory::Pool) == 2ull * 4 * 16);
  fully_connected(p, random_tensor({5, 4}, rng), std::nullopt);
  CHECK(counter.get(MacCategory::FullyConnected) == 2ull * 4 * 5);
  CHECK(counter.counted_total() == 2ull * 4 * 4 * 4 * 27 + 40);
  {
    MacScope scope(MacCategory::Attention);
    global_avg_pool(y);
  }
  CHECK(counter.get(MacCategory::Attention) == 2ull * 4 * 16);
}

}  // TEST_SUITE
