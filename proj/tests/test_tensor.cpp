// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "dyconv/error.hpp"
#include "dyconv/ops.hpp"
#include "support.hpp"

using namespace dyconv;
using dyconv::testing::random_tensor;

TEST_SUITE("tensor") {

TEST_CASE("construction validates shape and size") {
  CHECK_THROWS_AS(Tensor::zeros({2, 0, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, DType::F64);
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  CHECK(t[4] == 5.0);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("f32 tensors hold float-representable values") {
  Tensor t = Tensor::from({1}, {0.1}, DType::F32);
  CHECK(t[0] == static_cast<double>(0.1f));
  Tensor sum_t = add(t, t);
  CHECK(sum_t[0] == static_cast<double>(0.1f + 0.1f));
  CHECK(Tensor::from({1}, {0.1}, DType::F64)[0] == 0.1);
}

TEST_CASE("dtype promotion") {
  CHECK(promote(DType::F32, DType::F64) == DType::F64);
  CHECK(promote(DType::F32, DType::F32) == DType::F32);
  Tensor a = Tensor::full({2}, 1.0, DType::F32);
  Tensor b = Tensor::full({2}, 1.0, DType::F64);
  CHECK(add(a, b).dtype() == DType::F64);
}

TEST_CASE("gradient of sum is all ones") {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({3, 4}, rng, DType::F64, true);
  Tape tape;
  backward(sum(x));
  REQUIRE(x.has_grad());
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("gradient of sum(x*x) is 2x") {
  std::mt19937_64 rng(2);
  Tensor x = random_tensor({5}, rng, DType::F64, true);
  Tape tape;
  backward(sum(mul(x, x)));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x[i]).epsilon(1e-15));
}

TEST_CASE("gradients accumulate across consumers and across backward calls") {
  Tensor x = Tensor::from({2}, {1.0, -2.0}, DType::F64, true);
  {
    Tape tape;
    // x feeds two consumers: d/dx (3x + x*x) = 3 + 2x
    backward(sum(add(scale(x, 3.0), mul(x, x))));
  }
  CHECK(x.grad()[0] == doctest::Approx(5.0));
  CHECK(x.grad()[1] == doctest::Approx(-1.0));
  {
    Tape tape;
    backward(sum(x));
  }
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("calling backward twice on the same graph accumulates leaf gradients") {
  Tensor x = Tensor::from({2}, {3.0, 4.0}, DType::F64, true);
  Tape tape;
  Tensor loss = sum(mul(x, x));
  backward(loss);
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(12.0));
  CHECK(x.grad()[1] == doctest::Approx(16.0));
}

TEST_CASE("backward rejects non-scalar roots and untaped losses") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, DType::F64, true);
  {
    Tape tape;
    CHECK_THROWS_AS(backward(mul(x, x)), ShapeError);
  }
  Tensor untaped = sum(x);
  CHECK_THROWS_AS(backward(untaped), StateError);
}

TEST_CASE("no-grad guard suppresses recording") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, DType::F64, true);
  Tape tape;
  {
    NoGradGuard guard;
    sum(mul(x, x));
  }
  CHECK(tape.size() == 0);
  sum(x);
  CHECK(tape.size() == 1);
}

TEST_CASE("clone is deep and conversion rounds") {
  Tensor a = Tensor::from({2}, {1.0 / 3.0, 2.0}, DType::F64);
  Tensor b = a.clone();
  b.mutable_data()[0] = 7.0;
  CHECK(a[0] == doctest::Approx(1.0 / 3.0));
  CHECK(a.to(DType::F32)[0] == static_cast<double>(static_cast<float>(1.0 / 3.0)));
}

TEST_CASE("same seed and inputs give bitwise-identical results") {
  auto run = [] {
    std::mt19937_64 rng(11);
    Tensor x = random_tensor({2, 3, 6, 6}, rng);
    Tensor w = random_tensor({4, 3, 3, 3}, rng);
    return conv2d(x, w, std::nullopt, ConvGeometry{1, 1, 1});
  };
  Tensor a = run();
  Tensor b = run();
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

}  // TEST_SUITE
