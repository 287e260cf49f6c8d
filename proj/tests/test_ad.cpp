#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ltmvo/ad.hpp"
#include "ltmvo/gradcheck.hpp"

using namespace ltmvo;
using DVar = ad::Var<double>;

TEST_CASE("shape/value accounting") {
  auto v = DVar::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(v.size() == 6);
  CHECK(v.shape() == ad::Shape{2, 3});
  CHECK_THROWS_AS(DVar::constant({2, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(ad::add(v, DVar::constant({3, 2}, {1, 2, 3, 4, 5, 6})),
                  std::invalid_argument);
}

TEST_CASE("backward accumulates through a reused subexpression") {
  auto x = DVar::leaf({1}, {3.0});
  auto y = ad::mul(x, x);            // x^2
  auto z = ad::add(y, ad::scale(x, 2.0));  // x^2 + 2x
  ad::backward(z);
  CHECK(x.grad()[0] == doctest::Approx(2 * 3.0 + 2.0));
}

TEST_CASE("gradients add up until zeroed") {
  auto x = DVar::leaf({1}, {2.0});
  auto y = ad::square(x);
  ad::backward(y);
  ad::backward(y);
  CHECK(x.grad()[0] == doctest::Approx(8.0));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("no gradient flows into constants") {
  auto c = DVar::constant({2}, {1.0, 2.0});
  auto x = DVar::leaf({2}, {3.0, 4.0});
  auto out = ad::sum(ad::mul(c, x));
  ad::backward(out);
  CHECK(c.grad().empty());
  CHECK(x.grad()[0] == doctest::Approx(1.0));
  CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("masked_mean ignores masked entries and empty masks yield zero") {
  auto x = DVar::leaf({4}, {1.0, 2.0, 3.0, 4.0});
  std::vector<uint8_t> mask = {1, 0, 1, 0};
  auto m = ad::masked_mean(x, mask);
  CHECK(m.value()[0] == doctest::Approx(2.0));
  ad::backward(m);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[0] == doctest::Approx(0.5));

  std::vector<uint8_t> empty(4, 0);
  auto z = ad::masked_mean(x, empty);
  CHECK(z.value()[0] == 0.0);
}

TEST_CASE("softmax weights sum to one") {
  auto x = DVar::constant({4}, {0.1, -2.0, 1.3, 0.7});
  auto s = ad::softmax(x);
  double total = 0;
  for (double v : s.value()) {
    CHECK(v > 0);
    total += v;
  }
  CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("matmul against a hand computation") {
  auto a = DVar::constant({2, 2}, {1, 2, 3, 4});
  auto b = DVar::constant({2, 2}, {5, 6, 7, 8});
  auto c = ad::matmul(a, b);
  CHECK(c.value() == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("core op gradients match finite differences") {
  // A compact sanity pass; the full registry runs in the gradcheck suite.
  Rng rng(3);
  auto rnd = [&](int n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
  };
  auto r1 = gradcheck::check(
      "mix", {{2, 3}, {2, 3}},
      [](const std::vector<DVar>& in) {
        return ad::mean(ad::mul(ad::sigmoid(in[0]), ad::tanh_op(in[1])));
      },
      {rnd(6, -1, 1), rnd(6, -1, 1)});
  CHECK(r1.passed);

  auto r2 = gradcheck::check(
      "norm_chain", {{5}},
      [](const std::vector<DVar>& in) {
        return ad::sqrt_op(ad::add_const(ad::sum(ad::square(in[0])), 1e-3));
      },
      {rnd(5, -2, 2)});
  CHECK(r2.passed);
}
