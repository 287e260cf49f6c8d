#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ltmvo/nn.hpp"

using namespace ltmvo;
using DVar = ad::Var<double>;

TEST_CASE("1x1 identity kernel with zero bias passes the input through") {
  auto x = DVar::constant({1, 3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  auto w = DVar::constant({1, 1, 1, 1}, {1.0});
  auto b = DVar::constant({1}, {0.0});
  auto y = nn::conv2d(x, w, b, 1, 0);
  CHECK(y.value() == x.value());
}

TEST_CASE("stride-2 conv output size is ceil(input/2)") {
  for (int h : {5, 6, 47, 48}) {
    auto x = DVar::constant({1, h, h}, std::vector<double>(h * h, 0.5));
    auto w = DVar::constant({2, 1, 3, 3}, std::vector<double>(18, 0.1));
    auto b = DVar::constant({2}, {0.0, 0.0});
    auto y = nn::conv2d(x, w, b, 2, 1);
    CHECK(y.shape()[1] == (h + 1) / 2);
  }
}

TEST_CASE("conv2d shape errors name the op") {
  auto x = DVar::constant({2, 4, 4}, std::vector<double>(32, 0.0));
  auto w = DVar::constant({1, 3, 3, 3}, std::vector<double>(27, 0.0));
  auto b = DVar::constant({1}, {0.0});
  CHECK_THROWS_WITH_AS(nn::conv2d(x, w, b, 1, 1),
                       doctest::Contains("conv2d: channel mismatch"),
                       std::invalid_argument);
}

TEST_CASE("relu forward") {
  auto x = DVar::constant({2}, {-1.0, 2.0});
  auto y = ad::relu(x);
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == 2.0);
}

TEST_CASE("pooling and upsampling shapes") {
  auto x = DVar::constant({2, 6, 8}, std::vector<double>(96, 1.0));
  auto p = nn::avg_pool2(x);
  CHECK(p.shape() == ad::Shape{2, 3, 4});
  for (double v : p.value()) CHECK(v == doctest::Approx(1.0));
  auto g = nn::global_avg_pool(x);
  CHECK(g.shape() == ad::Shape{2});
  auto u = nn::upsample2x(p);
  CHECK(u.shape() == ad::Shape{2, 6, 8});
  auto cropped = nn::upsample2x(p, 5, 7);
  CHECK(cropped.shape() == ad::Shape{2, 5, 7});
}

TEST_CASE("ConvLSTM with zero weights and state outputs zero") {
  const int hc = 3, h = 4, w = 5;
  auto x = DVar::constant({2, h, w}, std::vector<double>(2 * h * w, 0.7));
  auto gw = DVar::constant({4 * hc, 2 + hc, 3, 3}, std::vector<double>(4 * hc * 5 * 9, 0.0));
  auto gb = DVar::constant({4 * hc}, std::vector<double>(4 * hc, 0.0));
  auto state = nn::conv_lstm_zero_state<double>(hc, h, w);
  auto [out, next] = nn::conv_lstm_step(x, state, gw, gb);
  for (double v : out.value()) CHECK(v == 0.0);
}

TEST_CASE("ConvLSTM hidden state stays within tanh range") {
  Rng rng(5);
  const int hc = 2, h = 3, w = 3;
  auto gw = nn::kaiming_uniform<double>({4 * hc, 1 + hc, 3, 3}, (1 + hc) * 9, rng);
  auto gb = nn::zeros_leaf<double>({4 * hc});
  auto state = nn::conv_lstm_zero_state<double>(hc, h, w);
  for (int step = 0; step < 20; ++step) {
    std::vector<double> xv(h * w);
    for (auto& v : xv) v = rng.uniform(-3, 3);
    auto x = DVar::constant({1, h, w}, xv);
    auto [out, next] = nn::conv_lstm_step(x, state, gw, gb);
    state = next;
    for (double v : out.value()) CHECK(std::abs(v) <= 1.0);
  }
}

TEST_CASE("ConvLSTM output depends on the initial state") {
  Rng rng(9);
  const int hc = 2, h = 3, w = 3;
  auto gw = nn::kaiming_uniform<double>({4 * hc, 1 + hc, 3, 3}, (1 + hc) * 9, rng);
  auto gb = nn::zeros_leaf<double>({4 * hc});
  std::vector<double> xv(h * w);
  for (auto& v : xv) v = rng.uniform(-1, 1);
  auto x = DVar::constant({1, h, w}, xv);

  auto zero = nn::conv_lstm_zero_state<double>(hc, h, w);
  std::vector<double> hv(hc * h * w);
  for (auto& v : hv) v = rng.uniform(-0.5, 0.5);
  nn::ConvLstmState<double> other{DVar::constant({hc, h, w}, hv),
                                  DVar::constant({hc, h, w}, hv)};
  auto [o1, s1] = nn::conv_lstm_step(x, zero, gw, gb);
  auto [o2, s2] = nn::conv_lstm_step(x, other, gw, gb);
  double diff = 0;
  for (size_t i = 0; i < o1.value().size(); ++i)
    diff = std::max(diff, std::abs(o1.value()[i] - o2.value()[i]));
  CHECK(diff > 1e-6);
}

TEST_CASE("Adam leaves parameters unchanged under zero gradients") {
  std::vector<std::pair<std::string, DVar>> params;
  params.emplace_back("w", DVar::leaf({3}, {1.0, -2.0, 0.5}));
  params[0].second.zero_grad();
  nn::AdamState<double> state;
  nn::adam_step(params, state, 0.1);
  CHECK(params[0].second.value() == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("Adam first step moves by about -lr*sign(g)") {
  std::vector<std::pair<std::string, DVar>> params;
  params.emplace_back("w", DVar::leaf({1}, {0.3}));
  params[0].second.mutable_grad() = {0.7};
  nn::AdamState<double> state;
  nn::adam_step(params, state, 0.01);
  CHECK(params[0].second.value()[0] == doctest::Approx(0.3 - 0.01).epsilon(1e-4));
}

TEST_CASE("Adam drives a quadratic bowl to zero") {
  std::vector<std::pair<std::string, DVar>> params;
  params.emplace_back("w", DVar::leaf({1}, {1.5}));
  nn::AdamState<double> state;
  double prev = std::abs(params[0].second.value()[0]);
  int non_monotone_after_warmup = 0;
  for (int step = 1; step <= 500; ++step) {
    const double w = params[0].second.value()[0];
    params[0].second.mutable_grad() = {2.0 * w};
    nn::adam_step(params, state, 0.05);
    params[0].second.zero_grad();
    const double cur = std::abs(params[0].second.value()[0]);
    if (step > 50 && cur > prev + 1e-12) ++non_monotone_after_warmup;
    prev = cur;
  }
  CHECK(std::abs(params[0].second.value()[0]) < 1e-3);
  CHECK(non_monotone_after_warmup < 200);  // oscillation near 0 allowed, divergence not
}

TEST_CASE("Adam errors on a missing gradient, naming the parameter") {
  std::vector<std::pair<std::string, DVar>> params;
  params.emplace_back("depth.enc1.w", DVar::constant({2}, {0.0, 0.0}));
  nn::AdamState<double> state;
  CHECK_THROWS_WITH_AS(nn::adam_step(params, state, 0.1),
                       doctest::Contains("depth.enc1.w"), std::invalid_argument);
}

TEST_CASE("gradient clipping caps the global norm") {
  std::vector<std::pair<std::string, DVar>> params;
  params.emplace_back("a", DVar::leaf({2}, {0.0, 0.0}));
  params[0].second.mutable_grad() = {30.0, 40.0};
  const double before = nn::clip_grad_norm(params, 10.0);
  CHECK(before == doctest::Approx(50.0));
  const auto& g = params[0].second.grad();
  CHECK(std::hypot(g[0], g[1]) == doctest::Approx(10.0));
}

TEST_CASE("ParamSet rejects duplicates and keeps order") {
  nn::ParamSet<double> ps;
  ps.add("b", DVar::leaf({1}, {0.0}));
  ps.add("a", DVar::leaf({1}, {0.0}));
  CHECK_THROWS_AS(ps.add("a", DVar::leaf({1}, {0.0})), std::invalid_argument);
  std::vector<std::string> order;
  for (auto& [name, p] : ps) order.push_back(name);
  CHECK(order == std::vector<std::string>{"b", "a"});
}
