#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "ltmvo/image.hpp"
#include "ltmvo/image_ops.hpp"
#include "ltmvo/rng.hpp"

using namespace ltmvo;
using DVar = ad::Var<double>;

namespace {

DVar random_image(Rng& rng, int c, int h, int w, double lo = 0.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(c) * h * w);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return DVar::constant({c, h, w}, v);
}

DVar identity_grid(int h, int w) {
  std::vector<double> g(2 * static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      g[static_cast<size_t>(y) * w + x] = x;
      g[static_cast<size_t>(h) * w + static_cast<size_t>(y) * w + x] = y;
    }
  return DVar::constant({2, h * w}, g);
}

}  // namespace

TEST_CASE("sampling at the identity grid reproduces the source exactly") {
  Rng rng(1);
  auto src = random_image(rng, 2, 5, 7);
  auto out = img::bilinear_sample(src, identity_grid(5, 7));
  CHECK(out.values.value() == src.value());
  for (uint8_t m : out.valid) CHECK(m == 1);
}

TEST_CASE("sampling a ramp halfway between pixels averages the neighbors") {
  const int w = 8;
  std::vector<double> ramp(w);
  for (int x = 0; x < w; ++x) ramp[x] = static_cast<double>(x) / (w - 1);
  auto src = DVar::constant({1, 1, w}, ramp);
  auto grid = DVar::constant({2, 1}, {2.5, 0.0});
  auto out = img::bilinear_sample(src, grid);
  CHECK(out.values.value()[0] == doctest::Approx(0.5 * (ramp[2] + ramp[3])));
}

TEST_CASE("out-of-range coordinates yield zero and an invalid bit") {
  Rng rng(2);
  auto src = random_image(rng, 1, 4, 4);
  auto grid = DVar::constant({2, 3}, {-3.0, 1.0, 3.2, -3.0, 1.0, 1.0});
  auto out = img::bilinear_sample(src, grid);
  CHECK(out.valid[0] == 0);
  CHECK(out.values.value()[0] == 0.0);
  CHECK(out.valid[1] == 1);
  CHECK(out.valid[2] == 0);
}

TEST_CASE("samples stay inside the hull of the four neighbors") {
  Rng rng(3);
  auto src = random_image(rng, 1, 6, 6);
  const int n = 200;
  std::vector<double> g(2 * n);
  for (int i = 0; i < n; ++i) {
    g[i] = rng.uniform(0.0, 5.0);
    g[n + i] = rng.uniform(0.0, 5.0);
  }
  auto out = img::bilinear_sample(src, DVar::constant({2, n}, g));
  for (int i = 0; i < n; ++i) {
    const int x0 = std::min(static_cast<int>(g[i]), 4);
    const int y0 = std::min(static_cast<int>(g[n + i]), 4);
    double lo = 2, hi = -2;
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double v = src.value()[(y0 + dy) * 6 + x0 + dx];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    CHECK(out.values.value()[i] >= lo - 1e-12);
    CHECK(out.values.value()[i] <= hi + 1e-12);
  }
}

TEST_CASE("ssim of an image with itself is one") {
  Rng rng(4);
  auto a = random_image(rng, 2, 6, 7);
  auto m = img::ssim_map(a, a);
  for (double v : m.value()) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("ssim of two constants matches the closed form everywhere") {
  auto a = DVar::constant({1, 5, 6}, std::vector<double>(30, 0.2));
  auto b = DVar::constant({1, 5, 6}, std::vector<double>(30, 0.8));
  const double c1 = 1e-4;
  const double expected = (2 * 0.2 * 0.8 + c1) / (0.04 + 0.64 + c1);
  auto m = img::ssim_map(a, b);
  for (double v : m.value()) CHECK(v == doctest::Approx(expected).epsilon(1e-9));
  CHECK(expected == doctest::Approx(0.4707).epsilon(1e-3));
}

TEST_CASE("ssim is symmetric") {
  Rng rng(5);
  auto a = random_image(rng, 1, 6, 6);
  auto b = random_image(rng, 1, 6, 6);
  auto ab = img::ssim_map(a, b);
  auto ba = img::ssim_map(b, a);
  for (size_t i = 0; i < ab.value().size(); ++i)
    CHECK(ab.value()[i] == doctest::Approx(ba.value()[i]).epsilon(1e-9));
}

TEST_CASE("ssim rejects shape mismatches") {
  Rng rng(6);
  auto a = random_image(rng, 1, 6, 6);
  auto b = random_image(rng, 1, 5, 6);
  CHECK_THROWS_AS(img::ssim_map(a, b), std::invalid_argument);
}

TEST_CASE("gradients of a constant image vanish") {
  auto a = DVar::constant({1, 4, 5}, std::vector<double>(20, 0.33));
  auto [gx, gy] = img::image_gradients(a);
  for (double v : gx.value()) CHECK(v == 0.0);
  for (double v : gy.value()) CHECK(v == 0.0);
}

TEST_CASE("gradients of a ramp are constant except the zero last column") {
  const int w = 6, h = 3;
  std::vector<double> ramp(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) ramp[static_cast<size_t>(y) * w + x] = x / double(w - 1);
  auto [gx, gy] = img::image_gradients(DVar::constant({1, h, w}, ramp));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = gx.value()[static_cast<size_t>(y) * w + x];
      if (x == w - 1)
        CHECK(v == 0.0);
      else
        CHECK(v == doctest::Approx(1.0 / (w - 1)));
    }
}

TEST_CASE("checkerboard gradients have unit magnitude in the interior") {
  const int n = 6;
  std::vector<double> board(n * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) board[y * n + x] = (x + y) % 2;
  auto [gx, gy] = img::image_gradients(DVar::constant({1, n, n}, board));
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n - 1; ++x)
      CHECK(std::abs(gx.value()[y * n + x]) == doctest::Approx(1.0));
}

TEST_CASE("image_gradients rejects degenerate sizes") {
  auto tiny = DVar::constant({1, 1, 5}, std::vector<double>(5, 0.0));
  CHECK_THROWS_AS(img::image_gradients(tiny), std::invalid_argument);
}

TEST_CASE("png round trip through 8-bit quantization") {
  Rng rng(7);
  img::Image im(9, 11, 3);
  for (auto& v : im.data) v = static_cast<float>(rng.uniform());
  const auto path = std::filesystem::temp_directory_path() / "ltmvo_png_test.png";
  img::write_png(path.string(), im);
  const img::Image back = img::read_png(path.string());
  REQUIRE(back.width == im.width);
  REQUIRE(back.height == im.height);
  REQUIRE(back.channels == 3);
  for (size_t i = 0; i < im.data.size(); ++i)
    CHECK(std::abs(back.data[i] - im.data[i]) <= 0.5f / 255.f + 1e-6f);
  // A second write of the decoded image is byte-stable.
  const auto path2 = std::filesystem::temp_directory_path() / "ltmvo_png_test2.png";
  img::write_png(path2.string(), back);
  const img::Image back2 = img::read_png(path2.string());
  CHECK(back2.data == back.data);
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}
