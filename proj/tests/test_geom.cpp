#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ltmvo/geom.hpp"
#include "ltmvo/rng.hpp"

using namespace ltmvo;
using geom::SE3;
using geom::Twist;

namespace {

Twist random_twist(Rng& rng, double max_angle) {
  Twist t;
  Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  axis.normalize();
  t.rot = axis * rng.uniform(0.0, max_angle);
  t.trans = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
  return t;
}

geom::Intrinsics test_intrinsics() {
  geom::Intrinsics k;
  k.fx = k.fy = 100.0;
  k.cx = 32.0;
  k.cy = 24.0;
  k.width = 64;
  k.height = 48;
  return k;
}

}  // namespace

TEST_CASE("exp of zero twist is the identity") {
  const SE3 t = geom::se3_exp(Twist{});
  CHECK(t.rotation.isApprox(Eigen::Matrix3d::Identity(), 1e-15));
  CHECK(t.translation.norm() == 0.0);
}

TEST_CASE("exp of a quarter turn about z matches the closed form") {
  Twist xi;
  xi.rot = Eigen::Vector3d(0, 0, M_PI / 2);
  const SE3 t = geom::se3_exp(xi);
  Eigen::Matrix3d expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((t.rotation - expected).norm() < 1e-12);
  CHECK(t.translation.norm() == 0.0);
}

TEST_CASE("exp rejects non-finite twists") {
  Twist xi;
  xi.rot = Eigen::Vector3d(std::nan(""), 0, 0);
  CHECK_THROWS_AS(geom::se3_exp(xi), std::invalid_argument);
}

TEST_CASE("log of the identity is zero") {
  const Twist xi = geom::se3_log(SE3::identity());
  CHECK(xi.rot.norm() == 0.0);
  CHECK(xi.trans.norm() == 0.0);
}

TEST_CASE("log of a pure translation returns it unchanged") {
  SE3 t;
  t.translation = Eigen::Vector3d(1, 2, 3);
  const Twist xi = geom::se3_log(t);
  CHECK(xi.rot.norm() == 0.0);
  CHECK((xi.trans - Eigen::Vector3d(1, 2, 3)).norm() < 1e-15);
}

TEST_CASE("log rejects rotations at the angle cut") {
  Twist xi;
  xi.rot = Eigen::Vector3d(M_PI, 0, 0);
  const SE3 t = geom::se3_exp(xi);
  CHECK_THROWS_AS(geom::se3_log(t), std::domain_error);
}

TEST_CASE("exp/log round trip over 1000 random twists") {
  Rng rng(7);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const Twist xi = random_twist(rng, M_PI - 0.1);
    const SE3 t = geom::se3_exp(xi);
    CHECK(t.is_valid(1e-9));
    const Twist back = geom::se3_log(t);
    worst = std::max(worst, (back.rot - xi.rot).norm());
    worst = std::max(worst, (back.trans - xi.trans).norm());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("small-angle branch round trips too") {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const Twist xi = random_twist(rng, 1e-9);
    const Twist back = geom::se3_log(geom::se3_exp(xi));
    CHECK((back.rot - xi.rot).norm() < 1e-12);
    CHECK((back.trans - xi.trans).norm() < 1e-12);
  }
}

TEST_CASE("group axioms hold to 1e-12 on random elements") {
  Rng rng(13);
  for (int i = 0; i < 200; ++i) {
    const SE3 a = geom::se3_exp(random_twist(rng, 2.5));
    const SE3 b = geom::se3_exp(random_twist(rng, 2.5));
    const SE3 c = geom::se3_exp(random_twist(rng, 2.5));

    const SE3 ab_c = geom::se3_compose(geom::se3_compose(a, b), c);
    const SE3 a_bc = geom::se3_compose(a, geom::se3_compose(b, c));
    CHECK((ab_c.rotation - a_bc.rotation).norm() < 1e-12);
    CHECK((ab_c.translation - a_bc.translation).norm() < 1e-12);

    const SE3 id = geom::se3_compose(a, geom::se3_inverse(a));
    CHECK((id.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    CHECK(id.translation.norm() < 1e-12);

    const SE3 left_id = geom::se3_compose(SE3::identity(), a);
    CHECK((left_id.rotation - a.rotation).norm() == 0.0);
  }
}

TEST_CASE("identity transform yields the identity grid") {
  const auto k = test_intrinsics();
  std::vector<double> depth(static_cast<size_t>(k.width) * k.height, 3.0);
  const auto grid = geom::correspondence_grid(k, SE3::identity(), depth);
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      const size_t i = static_cast<size_t>(y) * k.width + x;
      CHECK(grid.x[i] == doctest::Approx(x).epsilon(1e-12));
      CHECK(grid.y[i] == doctest::Approx(y).epsilon(1e-12));
      CHECK(grid.valid[i] == 1);
    }
}

TEST_CASE("lateral translation shifts every pixel by fx*tx/Z") {
  const auto k = test_intrinsics();
  std::vector<double> depth(static_cast<size_t>(k.width) * k.height, 2.0);
  SE3 t;
  t.translation = Eigen::Vector3d(0.1, 0, 0);
  const auto grid = geom::correspondence_grid(k, t, depth);
  // A point translated +x in the target frame appears +fx*tx/Z pixels over;
  // the magnitude fx*tx/Z = 5 is the closed form, the sign follows the
  // frame-t -> frame-t+1 convention.
  double worst = 0;
  for (int y = 0; y < k.height; ++y)
    for (int x = 0; x < k.width; ++x) {
      const size_t i = static_cast<size_t>(y) * k.width + x;
      worst = std::max(worst, std::abs(grid.x[i] - x - 5.0));
      worst = std::max(worst, std::abs(grid.y[i] - y));
    }
  CHECK(worst < 1e-9);
}

TEST_CASE("pure rotation grids are depth invariant") {
  const auto k = test_intrinsics();
  Twist xi;
  xi.rot = Eigen::Vector3d(0.02, -0.03, 0.01);
  const SE3 rot = geom::se3_exp(xi);
  std::vector<double> d1(static_cast<size_t>(k.width) * k.height, 1.5);
  std::vector<double> d2(d1.size(), 40.0);
  const auto g1 = geom::correspondence_grid(k, rot, d1);
  const auto g2 = geom::correspondence_grid(k, rot, d2);
  double worst = 0;
  for (size_t i = 0; i < d1.size(); ++i) {
    worst = std::max(worst, std::abs(g1.x[i] - g2.x[i]));
    worst = std::max(worst, std::abs(g1.y[i] - g2.y[i]));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("non-positive depth marks pixels invalid without throwing") {
  const auto k = test_intrinsics();
  std::vector<double> depth(static_cast<size_t>(k.width) * k.height, 2.0);
  depth[5] = 0.0;
  depth[6] = -1.0;
  const auto grid = geom::correspondence_grid(k, SE3::identity(), depth);
  CHECK(grid.valid[5] == 0);
  CHECK(grid.valid[6] == 0);
  CHECK(grid.valid[7] == 1);
}

TEST_CASE("grid of a composition matches chaining through the induced depth") {
  // Depth-preserving first motions keep a fronto-parallel plane at constant
  // depth, so the chained second grid can be evaluated analytically.
  const auto k = test_intrinsics();
  const double d = 2.5;
  std::vector<double> depth(static_cast<size_t>(k.width) * k.height, d);

  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Twist a_xi;  // in-plane translation + roll about the optical axis
    a_xi.rot = Eigen::Vector3d(0, 0, rng.uniform(-0.05, 0.05));
    a_xi.trans = Eigen::Vector3d(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0);
    const SE3 a = geom::se3_exp(a_xi);
    const SE3 b = geom::se3_exp(random_twist(rng, 0.02));

    const auto grid_a = geom::correspondence_grid(k, a, depth);
    const auto grid_ba = geom::correspondence_grid(k, geom::se3_compose(b, a), depth);

    double worst = 0;
    for (int y = 0; y < k.height; ++y)
      for (int x = 0; x < k.width; ++x) {
        const size_t i = static_cast<size_t>(y) * k.width + x;
        if (!grid_a.valid[i] || !grid_ba.valid[i]) continue;
        // Analytic second hop from the continuous intermediate coordinate.
        const Eigen::Vector3d p = b.apply(d * k.ray(grid_a.x[i], grid_a.y[i]));
        if (!(p.z() > 0)) continue;
        const double u = k.fx * p.x() / p.z() + k.cx;
        const double v = k.fy * p.y() / p.z() + k.cy;
        worst = std::max(worst, std::abs(u - grid_ba.x[i]));
        worst = std::max(worst, std::abs(v - grid_ba.y[i]));
      }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("intrinsics validation") {
  auto k = test_intrinsics();
  k.fx = 0;
  CHECK_THROWS_AS(k.validate(), std::invalid_argument);
  k = test_intrinsics();
  k.cx = 64;
  CHECK_THROWS_AS(k.validate(), std::invalid_argument);
}
