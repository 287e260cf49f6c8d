#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ltmvo/geom.hpp"
#include "ltmvo/pose_ops.hpp"
#include "ltmvo/rng.hpp"

using namespace ltmvo;
using DVar = ad::Var<double>;

namespace {

geom::Twist random_twist(Rng& rng, double angle, double trans) {
  geom::Twist t;
  t.rot = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized() *
          rng.uniform(0, angle);
  t.trans = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()) * trans;
  return t;
}

DVar twist_var(const geom::Twist& t) {
  return DVar::constant({6}, {t.rot.x(), t.rot.y(), t.rot.z(), t.trans.x(), t.trans.y(),
                              t.trans.z()});
}

}  // namespace

TEST_CASE("in-graph exponential matches the analytic one") {
  Rng rng(21);
  for (int i = 0; i < 100; ++i) {
    const auto xi = random_twist(rng, 2.8, 1.5);
    const geom::SE3 ref = geom::se3_exp(xi);
    const geom::SE3 got = pose::pose_to_se3(pose::se3_exp_mat(twist_var(xi)));
    CHECK((got.rotation - ref.rotation).norm() < 1e-12);
    CHECK((got.translation - ref.translation).norm() < 1e-12);
  }
}

TEST_CASE("in-graph exponential matches on the small-angle branch") {
  Rng rng(22);
  for (int i = 0; i < 50; ++i) {
    const auto xi = random_twist(rng, 1e-9, 1.0);
    const geom::SE3 ref = geom::se3_exp(xi);
    const geom::SE3 got = pose::pose_to_se3(pose::se3_exp_mat(twist_var(xi)));
    CHECK((got.rotation - ref.rotation).norm() < 1e-14);
    CHECK((got.translation - ref.translation).norm() < 1e-14);
  }
}

TEST_CASE("in-graph compose and inverse match the analytic group ops") {
  Rng rng(23);
  for (int i = 0; i < 50; ++i) {
    const auto a = geom::se3_exp(random_twist(rng, 2.0, 1.0));
    const auto b = geom::se3_exp(random_twist(rng, 2.0, 1.0));
    const auto ab_ref = geom::se3_compose(a, b);
    const auto ab = pose::pose_to_se3(pose::pose_compose(pose::pose_from<double>(a),
                                                         pose::pose_from<double>(b)));
    CHECK((ab.rotation - ab_ref.rotation).norm() < 1e-12);
    CHECK((ab.translation - ab_ref.translation).norm() < 1e-12);

    const auto inv_ref = geom::se3_inverse(a);
    const auto inv = pose::pose_to_se3(pose::pose_inverse(pose::pose_from<double>(a)));
    CHECK((inv.rotation - inv_ref.rotation).norm() < 1e-12);
    CHECK((inv.translation - inv_ref.translation).norm() < 1e-12);
  }
}

TEST_CASE("in-graph correspondence matches the analytic grid") {
  geom::Intrinsics k;
  k.fx = k.fy = 80.0;
  k.cx = 16.0;
  k.cy = 12.0;
  k.width = 32;
  k.height = 24;

  Rng rng(24);
  for (int trial = 0; trial < 10; ++trial) {
    const auto xi = random_twist(rng, 0.03, 0.08);
    const geom::SE3 pose_se3 = geom::se3_exp(xi);
    std::vector<double> depth(static_cast<size_t>(k.width) * k.height);
    for (auto& d : depth) d = rng.uniform(2.0, 4.0);

    const auto ref = geom::correspondence_grid(k, pose_se3, depth);
    auto grid = pose::correspondence_grid(
        k, pose::pose_from<double>(pose_se3),
        DVar::constant({k.width * k.height}, depth));

    const int n = k.width * k.height;
    for (int i = 0; i < n; ++i) {
      CHECK(grid.valid[i] == ref.valid[i]);
      if (!ref.valid[i]) continue;
      CHECK(grid.grid.value()[i] == doctest::Approx(ref.x[i]).epsilon(1e-12));
      CHECK(grid.grid.value()[n + i] == doctest::Approx(ref.y[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("points behind the camera are marked invalid and get no gradient") {
  geom::Intrinsics k;
  k.fx = k.fy = 50.0;
  k.cx = 8.0;
  k.cy = 8.0;
  k.width = 16;
  k.height = 16;
  auto pts = DVar::leaf({3, 2}, {0.1, 0.2, 0.1, 0.2, 2.0, -1.0});
  auto out = pose::pinhole_project(pts, k);
  CHECK(out.valid[0] == 1);
  CHECK(out.valid[1] == 0);
  CHECK(out.grid.value()[1] == -1.0);
  ad::backward(ad::sum(out.grid));
  CHECK(pts.grad()[5] == 0.0);  // z of the rejected point
  CHECK(pts.grad()[4] != 0.0);
}
