#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ltmvo/data.hpp"
#include "ltmvo/losses.hpp"
#include "ltmvo/rng.hpp"

using namespace ltmvo;
using DVar = ad::Var<double>;

namespace {

DVar image_var(const img::Image& im) { return im.to_var<double>(); }

DVar depth_var(const std::vector<double>& d, int h, int w) {
  return DVar::constant({1, h, w}, d);
}

DVar pose_var(const geom::SE3& p) { return pose::pose_from<double>(p); }

/// T_{a->b} from world-from-camera poses.
geom::SE3 between(const geom::SE3& world_from_a, const geom::SE3& world_from_b) {
  return geom::se3_compose(geom::se3_inverse(world_from_b), world_from_a);
}

data::SynthConfig small_synth(int frames, uint64_t seed) {
  data::SynthConfig cfg;
  cfg.frame_count = frames;
  cfg.width = 64;
  cfg.height = 48;
  cfg.seed = seed;
  return cfg;
}

struct GtSnippet {
  std::vector<DVar> frames;
  std::vector<DVar> depths;
  std::vector<DVar> rel_poses;  // t -> t+1
  std::vector<DVar> abs_poses;  // 0 -> t
  geom::Intrinsics K;
};

GtSnippet gt_snippet(const data::Sequence& seq, int start, int n) {
  GtSnippet s;
  s.K = seq.intrinsics;
  const auto& gt = seq.gt_trajectory->poses;
  for (int t = 0; t < n; ++t) {
    s.frames.push_back(image_var(seq.frames[start + t]));
    s.depths.push_back(
        depth_var(seq.gt_depths[start + t], seq.intrinsics.height, seq.intrinsics.width));
    if (t > 0) {
      s.rel_poses.push_back(
          pose_var(between(gt[start + t - 1].second, gt[start + t].second)));
      s.abs_poses.push_back(pose_var(between(gt[start].second, gt[start + t].second)));
    }
  }
  return s;
}

geom::SE3 perturb_rotation(const geom::SE3& p, double angle, Rng& rng) {
  geom::Twist xi;
  xi.rot = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized() * angle;
  return geom::se3_compose(geom::se3_exp(xi), p);
}

}  // namespace

TEST_CASE("rho vanishes for identical images") {
  Rng rng(1);
  std::vector<double> v(5 * 6);
  for (auto& x : v) x = rng.uniform(0.1, 0.9);
  auto a = DVar::constant({1, 5, 6}, v);
  auto r = losses::rho(a, a);
  CHECK(r.value.value()[0] == 0.0);
  CHECK_FALSE(r.empty_warning);
}

TEST_CASE("rho with alpha=0 reduces to the plain L2 distance") {
  auto a = DVar::constant({1, 4, 4}, std::vector<double>(16, 0.2));
  auto b = DVar::constant({1, 4, 4}, std::vector<double>(16, 0.5));
  auto map = losses::rho_map(a, b, 0.0);
  for (double v : map.value()) CHECK(v == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("rho is symmetric") {
  Rng rng(2);
  std::vector<double> va(24), vb(24);
  for (auto& x : va) x = rng.uniform(0, 1);
  for (auto& x : vb) x = rng.uniform(0, 1);
  auto a = DVar::constant({1, 4, 6}, va);
  auto b = DVar::constant({1, 4, 6}, vb);
  CHECK(losses::rho(a, b).value.value()[0] ==
        doctest::Approx(losses::rho(b, a).value.value()[0]).epsilon(1e-9));
}

TEST_CASE("rho reports an empty valid set as zero with a warning") {
  auto a = DVar::constant({1, 2, 2}, {0.1, 0.2, 0.3, 0.4});
  auto r = losses::rho(a, a, std::vector<uint8_t>(4, 0));
  CHECK(r.value.value()[0] == 0.0);
  CHECK(r.empty_warning);
}

TEST_CASE("static scene and camera auto-masks every pixel to zero loss") {
  Rng rng(3);
  std::vector<double> v(48 * 64);
  for (auto& x : v) x = rng.uniform(0.2, 0.8);
  auto frame = DVar::constant({1, 48, 64}, v);
  std::vector<DVar> frames = {frame, frame, frame};
  std::vector<DVar> depths(3, DVar::constant({1, 48, 64}, std::vector<double>(48 * 64, 2.0)));
  std::vector<DVar> rels(2, pose::identity_pose<double>());
  geom::Intrinsics k;
  k.fx = k.fy = 60;
  k.cx = 32;
  k.cy = 24;
  k.width = 64;
  k.height = 48;
  auto loss = losses::appearance_loss<double>(frames, depths, rels, k);
  CHECK(loss.value.value()[0] == 0.0);
  CHECK(loss.empty_warning);
}

TEST_CASE("ground-truth inputs drive the warp losses below 1e-3") {
  const auto seq = data::synth_generate(small_synth(9, 41));
  const auto snip = gt_snippet(seq, 1, 7);

  auto app = losses::appearance_loss<double>(snip.frames, snip.depths, snip.rel_poses, snip.K);
  CHECK_FALSE(app.empty_warning);
  CHECK(app.value.value()[0] < 1e-3);

  auto abs_app =
      losses::abs_appearance_loss<double>(snip.frames, snip.depths[0], snip.abs_poses, snip.K);
  CHECK_FALSE(abs_app.empty_warning);
  CHECK(abs_app.value.value()[0] < 1e-3);

  CHECK(losses::cycle_loss(snip.rel_poses, snip.abs_poses).value()[0] < 1e-18);
}

TEST_CASE("pose perturbation strictly increases the warp losses") {
  const auto seq = data::synth_generate(small_synth(9, 43));
  Rng rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    const auto snip = gt_snippet(seq, trial, 7);
    const double base_app =
        losses::appearance_loss<double>(snip.frames, snip.depths, snip.rel_poses, snip.K)
            .value.value()[0];
    const double base_abs =
        losses::abs_appearance_loss<double>(snip.frames, snip.depths[0], snip.abs_poses, snip.K)
            .value.value()[0];

    auto rels = snip.rel_poses;
    rels[0] = pose_var(perturb_rotation(pose::pose_to_se3(rels[0]), 0.05, rng));
    auto abss = snip.abs_poses;
    abss[2] = pose_var(perturb_rotation(pose::pose_to_se3(abss[2]), 0.05, rng));

    CHECK(losses::appearance_loss<double>(snip.frames, snip.depths, rels, snip.K)
              .value.value()[0] > base_app);
    CHECK(losses::abs_appearance_loss<double>(snip.frames, snip.depths[0], abss, snip.K)
              .value.value()[0] > base_abs);
  }
}

TEST_CASE("smoothness of a constant depth is zero") {
  auto depth = DVar::constant({1, 6, 8}, std::vector<double>(48, 3.0));
  Rng rng(6);
  std::vector<double> iv(48);
  for (auto& x : iv) x = rng.uniform(0, 1);
  auto image = DVar::constant({1, 6, 8}, iv);
  CHECK(losses::smoothness_loss(depth, image).value()[0] == doctest::Approx(0.0));
}

TEST_CASE("smoothness is invariant to depth scale") {
  Rng rng(7);
  std::vector<double> dv(48), iv(48);
  for (auto& x : dv) x = rng.uniform(1.0, 4.0);
  for (auto& x : iv) x = rng.uniform(0, 1);
  auto image = DVar::constant({1, 6, 8}, iv);
  auto d1 = DVar::constant({1, 6, 8}, dv);
  for (auto& x : dv) x *= 7.3;
  auto d2 = DVar::constant({1, 6, 8}, dv);
  CHECK(losses::smoothness_loss(d1, image).value()[0] ==
        doctest::Approx(losses::smoothness_loss(d2, image).value()[0]).epsilon(1e-6));
}

TEST_CASE("image edges damp the smoothness penalty") {
  const int h = 6, w = 8;
  std::vector<double> ramp_disp(h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) ramp_disp[y * w + x] = 1.0 / (1.0 + 0.2 * x);
  auto depth = DVar::constant({1, h, w}, ramp_disp);
  auto flat = DVar::constant({1, h, w}, std::vector<double>(h * w, 0.5));
  std::vector<double> edges(h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) edges[y * w + x] = x % 2 ? 1.0 : 0.0;
  auto contrast = DVar::constant({1, h, w}, edges);
  CHECK(losses::smoothness_loss(depth, flat).value()[0] >
        losses::smoothness_loss(depth, contrast).value()[0]);
}

TEST_CASE("cycle loss is zero on an exact chain") {
  Rng rng(8);
  std::vector<DVar> rels, abss;
  geom::SE3 chain = geom::SE3::identity();
  for (int t = 0; t < 5; ++t) {
    geom::Twist xi;
    xi.rot = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()) * 0.1;
    xi.trans = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    const auto rel = geom::se3_exp(xi);
    chain = geom::se3_compose(rel, chain);
    rels.push_back(pose_var(rel));
    abss.push_back(pose_var(chain));
  }
  CHECK(losses::cycle_loss(rels, abss).value()[0] < 1e-24);
}

TEST_CASE("cycle loss closed form for a single perturbed entry") {
  geom::Twist xi;
  xi.rot = Eigen::Vector3d(0.2, -0.1, 0.3);
  xi.trans = Eigen::Vector3d(0.5, 0.2, -0.4);
  const auto r1 = geom::se3_exp(xi);
  xi.rot = Eigen::Vector3d(-0.3, 0.2, 0.1);
  const auto r2 = geom::se3_exp(xi);

  // N=3: two relative poses, exact chain, then +0.1 on one translation
  // component of the second anchor-to-frame pose.
  std::vector<DVar> rels = {pose_var(r1), pose_var(r2)};
  auto abs2 = geom::se3_compose(r2, r1);
  abs2.translation.y() += 0.1;
  std::vector<DVar> abss = {pose_var(r1), pose_var(abs2)};
  CHECK(losses::cycle_loss(rels, abss).value()[0] == doctest::Approx(0.005).epsilon(1e-9));
}

TEST_CASE("cycle loss with N=2 and equal poses is zero") {
  geom::Twist xi;
  xi.rot = Eigen::Vector3d(0.1, 0.2, -0.1);
  xi.trans = Eigen::Vector3d(1, 2, 3);
  const auto t = geom::se3_exp(xi);
  std::vector<DVar> rels = {pose_var(t)};
  std::vector<DVar> abss = {pose_var(t)};
  CHECK(losses::cycle_loss(rels, abss).value()[0] < 1e-28);
}

TEST_CASE("cycle loss rejects mismatched arity") {
  std::vector<DVar> rels = {pose::identity_pose<double>()};
  std::vector<DVar> abss;
  CHECK_THROWS_AS(losses::cycle_loss(rels, abss), std::invalid_argument);
}

TEST_CASE("full loss decomposition identity holds") {
  const auto seq = data::synth_generate(small_synth(9, 47));
  const auto snip = gt_snippet(seq, 0, 7);
  auto app = losses::appearance_loss<double>(snip.frames, snip.depths, snip.rel_poses, snip.K);
  auto smooth = losses::smoothness_loss(snip.depths[1], snip.frames[1]);
  auto abs_app =
      losses::abs_appearance_loss<double>(snip.frames, snip.depths[0], snip.abs_poses, snip.K);
  auto cyc = losses::cycle_loss(snip.rel_poses, snip.abs_poses);
  auto full = losses::full_loss(app, smooth, abs_app, cyc);

  CHECK(full.breakdown.lambda1 == 0.001);
  CHECK(full.breakdown.lambda2 == 0.001);
  const double rebuilt = full.breakdown.appearance +
                         full.breakdown.lambda1 * full.breakdown.smoothness +
                         full.breakdown.appearance_abs +
                         full.breakdown.lambda2 * full.breakdown.cycle;
  CHECK(full.breakdown.total == doctest::Approx(rebuilt).epsilon(1e-6));
  CHECK(full.breakdown.appearance >= 0);
  CHECK(full.breakdown.smoothness >= 0);
  CHECK(full.breakdown.appearance_abs >= 0);
  CHECK(full.breakdown.cycle >= 0);

  auto zero = losses::full_loss(losses::MaskedLoss<double>{DVar::scalar(0.0), false},
                                DVar::scalar(0.0),
                                losses::MaskedLoss<double>{DVar::scalar(0.0), false},
                                DVar::scalar(0.0));
  CHECK(zero.breakdown.total == 0.0);
}

TEST_CASE("abs appearance with two frames reduces to a single rho term") {
  const auto seq = data::synth_generate(small_synth(4, 53));
  const auto snip = gt_snippet(seq, 0, 2);
  auto loss = losses::abs_appearance_loss<double>(snip.frames, snip.depths[0],
                                                  snip.abs_poses, snip.K);
  auto direct = losses::synthesize_view(snip.frames[1], snip.K, snip.abs_poses[0],
                                        snip.depths[0]);
  auto term = losses::rho<double>(snip.frames[0], direct.image, direct.valid);
  CHECK(loss.value.value()[0] == doctest::Approx(term.value.value()[0]).epsilon(1e-12));
}

TEST_CASE("long loss window arithmetic and snippet collapse") {
  // M(N-1)+1 frames with N=7, M=16 is the 97-frame window.
  CHECK(16 * (7 - 1) + 1 == 97);

  const auto seq = data::synth_generate(small_synth(8, 59));
  const auto snip = gt_snippet(seq, 0, 7);
  std::vector<std::vector<DVar>> abs = {snip.abs_poses};
  std::vector<DVar> anchors = {snip.depths[0]};
  auto ll = losses::long_loss<double>(snip.frames, anchors, abs, snip.K, 7, 1);
  auto direct =
      losses::abs_appearance_loss<double>(snip.frames, snip.depths[0], snip.abs_poses, snip.K);
  CHECK(ll.value.value()[0] == doctest::Approx(direct.value.value()[0]).epsilon(1e-12));

  CHECK_THROWS_AS(losses::long_loss<double>(snip.frames, anchors, abs, snip.K, 7, 2),
                  std::invalid_argument);
}

TEST_CASE("long loss on a full ground-truth sequence is small") {
  const auto seq = data::synth_generate(small_synth(97, 61));
  const int n = 7, m = 16;
  std::vector<DVar> frames;
  for (const auto& f : seq.frames) frames.push_back(image_var(f));
  const auto& gt = seq.gt_trajectory->poses;
  std::vector<std::vector<DVar>> abs(m);
  std::vector<DVar> anchors;
  for (int s = 0; s < m; ++s) {
    const int a = s * (n - 1);
    anchors.push_back(depth_var(seq.gt_depths[a], seq.intrinsics.height, seq.intrinsics.width));
    for (int k = 1; k < n; ++k)
      abs[s].push_back(pose_var(between(gt[a].second, gt[a + k].second)));
  }
  auto ll = losses::long_loss<double>(frames, anchors, abs, seq.intrinsics, n, m);
  CHECK_FALSE(ll.empty_warning);
  CHECK(ll.value.value()[0] < 1e-3);
}
