#include "ltmvo/gradcheck.hpp"

#include "ltmvo/image_ops.hpp"
#include "ltmvo/losses.hpp"
#include "ltmvo/model.hpp"
#include "ltmvo/nn.hpp"
#include "ltmvo/pose_ops.hpp"

namespace ltmvo::gradcheck {

namespace {

using V = DVar;

std::vector<double> rand_vec(Rng& rng, int64_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

/// Values bounded away from zero on both sides (for abs/relu/min kinks).
std::vector<double> rand_signed(Rng& rng, int64_t n, double margin = 0.1) {
  std::vector<double> v(n);
  for (auto& x : v) {
    x = rng.uniform(margin, 1.0);
    if (rng.uniform() < 0.5) x = -x;
  }
  return v;
}

/// Scalar probe: inner product with fixed pseudo-random weights.
V probe(const V& out, uint64_t salt = 1) {
  Rng rng(0x9e37 + salt);
  auto w = V::constant(out.shape(), rand_vec(rng, out.size(), -1.0, 1.0));
  return ad::sum(ad::mul(out, w));
}

geom::Intrinsics small_intrinsics(int w, int h) {
  geom::Intrinsics k;
  k.fx = k.fy = 20.0;
  k.cx = w / 2.0;
  k.cy = h / 2.0;
  k.width = w;
  k.height = h;
  return k;
}

/// Random twists small enough that warped grids stay interior.
std::vector<double> rand_twist(Rng& rng, double rot_mag, double trans_mag) {
  return {rng.uniform(-rot_mag, rot_mag),   rng.uniform(-rot_mag, rot_mag),
          rng.uniform(-rot_mag, rot_mag),   rng.uniform(-trans_mag, trans_mag),
          rng.uniform(-trans_mag, trans_mag), rng.uniform(-trans_mag, trans_mag)};
}

std::vector<double> smooth_image(Rng& rng, int c, int h, int w) {
  std::vector<double> img(static_cast<size_t>(c) * h * w);
  for (int ic = 0; ic < c; ++ic) {
    const double ax = rng.uniform(0.2, 0.9), ay = rng.uniform(0.2, 0.9);
    const double px = rng.uniform(0, 6), py = rng.uniform(0, 6);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img[(static_cast<size_t>(ic) * h + y) * w + x] =
            0.5 + 0.3 * std::sin(ax * x + px) * std::cos(ay * y + py);
  }
  return img;
}

// The warp losses have piecewise-smooth samplers and data-dependent masks,
// so their finite-difference checks use constructed scenes with explicit
// margins: frames are an analytic ramp-plus-waves texture under known
// sub-pixel shifts (sampling coordinates stay far from the bilinear knots),
// the ramp keeps unwarped differences bounded below, and distinct constant
// offsets per frame keep every warped residual, per-pixel minimum and
// auto-mask decision away from its switching surface by far more than a
// 1e-4 perturbation can move it.
double warp_texture(double x, double y) {
  return 0.5 * x + 0.3 * y + 0.05 * std::cos(0.23 * x + 0.4) * std::cos(0.29 * y + 1.1) +
         0.04 * std::cos(0.21 * x - 0.31 * y + 2.0) + 0.03 * std::cos(0.26 * y - 0.7);
}

std::vector<double> shifted_frame(int h, int w, double sx, double sy, double bump = 0.0) {
  std::vector<double> v(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      v[static_cast<size_t>(y) * w + x] = warp_texture(x - sx, y - sy) + bump;
  return v;
}

/// Twist whose warp moves every pixel by about (shift_x, shift_y) at the
/// given constant depth, with small rotations for gradient coverage.
std::vector<double> shift_twist(Rng& rng, const geom::Intrinsics& k, double depth,
                                double shift_x, double shift_y) {
  return {rng.uniform(-1e-3, 1e-3), rng.uniform(-1e-3, 1e-3), rng.uniform(-1e-3, 1e-3),
          shift_x * depth / k.fx, shift_y * depth / k.fy, rng.uniform(-4e-3, 4e-3)};
}

/// Depth with a gentle ramp: adjacent disparity differences stay bounded
/// away from zero, so the smoothness term's absolute values are all on a
/// fixed branch.
std::vector<double> ramped_depth(Rng& rng, int h, int w, double base) {
  std::vector<double> v(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      v[static_cast<size_t>(y) * w + x] =
          base + 0.01 * x + 0.006 * y + rng.uniform(-0.002, 0.002);
  return v;
}

}  // namespace

std::vector<CheckResult> run_all(uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> results;
  auto run = [&](const std::string& name, std::vector<ad::Shape> shapes,
                 std::function<V(const std::vector<V>&)> fn,
                 std::vector<std::vector<double>> inputs) {
    results.push_back(check(name, std::move(shapes), fn, inputs));
  };

  const ad::Shape s234{2, 3, 4};
  const int64_t n234 = 24;

  // -- elementwise ---------------------------------------------------------
  run("add", {s234, s234},
      [](const std::vector<V>& in) { return probe(ad::add(in[0], in[1])); },
      {rand_vec(rng, n234, -1, 1), rand_vec(rng, n234, -1, 1)});
  run("sub", {s234, s234},
      [](const std::vector<V>& in) { return probe(ad::sub(in[0], in[1])); },
      {rand_vec(rng, n234, -1, 1), rand_vec(rng, n234, -1, 1)});
  run("mul", {s234, s234},
      [](const std::vector<V>& in) { return probe(ad::mul(in[0], in[1])); },
      {rand_vec(rng, n234, -1, 1), rand_vec(rng, n234, -1, 1)});
  run("div", {s234, s234},
      [](const std::vector<V>& in) { return probe(ad::div(in[0], in[1])); },
      {rand_vec(rng, n234, -1, 1), rand_vec(rng, n234, 0.5, 1.5)});
  {
    auto a = rand_vec(rng, n234, -1, 1);
    auto b = a;
    for (auto& x : b) x += (rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.2, 0.5);
    run("minimum", {s234, s234},
        [](const std::vector<V>& in) { return probe(ad::minimum(in[0], in[1])); }, {a, b});
  }
  run("relu", {s234}, [](const std::vector<V>& in) { return probe(ad::relu(in[0])); },
      {rand_signed(rng, n234)});
  run("sigmoid", {s234}, [](const std::vector<V>& in) { return probe(ad::sigmoid(in[0])); },
      {rand_vec(rng, n234, -2, 2)});
  run("tanh", {s234}, [](const std::vector<V>& in) { return probe(ad::tanh_op(in[0])); },
      {rand_vec(rng, n234, -2, 2)});
  run("exp", {s234}, [](const std::vector<V>& in) { return probe(ad::exp_op(in[0])); },
      {rand_vec(rng, n234, -1, 1)});
  run("sqrt", {s234}, [](const std::vector<V>& in) { return probe(ad::sqrt_op(in[0])); },
      {rand_vec(rng, n234, 0.3, 2)});
  run("abs", {s234}, [](const std::vector<V>& in) { return probe(ad::abs_op(in[0])); },
      {rand_signed(rng, n234)});
  run("square", {s234}, [](const std::vector<V>& in) { return probe(ad::square(in[0])); },
      {rand_vec(rng, n234, -1, 1)});
  run("reciprocal", {s234},
      [](const std::vector<V>& in) { return probe(ad::reciprocal(in[0])); },
      {rand_vec(rng, n234, 0.4, 1.6)});
  run("sin", {s234}, [](const std::vector<V>& in) { return probe(ad::sin_op(in[0])); },
      {rand_vec(rng, n234, -2, 2)});
  run("cos", {s234}, [](const std::vector<V>& in) { return probe(ad::cos_op(in[0])); },
      {rand_vec(rng, n234, -2, 2)});
  run("scale_add_const", {s234},
      [](const std::vector<V>& in) {
        return probe(ad::add_const(ad::scale(in[0], 1.7), -0.3));
      },
      {rand_vec(rng, n234, -1, 1)});

  // -- reductions / shape --------------------------------------------------
  run("sum", {s234}, [](const std::vector<V>& in) { return ad::sum(in[0]); },
      {rand_vec(rng, n234, -1, 1)});
  run("mean", {s234}, [](const std::vector<V>& in) { return ad::mean(in[0]); },
      {rand_vec(rng, n234, -1, 1)});
  {
    std::vector<uint8_t> mask(n234, 0);
    for (auto& m : mask) m = rng.uniform() < 0.6;
    mask[0] = 1;
    run("masked_mean", {{24}},
        [mask](const std::vector<V>& in) { return ad::masked_mean(in[0], mask); },
        {rand_vec(rng, n234, -1, 1)});
  }
  run("softmax", {{5}}, [](const std::vector<V>& in) { return probe(ad::softmax(in[0])); },
      {rand_vec(rng, 5, -1, 1)});
  run("dot", {{7}, {7}},
      [](const std::vector<V>& in) { return ad::dot(in[0], in[1]); },
      {rand_vec(rng, 7, -1, 1), rand_vec(rng, 7, -1, 1)});
  run("reshape", {s234},
      [](const std::vector<V>& in) { return probe(ad::reshape(in[0], {4, 6})); },
      {rand_vec(rng, n234, -1, 1)});
  run("concat0_slice0", {{2, 5}, {3, 5}},
      [](const std::vector<V>& in) {
        auto cat = ad::concat0<double>({in[0], in[1]});
        return ad::add(probe(ad::slice0(cat, 1, 3)), probe(cat, 2));
      },
      {rand_vec(rng, 10, -1, 1), rand_vec(rng, 15, -1, 1)});
  run("gather", {{9}},
      [](const std::vector<V>& in) { return probe(ad::gather(in[0], {8, 0, 3, 3, 5})); },
      {rand_vec(rng, 9, -1, 1)});

  // -- linear algebra helpers ----------------------------------------------
  run("matmul", {{3, 4}, {4, 2}},
      [](const std::vector<V>& in) { return probe(ad::matmul(in[0], in[1])); },
      {rand_vec(rng, 12, -1, 1), rand_vec(rng, 8, -1, 1)});
  run("add_col_broadcast", {{3, 5}, {3}},
      [](const std::vector<V>& in) { return probe(ad::add_col_broadcast(in[0], in[1])); },
      {rand_vec(rng, 15, -1, 1), rand_vec(rng, 3, -1, 1)});
  run("mul_row_broadcast", {{3, 5}, {5}},
      [](const std::vector<V>& in) { return probe(ad::mul_row_broadcast(in[0], in[1])); },
      {rand_vec(rng, 15, -1, 1), rand_vec(rng, 5, -1, 1)});
  run("scale_by", {{2, 3}, {1}},
      [](const std::vector<V>& in) { return probe(ad::scale_by(in[0], in[1])); },
      {rand_vec(rng, 6, -1, 1), rand_vec(rng, 1, 0.5, 1.5)});

  // -- layers ----------------------------------------------------------------
  run("conv2d_s1", {{2, 5, 6}, {3, 2, 3, 3}, {3}},
      [](const std::vector<V>& in) { return probe(nn::conv2d(in[0], in[1], in[2], 1, 1)); },
      {rand_vec(rng, 60, -1, 1), rand_vec(rng, 54, -1, 1), rand_vec(rng, 3, -1, 1)});
  run("conv2d_s2", {{2, 5, 6}, {3, 2, 3, 3}, {3}},
      [](const std::vector<V>& in) { return probe(nn::conv2d(in[0], in[1], in[2], 2, 1)); },
      {rand_vec(rng, 60, -1, 1), rand_vec(rng, 54, -1, 1), rand_vec(rng, 3, -1, 1)});
  run("linear", {{5}, {4, 5}, {4}},
      [](const std::vector<V>& in) { return probe(nn::linear(in[0], in[1], in[2])); },
      {rand_vec(rng, 5, -1, 1), rand_vec(rng, 20, -1, 1), rand_vec(rng, 4, -1, 1)});
  run("avg_pool2", {{2, 5, 6}},
      [](const std::vector<V>& in) { return probe(nn::avg_pool2(in[0])); },
      {rand_vec(rng, 60, -1, 1)});
  run("global_avg_pool", {{3, 4, 5}},
      [](const std::vector<V>& in) { return probe(nn::global_avg_pool(in[0])); },
      {rand_vec(rng, 60, -1, 1)});
  run("upsample2x", {{2, 3, 4}},
      [](const std::vector<V>& in) { return probe(nn::upsample2x(in[0], 5, 7)); },
      {rand_vec(rng, 24, -1, 1)});
  {
    const int hc = 3, h = 3, w = 4;
    run("conv_lstm_step",
        {{2, h, w}, {hc, h, w}, {hc, h, w}, {4 * hc, 2 + hc, 3, 3}, {4 * hc}},
        [hc, h, w](const std::vector<V>& in) {
          nn::ConvLstmState<double> state{in[1], in[2]};
          auto [out, next] = nn::conv_lstm_step(in[0], state, in[3], in[4]);
          return ad::add(probe(out), probe(next.cell, 3));
        },
        {rand_vec(rng, 2 * h * w, -1, 1), rand_vec(rng, hc * h * w, -1, 1),
         rand_vec(rng, hc * h * w, -1, 1), rand_vec(rng, 4 * hc * (2 + hc) * 9, -0.4, 0.4),
         rand_vec(rng, 4 * hc, -0.3, 0.3)});
  }

  // -- image ops -------------------------------------------------------------
  {
    const int c = 2, h = 5, w = 6, n = 7;
    std::vector<double> grid(2 * n);
    for (int i = 0; i < n; ++i) {
      grid[i] = rng.uniform(0.7, w - 1.7) + 0.25;       // x, fraction away from knots
      grid[n + i] = rng.uniform(0.7, h - 1.7) + 0.25;  // y
    }
    run("bilinear_sample", {{c, h, w}, {2, n}},
        [](const std::vector<V>& in) {
          return probe(img::bilinear_sample(in[0], in[1]).values);
        },
        {rand_vec(rng, c * h * w, -1, 1), grid});
  }
  run("box3", {{2, 5, 6}}, [](const std::vector<V>& in) { return probe(img::box3(in[0])); },
      {rand_vec(rng, 60, -1, 1)});
  run("mean_channels", {{3, 4, 5}},
      [](const std::vector<V>& in) { return probe(img::mean_channels(in[0])); },
      {rand_vec(rng, 60, -1, 1)});
  run("ssim_map", {{2, 5, 6}, {2, 5, 6}},
      [](const std::vector<V>& in) { return probe(img::ssim_map(in[0], in[1])); },
      {rand_vec(rng, 60, 0.2, 0.8), rand_vec(rng, 60, 0.2, 0.8)});
  run("image_gradients", {{2, 5, 6}},
      [](const std::vector<V>& in) {
        auto [gx, gy] = img::image_gradients(in[0]);
        return ad::add(probe(gx), probe(gy, 2));
      },
      {rand_vec(rng, 60, -1, 1)});

  // -- rigid motion ------------------------------------------------------------
  run("hat3", {{3}}, [](const std::vector<V>& in) { return probe(pose::hat3(in[0])); },
      {rand_vec(rng, 3, -1, 1)});
  run("se3_exp", {{6}},
      [](const std::vector<V>& in) { return probe(pose::se3_exp_mat(in[0])); },
      {rand_twist(rng, 1.2, 1.0)});
  run("se3_exp_small_angle", {{6}},
      [](const std::vector<V>& in) { return probe(pose::se3_exp_mat(in[0])); },
      {rand_twist(rng, 1e-5, 1.0)});
  run("pose_compose", {{6}, {6}},
      [](const std::vector<V>& in) {
        return probe(pose::pose_compose(pose::se3_exp_mat(in[0]), pose::se3_exp_mat(in[1])));
      },
      {rand_twist(rng, 0.8, 1.0), rand_twist(rng, 0.8, 1.0)});
  run("pose_inverse", {{6}},
      [](const std::vector<V>& in) {
        return probe(pose::pose_inverse(pose::se3_exp_mat(in[0])));
      },
      {rand_twist(rng, 0.8, 1.0)});
  {
    const int n = 6;
    run("transform_points", {{6}, {3, n}},
        [](const std::vector<V>& in) {
          return probe(pose::transform_points(pose::se3_exp_mat(in[0]), in[1]));
        },
        {rand_twist(rng, 0.6, 0.8), rand_vec(rng, 3 * n, -1, 1)});
    std::vector<double> pts = rand_vec(rng, 3 * n, -0.3, 0.3);
    for (int i = 0; i < n; ++i) pts[2 * n + i] = rng.uniform(2.0, 4.0);  // z > 0
    auto k = small_intrinsics(8, 6);
    run("pinhole_project", {{3, n}},
        [k](const std::vector<V>& in) { return probe(pose::pinhole_project(in[0], k).grid); },
        {pts});
  }
  {
    auto k = small_intrinsics(8, 6);
    run("correspondence_grid", {{6}, {48}},
        [k](const std::vector<V>& in) {
          auto grid = pose::correspondence_grid(k, pose::se3_exp_mat(in[0]), in[1]);
          return probe(grid.grid);
        },
        {rand_twist(rng, 0.01, 0.05), rand_vec(rng, 48, 2.0, 3.0)});
  }

  // -- losses -------------------------------------------------------------------
  {
    const int c = 1, h = 6, w = 8;
    run("channel_l2", {{2, 4, 5}},
        [](const std::vector<V>& in) { return probe(losses::channel_l2(in[0])); },
        {rand_signed(rng, 40, 0.2)});
    run("rho", {{c, h, w}, {c, h, w}},
        [](const std::vector<V>& in) { return losses::rho(in[0], in[1]).value; },
        {rand_vec(rng, c * h * w, 0.2, 0.45), rand_vec(rng, c * h * w, 0.55, 0.8)});

    auto k = small_intrinsics(w, h);
    const double depth0 = 2.5;
    // Consistent triple: warping the neighbors into the center reproduces
    // the texture up to interpolation error, the unwarped differences are an
    // order of magnitude larger, and the +0.03 bump keeps the two-source
    // minimum unambiguous. rel[0] is frame0->frame1 so its inverse shifts
    // by -0.43; rel[1] is frame1->frame2 and shifts by +0.39.
    auto f_center = shifted_frame(h, w, 0.0, 0.0);
    auto f_prev = shifted_frame(h, w, -0.43, -0.37, 0.05);
    auto f_next = shifted_frame(h, w, 0.39, 0.41, 0.15);
    run("appearance_loss", {{6}, {6}, {c * h * w}, {c * h * w}, {c * h * w}},
        [k, f_prev, f_center, f_next, c, h, w](const std::vector<V>& in) {
          std::vector<V> frames = {V::constant({c, h, w}, f_prev),
                                   V::constant({c, h, w}, f_center),
                                   V::constant({c, h, w}, f_next)};
          std::vector<V> depths = {ad::reshape(in[2], {1, h, w}),
                                   ad::reshape(in[3], {1, h, w}),
                                   ad::reshape(in[4], {1, h, w})};
          std::vector<V> rel = {pose::se3_exp_mat(in[0]), pose::se3_exp_mat(in[1])};
          return losses::appearance_loss<double>(frames, depths, rel, k).value;
        },
        {shift_twist(rng, k, depth0, 0.43, 0.37), shift_twist(rng, k, depth0, 0.39, 0.41),
         ramped_depth(rng, h, w, depth0), ramped_depth(rng, h, w, depth0),
         ramped_depth(rng, h, w, depth0)});

    run("smoothness_loss", {{h * w}, {c, h, w}},
        [c, h, w](const std::vector<V>& in) {
          return losses::smoothness_loss(ad::reshape(in[0], {1, h, w}), in[1]);
        },
        {ramped_depth(rng, h, w, 2.0), shifted_frame(h, w, 0.0, 0.0)});

    auto f_anchor = shifted_frame(h, w, 0.0, 0.0);
    auto f_s1 = shifted_frame(h, w, 0.43, 0.29, 0.05);
    auto f_s2 = shifted_frame(h, w, 0.81, 0.63, 0.09);
    run("abs_appearance_loss", {{6}, {6}, {h * w}},
        [k, f_anchor, f_s1, f_s2, c, h, w](const std::vector<V>& in) {
          std::vector<V> frames = {V::constant({c, h, w}, f_anchor),
                                   V::constant({c, h, w}, f_s1),
                                   V::constant({c, h, w}, f_s2)};
          std::vector<V> abs_poses = {pose::se3_exp_mat(in[0]), pose::se3_exp_mat(in[1])};
          return losses::abs_appearance_loss<double>(frames, ad::reshape(in[2], {1, h, w}),
                                                     abs_poses, k)
              .value;
        },
        {shift_twist(rng, k, depth0, 0.43, 0.29), shift_twist(rng, k, depth0, 0.81, 0.63),
         ramped_depth(rng, h, w, depth0)});

    run("cycle_loss", {{6}, {6}, {6}, {6}},
        [](const std::vector<V>& in) {
          std::vector<V> rel = {pose::se3_exp_mat(in[0]), pose::se3_exp_mat(in[1])};
          std::vector<V> abs = {pose::se3_exp_mat(in[2]), pose::se3_exp_mat(in[3])};
          return losses::cycle_loss(rel, abs);
        },
        {rand_twist(rng, 0.3, 0.5), rand_twist(rng, 0.3, 0.5), rand_twist(rng, 0.3, 0.5),
         rand_twist(rng, 0.3, 0.5)});

    run("full_loss", {{6}, {6}, {6}, {6}, {h * w}},
        [k, f_prev, f_center, f_next, c, h, w](const std::vector<V>& in) {
          std::vector<V> frames = {V::constant({c, h, w}, f_prev),
                                   V::constant({c, h, w}, f_center),
                                   V::constant({c, h, w}, f_next)};
          auto depth = ad::reshape(in[4], {1, h, w});
          std::vector<V> depths = {depth, depth, depth};
          std::vector<V> rel = {pose::se3_exp_mat(in[0]), pose::se3_exp_mat(in[1])};
          std::vector<V> abs = {pose::se3_exp_mat(in[2]), pose::se3_exp_mat(in[3])};
          auto app = losses::appearance_loss<double>(frames, depths, rel, k);
          auto smooth = losses::smoothness_loss(depth, frames[1]);
          auto abs_app = losses::abs_appearance_loss<double>(frames, depth, abs, k);
          auto cyc = losses::cycle_loss(rel, abs);
          return losses::full_loss(app, smooth, abs_app, cyc).total;
        },
        {shift_twist(rng, k, depth0, 0.43, 0.37), shift_twist(rng, k, depth0, 0.39, 0.41),
         shift_twist(rng, k, depth0, 0.43, 0.37), shift_twist(rng, k, depth0, 0.82, 0.78),
         ramped_depth(rng, h, w, depth0)});

    // N=3, M=2 long window: 5 frames under cumulative shifts of (0.41, 0.33)
    // per step; snippet anchors at frames 0 and 2.
    std::vector<std::vector<double>> chain;
    for (int kf = 0; kf < 5; ++kf)
      chain.push_back(shifted_frame(h, w, 0.41 * kf, 0.33 * kf, 0.04 * kf));
    run("long_loss", {{6}, {6}, {6}, {6}, {h * w}, {h * w}},
        [k, chain, c, h, w](const std::vector<V>& in) {
          std::vector<V> frames;
          for (const auto& f : chain) frames.push_back(V::constant({c, h, w}, f));
          std::vector<std::vector<V>> abs = {
              {pose::se3_exp_mat(in[0]), pose::se3_exp_mat(in[1])},
              {pose::se3_exp_mat(in[2]), pose::se3_exp_mat(in[3])}};
          std::vector<V> anchor_depths = {ad::reshape(in[4], {1, h, w}),
                                          ad::reshape(in[5], {1, h, w})};
          return losses::long_loss<double>(frames, anchor_depths, abs, k, 3, 2).value;
        },
        {shift_twist(rng, k, depth0, 0.41, 0.33), shift_twist(rng, k, depth0, 0.82, 0.66),
         shift_twist(rng, k, depth0, 0.41, 0.33), shift_twist(rng, k, depth0, 0.82, 0.66),
         ramped_depth(rng, h, w, depth0), ramped_depth(rng, h, w, depth0)});
  }

  // -- network blocks (input gradients through the composed graphs) -----------
  {
    model::ModelConfig mc;
    mc.width = 16;
    mc.height = 16;
    mc.channels = 1;
    mc.depth_ch1 = 3;
    mc.depth_ch2 = 4;
    mc.depth_ch3 = 6;
    mc.pose_ch1 = 3;
    mc.pose_ch2 = 4;
    mc.pose_ch3 = 5;
    mc.lstm_channels = 4;
    mc.seed = seed ^ 0x5bd1;
    model::Model<double> m(mc);
    // Positive weights and inputs keep every ReLU strictly active, so the
    // composed graphs are smooth at the probe point and the finite
    // differences see the same branch the analytic gradients use.
    for (auto& [name, p] : m.params())
      for (auto& v : p.mutable_value()) v = rng.uniform(0.02, 0.25);
    const int hw = mc.width * mc.height;
    run("depth_net", {{hw}},
        [&m, &mc](const std::vector<V>& in) {
          auto out = m.depth_net(ad::reshape(in[0], {1, mc.height, mc.width}));
          return ad::add(probe(out.depth), probe(out.feature, 5));
        },
        {rand_vec(rng, hw, 0.2, 0.8)});
    run("pose_encoder", {{hw}, {hw}},
        [&m, &mc](const std::vector<V>& in) {
          return probe(m.pose_encoder(ad::reshape(in[0], {1, mc.height, mc.width}),
                                      ad::reshape(in[1], {1, mc.height, mc.width})));
        },
        {rand_vec(rng, hw, 0.2, 0.8), rand_vec(rng, hw, 0.2, 0.8)});
    run("pose_head", {{4, 2, 2}},
        [&m](const std::vector<V>& in) { return probe(m.pose_head(in[0], "head1")); },
        {rand_vec(rng, 16, -1, 1)});
    run("memory_readout", {{3, 2, 2}, {3, 2, 2}, {3, 2, 2}},
        [](const std::vector<V>& in) {
          model::MemoryBuffer<double> buf(4);
          buf.push(in[0]);
          buf.push(in[1]);
          return probe(buf.readout(in[2]));
        },
        {rand_vec(rng, 12, -1, 1), rand_vec(rng, 12, -1, 1), rand_vec(rng, 12, -1, 1)});
  }

  return results;
}

}  // namespace ltmvo::gradcheck
