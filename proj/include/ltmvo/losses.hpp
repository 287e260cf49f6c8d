#pragma once

// Training objectives: photometric reprojection with per-pixel source
// minimum and auto-masking, edge-aware smoothness, anchor appearance,
// two-layer pose cycle consistency, their weighted combination, and the
// long-window variant used for second-stage fine-tuning.

#include <vector>

#include "ltmvo/ad.hpp"
#include "ltmvo/geom.hpp"
#include "ltmvo/image_ops.hpp"
#include "ltmvo/pose_ops.hpp"

namespace ltmvo::losses {

using ad::Var;

inline constexpr double kSsimBlend = 0.85;
inline constexpr double kDefaultLambda1 = 0.001;
inline constexpr double kDefaultLambda2 = 0.001;

template <typename T>
struct MaskedLoss {
  Var<T> value;               // scalar
  bool empty_warning = false; // every pixel was masked out
};

/// Per-pixel Euclidean norm across channels. Gradient is the normalized
/// difference; defined as zero where the norm vanishes.
template <typename T>
Var<T> channel_l2(const Var<T>& x) {
  ad::detail::require(x.shape().size() == 3, "channel_l2: (C,H,W) expected");
  const int c = x.shape()[0];
  const int hw = x.shape()[1] * x.shape()[2];
  auto n = ad::detail::make_node<T>({1, x.shape()[1], x.shape()[2]}, {x.node()});
  for (int i = 0; i < hw; ++i) {
    T acc = T(0);
    for (int ic = 0; ic < c; ++ic) {
      const T v = x.value()[ic * hw + i];
      acc += v * v;
    }
    n->value[i] = std::sqrt(acc);
  }
  if (n->requires_grad) {
    auto xp = x.node();
    auto np = n.get();
    n->backprop = [xp, np, c, hw] {
      for (int i = 0; i < hw; ++i) {
        const T out = np->value[i];
        if (out <= T(0)) continue;
        const T g = np->grad[i] / out;
        for (int ic = 0; ic < c; ++ic) xp->grad[ic * hw + i] += g * xp->value[ic * hw + i];
      }
    };
  }
  return Var<T>(n);
}

/// Photometric dissimilarity map: blend of structural and L2 terms,
/// rho = alpha * (1 - SSIM)/2 + (1 - alpha) * |a - b|_2, shape (1, H, W).
template <typename T>
Var<T> rho_map(const Var<T>& a, const Var<T>& b, double alpha = kSsimBlend) {
  ad::detail::require(a.shape() == b.shape(), "rho: shape mismatch " +
                                                  ad::shape_str(a.shape()) + " vs " +
                                                  ad::shape_str(b.shape()));
  auto l2 = channel_l2(ad::sub(a, b));
  if (alpha == 0.0) return l2;
  auto ssim_term = ad::scale(ad::add_const(ad::neg(img::ssim_map(a, b)), T(1)), T(0.5));
  return ad::add(ad::scale(ssim_term, T(alpha)), ad::scale(l2, T(1.0 - alpha)));
}

/// Masked mean of the rho map. An empty valid set yields 0 with a warning
/// flag instead of NaN.
template <typename T>
MaskedLoss<T> rho(const Var<T>& a, const Var<T>& b, const std::vector<uint8_t>& mask,
                  double alpha = kSsimBlend) {
  auto map = rho_map(a, b, alpha);
  bool any = false;
  for (uint8_t m : mask) any |= m != 0;
  return {ad::masked_mean(ad::reshape(map, {static_cast<int>(map.size())}), mask), !any};
}

template <typename T>
MaskedLoss<T> rho(const Var<T>& a, const Var<T>& b, double alpha = kSsimBlend) {
  return rho<T>(a, b, std::vector<uint8_t>(a.shape()[1] * a.shape()[2], 1), alpha);
}

/// Warped view of src into the frame owning `depth`, via the correspondence
/// induced by pose (which maps depth-frame coordinates into src-frame
/// coordinates). Returns the synthesized image and its validity mask.
template <typename T>
struct Synthesized {
  Var<T> image;                // (C, H, W)
  std::vector<uint8_t> valid;  // H*W
};

template <typename T>
Synthesized<T> synthesize_view(const Var<T>& src, const geom::Intrinsics& K,
                               const Var<T>& pose12, const Var<T>& depth) {
  const int c = src.shape()[0], h = src.shape()[1], w = src.shape()[2];
  auto flat_depth = ad::reshape(depth, {h * w});
  auto grid = pose::correspondence_grid(K, pose12, flat_depth);
  auto sampled = img::bilinear_sample(src, grid.grid);
  std::vector<uint8_t> valid(grid.valid.size());
  for (size_t i = 0; i < valid.size(); ++i) valid[i] = grid.valid[i] && sampled.valid[i];
  return {ad::reshape(sampled.values, {c, h, w}), std::move(valid)};
}

namespace detail {

/// x where mask, fill elsewhere; the filled entries are constants.
template <typename T>
Var<T> fill_masked(const Var<T>& x, const std::vector<uint8_t>& mask, T fill) {
  std::vector<T> keep(x.size()), pad(x.size());
  const int64_t n = x.size();
  const int64_t hw = static_cast<int64_t>(mask.size());
  for (int64_t i = 0; i < n; ++i) {
    const bool m = mask[i % hw] != 0;
    keep[i] = m ? T(1) : T(0);
    pad[i] = m ? T(0) : fill;
  }
  auto kept = ad::mul(x, Var<T>::constant(x.shape(), std::move(keep)));
  return ad::add(kept, Var<T>::constant(x.shape(), std::move(pad)));
}

inline constexpr double kInvalidError = 1e9;

}  // namespace detail

/// Minimum photometric reprojection loss over the two temporal neighbors of
/// each interior frame, with auto-masking: a pixel survives only when its
/// best warped error is strictly below its best unwarped (identity) error.
/// frames/depths are per-frame; rel_poses[t] maps frame-t coordinates into
/// frame-(t+1) coordinates.
template <typename T>
MaskedLoss<T> appearance_loss(const std::vector<Var<T>>& frames,
                              const std::vector<Var<T>>& depths,
                              const std::vector<Var<T>>& rel_poses,
                              const geom::Intrinsics& K, double alpha = kSsimBlend) {
  const size_t n = frames.size();
  ad::detail::require(n >= 3, "appearance_loss: at least 3 frames required");
  ad::detail::require(depths.size() == n && rel_poses.size() == n - 1,
                      "appearance_loss: frames/depths/poses arity mismatch");

  Var<T> total = Var<T>::scalar(T(0));
  bool all_empty = true;
  for (size_t t = 1; t + 1 < n; ++t) {
    auto to_prev = pose::pose_inverse(rel_poses[t - 1]);
    const auto& to_next = rel_poses[t];
    auto warp_prev = synthesize_view(frames[t - 1], K, to_prev, depths[t]);
    auto warp_next = synthesize_view(frames[t + 1], K, to_next, depths[t]);

    auto err_prev = detail::fill_masked(rho_map(frames[t], warp_prev.image, alpha),
                                        warp_prev.valid, T(detail::kInvalidError));
    auto err_next = detail::fill_masked(rho_map(frames[t], warp_next.image, alpha),
                                        warp_next.valid, T(detail::kInvalidError));
    auto warped_min = ad::minimum(err_prev, err_next);

    auto id_prev = rho_map(frames[t], frames[t - 1], alpha);
    auto id_next = rho_map(frames[t], frames[t + 1], alpha);
    auto identity_min = ad::minimum(id_prev, id_next);

    std::vector<uint8_t> mask(warped_min.size());
    for (int64_t i = 0; i < warped_min.size(); ++i)
      mask[i] = warped_min.value()[i] < identity_min.value()[i];

    bool any = false;
    for (uint8_t m : mask) any |= m != 0;
    all_empty &= !any;
    total = ad::add(total,
                    ad::masked_mean(ad::reshape(warped_min, {static_cast<int>(warped_min.size())}),
                                    mask));
  }
  return {ad::scale(total, T(1.0 / static_cast<double>(n - 2))), all_empty};
}

/// Edge-aware smoothness on mean-normalized disparity.
template <typename T>
Var<T> smoothness_loss(const Var<T>& depth, const Var<T>& image) {
  ad::detail::require(depth.shape().size() == 3 && depth.shape()[0] == 1,
                      "smoothness_loss: (1,H,W) depth expected");
  ad::detail::require(depth.shape()[1] == image.shape()[1] &&
                          depth.shape()[2] == image.shape()[2],
                      "smoothness_loss: depth/image size mismatch");
  auto disp = ad::reciprocal(depth);
  auto norm_disp = ad::scale_by(disp, ad::reciprocal(ad::mean(disp)));
  auto [dx, dy] = img::image_gradients(norm_disp);
  auto [ix, iy] = img::image_gradients(image);
  auto wx = ad::exp_op(ad::neg(img::mean_channels(ad::abs_op(ix))));
  auto wy = ad::exp_op(ad::neg(img::mean_channels(ad::abs_op(iy))));
  return ad::mean(ad::add(ad::mul(ad::abs_op(dx), wx), ad::mul(ad::abs_op(dy), wy)));
}

/// Anchor appearance loss: every non-anchor frame is warped into the anchor
/// view through the anchor depth and the predicted anchor-to-frame pose.
/// abs_poses[t-1] maps anchor coordinates into frame-t coordinates.
template <typename T>
MaskedLoss<T> abs_appearance_loss(const std::vector<Var<T>>& frames,
                                  const Var<T>& anchor_depth,
                                  const std::vector<Var<T>>& abs_poses,
                                  const geom::Intrinsics& K, double alpha = kSsimBlend) {
  const size_t n = frames.size();
  ad::detail::require(n >= 2 && abs_poses.size() == n - 1,
                      "abs_appearance_loss: pose arity mismatch");
  Var<T> total = Var<T>::scalar(T(0));
  bool all_empty = true;
  for (size_t t = 1; t < n; ++t) {
    auto warped = synthesize_view(frames[t], K, abs_poses[t - 1], anchor_depth);
    auto term = rho<T>(frames[0], warped.image, warped.valid, alpha);
    all_empty &= term.empty_warning;
    total = ad::add(total, term.value);
  }
  return {ad::scale(total, T(1.0 / static_cast<double>(n - 1))), all_empty};
}

/// Transitivity penalty between the two pose layers: squared Frobenius norm
/// of T_abs[t] - T_rel[t] * T_abs[t-1] over homogeneous matrices (the
/// constant bottom rows cancel, so the 3x4 difference is equivalent).
template <typename T>
Var<T> cycle_loss(const std::vector<Var<T>>& rel_poses,
                  const std::vector<Var<T>>& abs_poses) {
  ad::detail::require(!rel_poses.empty() && rel_poses.size() == abs_poses.size(),
                      "cycle_loss: relative/absolute arity mismatch");
  Var<T> total = Var<T>::scalar(T(0));
  Var<T> prev_abs = pose::identity_pose<T>();
  for (size_t t = 0; t < rel_poses.size(); ++t) {
    auto chained = pose::pose_compose(rel_poses[t], prev_abs);
    total = ad::add(total, ad::sum(ad::square(ad::sub(abs_poses[t], chained))));
    prev_abs = abs_poses[t];
  }
  return ad::scale(total, T(1.0 / static_cast<double>(rel_poses.size())));
}

struct LossBreakdown {
  double appearance = 0;
  double smoothness = 0;
  double appearance_abs = 0;
  double cycle = 0;
  double total = 0;
  double lambda1 = kDefaultLambda1;
  double lambda2 = kDefaultLambda2;
  bool empty_mask_warning = false;
};

template <typename T>
struct FullLoss {
  Var<T> total;
  LossBreakdown breakdown;
};

/// total = appearance + lambda1 * smoothness + appearance_abs +
///         lambda2 * cycle
template <typename T>
FullLoss<T> full_loss(const MaskedLoss<T>& appearance, const Var<T>& smoothness,
                      const MaskedLoss<T>& appearance_abs, const Var<T>& cycle,
                      double lambda1 = kDefaultLambda1, double lambda2 = kDefaultLambda2) {
  auto total = ad::add(ad::add(appearance.value, ad::scale(smoothness, T(lambda1))),
                       ad::add(appearance_abs.value, ad::scale(cycle, T(lambda2))));
  LossBreakdown b;
  b.appearance = static_cast<double>(appearance.value.value()[0]);
  b.smoothness = static_cast<double>(smoothness.value()[0]);
  b.appearance_abs = static_cast<double>(appearance_abs.value.value()[0]);
  b.cycle = static_cast<double>(cycle.value()[0]);
  b.lambda1 = lambda1;
  b.lambda2 = lambda2;
  b.total = static_cast<double>(total.value()[0]);
  b.empty_mask_warning = appearance.empty_warning || appearance_abs.empty_warning;
  return {total, b};
}

/// Long-range photometric loss over M tiled snippets of a sequence with
/// frame count M*(N-1)+1. anchor_depths[m] is the depth of frame m*(N-1);
/// abs_poses[m][k] maps that anchor's coordinates into frame
/// m*(N-1)+k+1 coordinates.
template <typename T>
MaskedLoss<T> long_loss(const std::vector<Var<T>>& frames,
                        const std::vector<Var<T>>& anchor_depths,
                        const std::vector<std::vector<Var<T>>>& abs_poses,
                        const geom::Intrinsics& K, int snippet_len, int num_snippets,
                        double alpha = kSsimBlend) {
  const int n = snippet_len, m = num_snippets;
  ad::detail::require(static_cast<int>(frames.size()) == m * (n - 1) + 1,
                      "long_loss: sequence length must be M*(N-1)+1, got " +
                          std::to_string(frames.size()));
  ad::detail::require(static_cast<int>(anchor_depths.size()) == m &&
                          static_cast<int>(abs_poses.size()) == m,
                      "long_loss: per-snippet arity mismatch");
  Var<T> total = Var<T>::scalar(T(0));
  bool all_empty = true;
  for (int s = 0; s < m; ++s) {
    const int anchor = s * (n - 1);
    ad::detail::require(static_cast<int>(abs_poses[s].size()) == n - 1,
                        "long_loss: snippet pose arity mismatch");
    Var<T> snippet = Var<T>::scalar(T(0));
    for (int k = 1; k < n; ++k) {
      auto warped = synthesize_view(frames[anchor + k], K, abs_poses[s][k - 1],
                                    anchor_depths[s]);
      auto term = rho<T>(frames[anchor], warped.image, warped.valid, alpha);
      all_empty &= term.empty_warning;
      snippet = ad::add(snippet, term.value);
    }
    total = ad::add(total, ad::scale(snippet, T(1.0 / static_cast<double>(n - 1))));
  }
  return {ad::scale(total, T(1.0 / static_cast<double>(m))), all_empty};
}

}  // namespace ltmvo::losses
