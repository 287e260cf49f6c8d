#pragma once

// Differentiable resampling and similarity primitives. Feature maps are
// (C, H, W); sampling grids are (2, N) with row 0 = x and row 1 = y in pixel
// units of the source image.

#include "ltmvo/ad.hpp"
#include "ltmvo/common.hpp"

namespace ltmvo::img {

using ad::Var;

template <typename T>
struct Sampled {
  Var<T> values;               // (C, N)
  std::vector<uint8_t> valid;  // N; false where the grid left the source
};

/// Bilinear interpolation of src at continuous grid coordinates.
/// Out-of-range coordinates produce value 0 and a false validity bit; inside
/// the image the result is differentiable w.r.t. both src and grid.
template <typename T>
Sampled<T> bilinear_sample(const Var<T>& src, const Var<T>& grid) {
  ad::detail::require(src.shape().size() == 3, "bilinear_sample: (C,H,W) source expected");
  ad::detail::require(grid.shape().size() == 2 && grid.shape()[0] == 2,
                      "bilinear_sample: (2,N) grid expected");
  const int c = src.shape()[0], h = src.shape()[1], w = src.shape()[2];
  const int n_px = grid.shape()[1];

  auto node = ad::detail::make_node<T>({c, n_px}, {src.node(), grid.node()});
  std::vector<uint8_t> valid(n_px, 0);
  const T* gv = grid.value().data();
  const T* sv = src.value().data();
  T* ov = node->value.data();

  // Corner indices and weights are fixed by the forward pass and reused in
  // backward; x == w-1 snaps to the last full cell so integer grids stay
  // exact at the border.
  std::vector<int> x0s(n_px), y0s(n_px);
  for (int i = 0; i < n_px; ++i) {
    const T x = gv[i], y = gv[n_px + i];
    if (!(std::isfinite(static_cast<double>(x)) && std::isfinite(static_cast<double>(y))) ||
        x < T(0) || y < T(0) || x > T(w - 1) || y > T(h - 1)) {
      x0s[i] = -1;
      continue;
    }
    valid[i] = 1;
    int x0 = static_cast<int>(std::floor(static_cast<double>(x)));
    int y0 = static_cast<int>(std::floor(static_cast<double>(y)));
    if (x0 >= w - 1) x0 = w - 2;
    if (y0 >= h - 1) y0 = h - 2;
    if (w == 1) x0 = 0;
    if (h == 1) y0 = 0;
    x0s[i] = x0;
    y0s[i] = y0;
    const T ax = x - T(x0), ay = y - T(y0);
    const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    for (int ic = 0; ic < c; ++ic) {
      const T* plane = sv + static_cast<size_t>(ic) * h * w;
      const T v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
      const T v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
      ov[ic * n_px + i] =
          (T(1) - ay) * ((T(1) - ax) * v00 + ax * v01) + ay * ((T(1) - ax) * v10 + ax * v11);
    }
  }

  if (node->requires_grad) {
    auto sp = src.node();
    auto gp = grid.node();
    auto np = node.get();
    node->backprop = [sp, gp, np, c, h, w, n_px, x0s = std::move(x0s),
                      y0s = std::move(y0s)] {
      const T* gv = gp->value.data();
      const T* sv = sp->value.data();
      for (int i = 0; i < n_px; ++i) {
        if (x0s[i] < 0) continue;
        const int x0 = x0s[i], y0 = y0s[i];
        const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        const T ax = gv[i] - T(x0), ay = gv[n_px + i] - T(y0);
        T gx_acc = T(0), gy_acc = T(0);
        for (int ic = 0; ic < c; ++ic) {
          const T g = np->grad[ic * n_px + i];
          if (g == T(0)) continue;
          const size_t base = static_cast<size_t>(ic) * h * w;
          const T v00 = sv[base + y0 * w + x0], v01 = sv[base + y0 * w + x1];
          const T v10 = sv[base + y1 * w + x0], v11 = sv[base + y1 * w + x1];
          if (sp->requires_grad) {
            sp->grad[base + y0 * w + x0] += g * (T(1) - ay) * (T(1) - ax);
            sp->grad[base + y0 * w + x1] += g * (T(1) - ay) * ax;
            sp->grad[base + y1 * w + x0] += g * ay * (T(1) - ax);
            sp->grad[base + y1 * w + x1] += g * ay * ax;
          }
          gx_acc += g * ((T(1) - ay) * (v01 - v00) + ay * (v11 - v10));
          gy_acc += g * ((T(1) - ax) * (v10 - v00) + ax * (v11 - v01));
        }
        if (gp->requires_grad) {
          gp->grad[i] += gx_acc;
          gp->grad[n_px + i] += gy_acc;
        }
      }
    };
  }
  return {Var<T>(node), std::move(valid)};
}

/// 3x3 box filter normalized by the in-image window size, per channel.
template <typename T>
Var<T> box3(const Var<T>& x) {
  ad::detail::require(x.shape().size() == 3, "box3: (C,H,W) expected");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  auto n = ad::detail::make_node<T>(x.shape(), {x.node()});
  for (int ic = 0; ic < c; ++ic)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        T acc = T(0);
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int iy = y + dy, ix = xx + dx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            acc += x.value()[(ic * h + iy) * w + ix];
            ++cnt;
          }
        n->value[(ic * h + y) * w + xx] = acc / T(cnt);
      }
  if (n->requires_grad) {
    auto xp = x.node();
    auto np = n.get();
    n->backprop = [xp, np, c, h, w] {
      for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            T acc = T(0);
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int oy = y + dy, ox = xx + dx;
                if (oy < 0 || oy >= h || ox < 0 || ox >= w) continue;
                const int cnt = (std::min(oy + 1, h - 1) - std::max(oy - 1, 0) + 1) *
                                (std::min(ox + 1, w - 1) - std::max(ox - 1, 0) + 1);
                acc += np->grad[(ic * h + oy) * w + ox] / T(cnt);
              }
            xp->grad[(ic * h + y) * w + xx] += acc;
          }
    };
  }
  return Var<T>(n);
}

/// Channel mean: (C,H,W) -> (1,H,W).
template <typename T>
Var<T> mean_channels(const Var<T>& x) {
  ad::detail::require(x.shape().size() == 3, "mean_channels: (C,H,W) expected");
  const int c = x.shape()[0];
  if (c == 1) return x;
  Var<T> acc = ad::slice0(x, 0, 1);
  for (int ic = 1; ic < c; ++ic) acc = ad::add(acc, ad::slice0(x, ic, 1));
  return ad::scale(acc, T(1) / T(c));
}

/// Per-pixel structural similarity with 3x3 mean windows and the standard
/// stabilizers C1 = 0.01^2, C2 = 0.03^2; channels are averaged. Output is
/// (1, H, W).
template <typename T>
Var<T> ssim_map(const Var<T>& a, const Var<T>& b) {
  ad::detail::require(a.shape() == b.shape(),
                      "ssim_map: shape mismatch " + ad::shape_str(a.shape()) + " vs " +
                          ad::shape_str(b.shape()));
  const T c1 = T(0.01 * 0.01), c2 = T(0.03 * 0.03);
  auto mu_a = box3(a);
  auto mu_b = box3(b);
  auto mu_aa = ad::mul(mu_a, mu_a);
  auto mu_bb = ad::mul(mu_b, mu_b);
  auto mu_ab = ad::mul(mu_a, mu_b);
  auto var_a = ad::sub(box3(ad::mul(a, a)), mu_aa);
  auto var_b = ad::sub(box3(ad::mul(b, b)), mu_bb);
  auto cov = ad::sub(box3(ad::mul(a, b)), mu_ab);
  auto num = ad::mul(ad::add_const(ad::scale(mu_ab, T(2)), c1),
                     ad::add_const(ad::scale(cov, T(2)), c2));
  auto den = ad::mul(ad::add_const(ad::add(mu_aa, mu_bb), c1),
                     ad::add_const(ad::add(var_a, var_b), c2));
  return mean_channels(ad::div(num, den));
}

/// Forward-difference gradients; the last column (gx) and last row (gy) are
/// zero.
template <typename T>
std::pair<Var<T>, Var<T>> image_gradients(const Var<T>& x) {
  ad::detail::require(x.shape().size() == 3 && x.shape()[1] >= 2 && x.shape()[2] >= 2,
                      "image_gradients: need (C,H,W) with H,W >= 2, got " +
                          ad::shape_str(x.shape()));
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];

  auto gx = ad::detail::make_node<T>(x.shape(), {x.node()});
  auto gy = ad::detail::make_node<T>(x.shape(), {x.node()});
  for (int ic = 0; ic < c; ++ic)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        const size_t i = (static_cast<size_t>(ic) * h + y) * w + xx;
        gx->value[i] = xx + 1 < w ? x.value()[i + 1] - x.value()[i] : T(0);
        gy->value[i] = y + 1 < h ? x.value()[i + w] - x.value()[i] : T(0);
      }
  if (gx->requires_grad) {
    auto xp = x.node();
    auto np = gx.get();
    gx->backprop = [xp, np, c, h, w] {
      for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            const size_t i = (static_cast<size_t>(ic) * h + y) * w + xx;
            if (xx + 1 < w) {
              xp->grad[i + 1] += np->grad[i];
              xp->grad[i] -= np->grad[i];
            }
          }
    };
  }
  if (gy->requires_grad) {
    auto xp = x.node();
    auto np = gy.get();
    gy->backprop = [xp, np, c, h, w] {
      for (int ic = 0; ic < c; ++ic)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            const size_t i = (static_cast<size_t>(ic) * h + y) * w + xx;
            if (y + 1 < h) {
              xp->grad[i + w] += np->grad[i];
              xp->grad[i] -= np->grad[i];
            }
          }
    };
  }
  return {Var<T>(gx), Var<T>(gy)};
}

}  // namespace ltmvo::img
