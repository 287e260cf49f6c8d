#pragma once

// Differentiable rigid-motion ops. In-graph poses are flat 12-vectors laid
// out as the row-major top 3x4 of the homogeneous matrix, so cycle penalties
// and warping both consume the same representation. Everything here is a
// composition of engine primitives except hat3 and pinhole_project, whose
// Jacobians are written out directly.

#include "ltmvo/ad.hpp"
#include "ltmvo/geom.hpp"

namespace ltmvo::pose {

using ad::Var;

/// Cross-product matrix of a 3-vector.
template <typename T>
Var<T> hat3(const Var<T>& w) {
  ad::detail::require(w.size() == 3, "hat3: 3-vector expected");
  auto n = ad::detail::make_node<T>({3, 3}, {w.node()});
  const T x = w.value()[0], y = w.value()[1], z = w.value()[2];
  n->value = {T(0), -z, y, z, T(0), -x, -y, x, T(0)};
  if (n->requires_grad) {
    auto wp = w.node();
    auto np = n.get();
    n->backprop = [wp, np] {
      wp->grad[0] += np->grad[7] - np->grad[5];
      wp->grad[1] += np->grad[2] - np->grad[6];
      wp->grad[2] += np->grad[3] - np->grad[1];
    };
  }
  return Var<T>(n);
}

template <typename T>
Var<T> identity3() {
  return Var<T>::constant({3, 3}, {T(1), T(0), T(0), T(0), T(1), T(0), T(0), T(0), T(1)});
}

template <typename T>
Var<T> pose_rotation(const Var<T>& pose) {
  return ad::reshape(ad::gather(pose, {0, 1, 2, 4, 5, 6, 8, 9, 10}), {3, 3});
}

template <typename T>
Var<T> pose_translation(const Var<T>& pose) {
  return ad::gather(pose, {3, 7, 11});
}

template <typename T>
Var<T> pose_join(const Var<T>& rot, const Var<T>& trans) {
  ad::detail::require(rot.size() == 9 && trans.size() == 3, "pose_join: shapes");
  auto r = ad::reshape(rot, {9});
  auto parts = ad::concat0<T>({r, trans});  // r0..r8 t0 t1 t2
  return ad::gather(parts, {0, 1, 2, 9, 3, 4, 5, 10, 6, 7, 8, 11});
}

template <typename T>
Var<T> transpose3(const Var<T>& rot) {
  return ad::reshape(ad::gather(ad::reshape(rot, {9}), {0, 3, 6, 1, 4, 7, 2, 5, 8}), {3, 3});
}

/// Exponential map from a 6-vector twist (axis-angle, translation) to a
/// 3x4 pose. Below 1e-8 rotation magnitude the trigonometric coefficients
/// switch to their Taylor forms, which are smooth functions of the squared
/// angle, so gradients stay exact on both branches.
template <typename T>
Var<T> se3_exp_mat(const Var<T>& twist) {
  ad::detail::require(twist.size() == 6, "se3_exp_mat: 6-vector expected");
  auto w = ad::slice0(twist, 0, 3);
  auto u = ad::slice0(twist, 3, 3);
  auto t2 = ad::sum(ad::square(w));

  Var<T> a, b, c;  // sin t / t, (1 - cos t)/t^2, (t - sin t)/t^3
  if (t2.value()[0] < T(1e-16)) {
    a = ad::add_const(ad::scale(t2, T(-1.0 / 6.0)), T(1));
    b = ad::add_const(ad::scale(t2, T(-1.0 / 24.0)), T(0.5));
    c = ad::add_const(ad::scale(t2, T(-1.0 / 120.0)), T(1.0 / 6.0));
  } else {
    auto t = ad::sqrt_op(t2);
    auto st = ad::sin_op(t);
    auto ct = ad::cos_op(t);
    a = ad::div(st, t);
    b = ad::div(ad::add_const(ad::neg(ct), T(1)), t2);
    c = ad::div(ad::sub(t, st), ad::mul(t2, t));
  }

  auto K = hat3(w);
  auto K2 = ad::matmul(K, K);
  auto I = identity3<T>();
  auto R = ad::add(I, ad::add(ad::scale_by(K, a), ad::scale_by(K2, b)));
  auto V = ad::add(I, ad::add(ad::scale_by(K, b), ad::scale_by(K2, c)));
  auto t_out = ad::reshape(ad::matmul(V, ad::reshape(u, {3, 1})), {3});
  return pose_join(R, t_out);
}

/// compose(a, b) applies b first: x -> a(b(x)).
template <typename T>
Var<T> pose_compose(const Var<T>& a, const Var<T>& b) {
  auto ra = pose_rotation(a);
  auto rb = pose_rotation(b);
  auto ta = pose_translation(a);
  auto tb = pose_translation(b);
  auto r = ad::matmul(ra, rb);
  auto t = ad::add(ad::reshape(ad::matmul(ra, ad::reshape(tb, {3, 1})), {3}), ta);
  return pose_join(r, t);
}

template <typename T>
Var<T> pose_inverse(const Var<T>& a) {
  auto rt = transpose3(pose_rotation(a));
  auto t = ad::neg(ad::reshape(ad::matmul(rt, ad::reshape(pose_translation(a), {3, 1})), {3}));
  return pose_join(rt, t);
}

template <typename T>
Var<T> identity_pose() {
  return Var<T>::constant(
      {12}, {T(1), T(0), T(0), T(0), T(0), T(1), T(0), T(0), T(0), T(0), T(1), T(0)});
}

template <typename T>
Var<T> pose_from(const geom::SE3& se3) {
  std::vector<T> v(12);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) v[r * 4 + c] = static_cast<T>(se3.rotation(r, c));
    v[r * 4 + 3] = static_cast<T>(se3.translation(r));
  }
  return Var<T>::constant({12}, std::move(v));
}

template <typename T>
geom::SE3 pose_to_se3(const Var<T>& pose) {
  geom::SE3 out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.rotation(r, c) = static_cast<double>(pose.value()[r * 4 + c]);
    out.translation(r) = static_cast<double>(pose.value()[r * 4 + 3]);
  }
  if (out.orthonormality_drift() > 1e-6)
    out.rotation = geom::nearest_rotation(out.rotation);
  return out;
}

/// Back-projected unit-depth rays for every pixel, as a (3, H*W) constant.
template <typename T>
Var<T> backproject_rays(const geom::Intrinsics& K) {
  const int n = K.width * K.height;
  std::vector<T> v(3 * static_cast<size_t>(n));
  for (int y = 0; y < K.height; ++y)
    for (int x = 0; x < K.width; ++x) {
      const int i = y * K.width + x;
      v[i] = static_cast<T>((x - K.cx) / K.fx);
      v[n + i] = static_cast<T>((y - K.cy) / K.fy);
      v[2 * n + i] = T(1);
    }
  return Var<T>::constant({3, n}, std::move(v));
}

/// pts: (3, N) camera points -> pose-transformed (3, N).
template <typename T>
Var<T> transform_points(const Var<T>& pose, const Var<T>& pts) {
  return ad::add_col_broadcast(ad::matmul(pose_rotation(pose), pts), pose_translation(pose));
}

template <typename T>
struct ProjectedGrid {
  Var<T> grid;                 // (2, N) pixel coordinates
  std::vector<uint8_t> valid;  // N; false behind the camera or out of frame
};

/// Pinhole projection of camera points onto the pixel grid. Points at or
/// behind the camera plane produce coordinate -1 with a false validity bit
/// and receive no gradient.
template <typename T>
ProjectedGrid<T> pinhole_project(const Var<T>& pts, const geom::Intrinsics& K) {
  ad::detail::require(pts.shape().size() == 2 && pts.shape()[0] == 3,
                      "pinhole_project: (3,N) expected");
  const int n_px = pts.shape()[1];
  auto node = ad::detail::make_node<T>({2, n_px}, {pts.node()});
  std::vector<uint8_t> valid(n_px, 0);
  const T* pv = pts.value().data();
  const T fx = static_cast<T>(K.fx), fy = static_cast<T>(K.fy);
  const T cx = static_cast<T>(K.cx), cy = static_cast<T>(K.cy);
  for (int i = 0; i < n_px; ++i) {
    const T z = pv[2 * n_px + i];
    if (!(z > T(0))) {
      node->value[i] = T(-1);
      node->value[n_px + i] = T(-1);
      continue;
    }
    const T u = fx * pv[i] / z + cx;
    const T v = fy * pv[n_px + i] / z + cy;
    node->value[i] = u;
    node->value[n_px + i] = v;
    valid[i] = u >= T(0) && u <= T(K.width - 1) && v >= T(0) && v <= T(K.height - 1);
  }
  if (node->requires_grad) {
    auto pp = pts.node();
    auto np = node.get();
    node->backprop = [pp, np, n_px, fx, fy] {
      const T* pv = pp->value.data();
      for (int i = 0; i < n_px; ++i) {
        const T z = pv[2 * n_px + i];
        if (!(z > T(0))) continue;
        const T gu = np->grad[i], gv = np->grad[n_px + i];
        const T inv_z = T(1) / z;
        pp->grad[i] += gu * fx * inv_z;
        pp->grad[n_px + i] += gv * fy * inv_z;
        pp->grad[2 * n_px + i] -=
            (gu * fx * pv[i] + gv * fy * pv[n_px + i]) * inv_z * inv_z;
      }
    };
  }
  return {Var<T>(node), std::move(valid)};
}

/// Differentiable correspondence grid: where each pixel of the depth-owning
/// frame lands in the frame `pose` maps into. depth is rank-1 (H*W).
template <typename T>
ProjectedGrid<T> correspondence_grid(const geom::Intrinsics& K, const Var<T>& pose,
                                     const Var<T>& depth) {
  ad::detail::require(depth.shape().size() == 1 &&
                          depth.size() == static_cast<int64_t>(K.width) * K.height,
                      "correspondence_grid: depth size mismatch");
  auto pts = ad::mul_row_broadcast(backproject_rays<T>(K), depth);
  return pinhole_project(transform_points(pose, pts), K);
}

}  // namespace ltmvo::pose
