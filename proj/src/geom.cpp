#include "ltmvo/geom.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace ltmvo::geom {

namespace {

Eigen::Matrix3d hat(const Eigen::Vector3d& w) {
  Eigen::Matrix3d m;
  m << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return m;
}

constexpr double kSmallAngle = 1e-8;

}  // namespace

Eigen::Matrix4d SE3::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

double SE3::orthonormality_drift() const {
  return (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).norm();
}

bool SE3::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  return orthonormality_drift() < tol && std::abs(rotation.determinant() - 1.0) < tol;
}

void Intrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0))
    throw std::invalid_argument("intrinsics: focal lengths must be positive");
  if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height))
    throw std::invalid_argument("intrinsics: principal point outside image");
}

Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0) {
    Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
    flip(2, 2) = -1;
    r = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return r;
}

SE3 se3_exp(const Twist& xi) {
  if (!xi.rot.allFinite() || !xi.trans.allFinite())
    throw std::invalid_argument("se3_exp: non-finite twist");
  const double theta = xi.rot.norm();
  const Eigen::Matrix3d K = hat(xi.rot);
  const Eigen::Matrix3d K2 = K * K;

  double a, b, c;  // sin t/t, (1-cos t)/t^2, (t-sin t)/t^3
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0;
    b = 0.5 - t2 / 24.0;
    c = 1.0 / 6.0 - t2 / 120.0;
  } else {
    const double t2 = theta * theta;
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / t2;
    c = (theta - std::sin(theta)) / (t2 * theta);
  }

  SE3 out;
  out.rotation = Eigen::Matrix3d::Identity() + a * K + b * K2;
  const Eigen::Matrix3d V = Eigen::Matrix3d::Identity() + b * K + c * K2;
  out.translation = V * xi.trans;
  return out;
}

Twist se3_log(const SE3& T) {
  const double tr = T.rotation.trace();
  const double cos_theta = std::min(1.0, std::max(-1.0, (tr - 1.0) * 0.5));
  const double theta = std::acos(cos_theta);
  if (theta >= M_PI - 1e-6)
    throw std::domain_error("se3_log: rotation angle at or near pi");

  Twist xi;
  Eigen::Vector3d w;
  const Eigen::Matrix3d A = T.rotation - T.rotation.transpose();
  w << A(2, 1), A(0, 2), A(1, 0);
  if (theta < kSmallAngle) {
    // R - R^T = 2 sin(theta) [w]_x with sin(theta)/theta -> 1
    xi.rot = 0.5 * w;
  } else {
    xi.rot = (theta / (2.0 * std::sin(theta))) * w;
  }

  const double t = xi.rot.norm();
  const Eigen::Matrix3d K = hat(xi.rot);
  const Eigen::Matrix3d K2 = K * K;
  Eigen::Matrix3d Vinv;
  if (t < kSmallAngle) {
    Vinv = Eigen::Matrix3d::Identity() - 0.5 * K + (1.0 / 12.0) * K2;
  } else {
    const double b = (1.0 - std::cos(t)) / (t * t);
    const double a = std::sin(t) / t;
    const double coef = (1.0 - a / (2.0 * b)) / (t * t);
    Vinv = Eigen::Matrix3d::Identity() - 0.5 * K + coef * K2;
  }
  xi.trans = Vinv * T.translation;
  return xi;
}

SE3 se3_compose(const SE3& a, const SE3& b) {
  SE3 out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  if (out.orthonormality_drift() > 1e-12)
    out.rotation = nearest_rotation(out.rotation);
  return out;
}

SE3 se3_inverse(const SE3& t) {
  SE3 out;
  out.rotation = t.rotation.transpose();
  out.translation = -(out.rotation * t.translation);
  return out;
}

CorrespondenceGrid correspondence_grid(const Intrinsics& K, const SE3& pose,
                                       const std::vector<double>& depth) {
  K.validate();
  const int w = K.width, h = K.height;
  if (static_cast<int>(depth.size()) != w * h)
    throw std::invalid_argument("correspondence_grid: depth size mismatch");

  CorrespondenceGrid g;
  g.width = w;
  g.height = h;
  g.x.assign(static_cast<size_t>(w) * h, 0.0);
  g.y.assign(static_cast<size_t>(w) * h, 0.0);
  g.valid.assign(static_cast<size_t>(w) * h, 0);

  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const size_t i = static_cast<size_t>(v) * w + u;
      const double d = depth[i];
      if (!(d > 0.0)) continue;  // non-positive depth marks the pixel invalid
      const Eigen::Vector3d p = pose.apply(d * K.ray(u, v));
      if (!(p.z() > 0.0)) continue;
      const double tu = K.fx * p.x() / p.z() + K.cx;
      const double tv = K.fy * p.y() / p.z() + K.cy;
      g.x[i] = tu;
      g.y[i] = tv;
      g.valid[i] = tu >= 0.0 && tu <= w - 1.0 && tv >= 0.0 && tv <= h - 1.0;
    }
  }
  return g;
}

}  // namespace ltmvo::geom
