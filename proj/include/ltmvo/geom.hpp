#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <vector>

namespace ltmvo::geom {

/// 6-DoF motion parameterization: axis-angle rotation (radians) and
/// translation (scene units). Maps to/from SE3 via the exponential map.
struct Twist {
  Eigen::Vector3d rot = Eigen::Vector3d::Zero();
  Eigen::Vector3d trans = Eigen::Vector3d::Zero();
};

/// Rigid transform. By convention a pose T_{a->b} maps frame-a camera
/// coordinates into frame-b camera coordinates (right-handed, z forward,
/// x right, y down).
struct SE3 {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static SE3 identity() { return SE3{}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }

  /// 4x4 homogeneous form.
  Eigen::Matrix4d matrix() const;

  /// Frobenius distance of R^T R from the identity.
  double orthonormality_drift() const;
  bool is_valid(double tol = 1e-9) const;
};

struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  /// Throws std::invalid_argument if focal lengths or principal point are
  /// outside their valid ranges.
  void validate() const;

  /// Back-projected ray direction (z = 1) for pixel (u, v).
  Eigen::Vector3d ray(double u, double v) const {
    return {(u - cx) / fx, (v - cy) / fy, 1.0};
  }
};

/// Exponential map se(3) -> SE(3). Closed-form Rodrigues with a Taylor
/// fallback below 1e-8 rotation magnitude. Throws std::invalid_argument on
/// non-finite input.
SE3 se3_exp(const Twist& xi);

/// Logarithm map SE(3) -> se(3). Throws std::domain_error when the rotation
/// angle is at or beyond pi - 1e-6 (the branch cut is documented, not
/// handled).
Twist se3_log(const SE3& T);

/// Group product: (compose(A, B)).apply(p) == A.apply(B.apply(p)).
/// The rotation is re-projected onto SO(3) only when the orthonormality
/// drift exceeds 1e-12.
SE3 se3_compose(const SE3& a, const SE3& b);

SE3 se3_inverse(const SE3& t);

/// Nearest rotation matrix in Frobenius norm (SVD projection).
Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m);

/// Per-pixel correspondence induced by depth and a rigid motion. For every
/// pixel p of the frame that owns `depth`, returns the continuous pixel
/// coordinate of the same scene point in the frame that `pose` maps into.
struct CorrespondenceGrid {
  int width = 0, height = 0;
  std::vector<double> x;           // row-major H*W target x coordinates
  std::vector<double> y;           // row-major H*W target y coordinates
  std::vector<uint8_t> valid;      // false where depth <= 0, projected depth
                                   // <= 0, or the target is out of frame
};

CorrespondenceGrid correspondence_grid(const Intrinsics& K, const SE3& pose,
                                       const std::vector<double>& depth);

}  // namespace ltmvo::geom
