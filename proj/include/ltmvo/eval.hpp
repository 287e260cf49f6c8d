#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ltmvo/geom.hpp"
#include "ltmvo/trajectory.hpp"

namespace ltmvo::eval {

enum class Alignment { kSim3, kSe3, kNone };

Alignment alignment_from_string(const std::string& s);
std::string to_string(Alignment a);

struct SimilarityTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return scale * (rotation * p) + translation;
  }
};

/// Least-squares similarity (or rigid, with scale pinned to 1) fit of est
/// positions onto gt positions over matching frame indices. Closed-form SVD
/// solution with determinant correction. Throws on fewer than 3 pairs or a
/// degenerate (rank < 2) point configuration.
SimilarityTransform umeyama_align(const Trajectory& est, const Trajectory& gt,
                                  Alignment mode);

/// Applies the transform to every pose (positions scaled and rotated,
/// orientations rotated).
Trajectory apply_transform(const Trajectory& traj, const SimilarityTransform& t);

/// RMSE of position differences after the requested alignment.
double ate_rmse(const Trajectory& est, const Trajectory& gt, Alignment mode);

struct RelErrorEntry {
  double length = 0;       // segment length in gt scene units
  double rel_trans = 0;    // percent
  double rel_rot = 0;      // degrees per unit length
  int count = 0;           // subsequences that qualified
};

struct RelErrorOptions {
  /// Segment lengths are {100,...,800} * length_scale so short synthetic
  /// paths can exercise the metric.
  double length_scale = 1.0;
  /// Pre-scale est translations with the Sim(3) alignment scale (monocular
  /// convention) before segment evaluation.
  bool prescale_with_sim3 = true;
};

struct RelErrors {
  double rel_trans = 0;  // percent, averaged over every qualifying segment
  double rel_rot = 0;    // deg per unit length
  std::vector<RelErrorEntry> per_length;
};

/// KITTI-style relative errors over all subsequences of lengths
/// {100..800}*scale, evaluated at every start frame. Throws when no segment
/// qualifies at any length.
RelErrors kitti_rel_errors(const Trajectory& est, const Trajectory& gt,
                           const RelErrorOptions& opts = {});

struct SnippetAte {
  double mean = 0;
  double stddev = 0;
  int windows = 0;
  int skipped_degenerate = 0;
};

/// Sim(3)-aligns every window of n consecutive frames independently and
/// reports mean and standard deviation of the window ATE RMSE values.
SnippetAte snippet_ate(const Trajectory& est, const Trajectory& gt, int n = 5);

struct DepthMetrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, log_rmse = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;  // fractions under 1.25^k
};

/// Standard seven depth metrics over valid (positive gt) pixels, averaged
/// over frames. With median_scale, predictions are rescaled per frame by
/// median(gt)/median(pred).
DepthMetrics depth_metrics(const std::vector<std::vector<double>>& pred,
                           const std::vector<std::vector<double>>& gt,
                           bool median_scale = true);

struct MetricsReport {
  double ate_rmse = 0;
  double rel_trans = 0;
  double rel_rot = 0;
  std::vector<RelErrorEntry> per_length;
  Alignment alignment = Alignment::kSim3;
  std::optional<SnippetAte> snippet;
  std::optional<DepthMetrics> depth;

  std::string to_key_values() const;
  std::string to_csv() const;
};

/// x-z ground-plane polyline plot of est vs gt.
void write_trajectory_svg(const std::string& path, const Trajectory& est,
                          const Trajectory& gt);

}  // namespace ltmvo::eval
