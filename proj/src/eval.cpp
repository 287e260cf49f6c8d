#include "ltmvo/eval.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace ltmvo::eval {

Alignment alignment_from_string(const std::string& s) {
  if (s == "sim3") return Alignment::kSim3;
  if (s == "se3") return Alignment::kSe3;
  if (s == "none") return Alignment::kNone;
  throw std::invalid_argument("unknown alignment mode: " + s);
}

std::string to_string(Alignment a) {
  switch (a) {
    case Alignment::kSim3: return "sim3";
    case Alignment::kSe3: return "se3";
    case Alignment::kNone: return "none";
  }
  return "?";
}

namespace {

/// Positions of matching frame indices, est first.
std::pair<std::vector<Eigen::Vector3d>, std::vector<Eigen::Vector3d>> matched_positions(
    const Trajectory& est, const Trajectory& gt) {
  std::pair<std::vector<Eigen::Vector3d>, std::vector<Eigen::Vector3d>> out;
  size_t j = 0;
  for (const auto& [idx, pose] : est.poses) {
    while (j < gt.poses.size() && gt.poses[j].first < idx) ++j;
    if (j < gt.poses.size() && gt.poses[j].first == idx) {
      out.first.push_back(pose.translation);
      out.second.push_back(gt.poses[j].second.translation);
    }
  }
  return out;
}

SimilarityTransform umeyama_points(const std::vector<Eigen::Vector3d>& src,
                                   const std::vector<Eigen::Vector3d>& dst, bool with_scale) {
  if (src.size() < 3)
    throw std::invalid_argument("umeyama: need at least 3 matched positions, have " +
                                std::to_string(src.size()));
  const double n = static_cast<double>(src.size());
  Eigen::Vector3d mu_s = Eigen::Vector3d::Zero(), mu_d = Eigen::Vector3d::Zero();
  for (size_t i = 0; i < src.size(); ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= n;
  mu_d /= n;

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  double var_s = 0;
  for (size_t i = 0; i < src.size(); ++i) {
    cov += (dst[i] - mu_d) * (src[i] - mu_s).transpose();
    var_s += (src[i] - mu_s).squaredNorm();
  }
  cov /= n;
  var_s /= n;

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(0) <= 1e-12 || sv(1) <= 1e-12 * sv(0))
    throw std::invalid_argument("umeyama: degenerate point configuration");

  Eigen::Matrix3d S = Eigen::Matrix3d::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) S(2, 2) = -1;

  SimilarityTransform t;
  t.rotation = svd.matrixU() * S * svd.matrixV().transpose();
  if (with_scale) {
    if (var_s <= 0) throw std::invalid_argument("umeyama: stationary source positions");
    t.scale = (sv.asDiagonal().toDenseMatrix() * S).trace() / var_s;
  }
  t.translation = mu_d - t.scale * (t.rotation * mu_s);
  return t;
}

double path_angle(const Eigen::Matrix3d& r) {
  const double c = std::min(1.0, std::max(-1.0, (r.trace() - 1.0) * 0.5));
  return std::acos(c);
}

}  // namespace

SimilarityTransform umeyama_align(const Trajectory& est, const Trajectory& gt,
                                  Alignment mode) {
  if (mode == Alignment::kNone) return {};
  auto [src, dst] = matched_positions(est, gt);
  return umeyama_points(src, dst, mode == Alignment::kSim3);
}

Trajectory apply_transform(const Trajectory& traj, const SimilarityTransform& t) {
  Trajectory out = traj;
  for (auto& [idx, pose] : out.poses) {
    pose.translation = t.apply(pose.translation);
    pose.rotation = t.rotation * pose.rotation;
  }
  return out;
}

double ate_rmse(const Trajectory& est, const Trajectory& gt, Alignment mode) {
  const Trajectory aligned =
      mode == Alignment::kNone ? est : apply_transform(est, umeyama_align(est, gt, mode));
  auto [p_est, p_gt] = matched_positions(aligned, gt);
  if (p_est.empty()) throw std::invalid_argument("ate_rmse: no matched frames");
  double acc = 0;
  for (size_t i = 0; i < p_est.size(); ++i) acc += (p_est[i] - p_gt[i]).squaredNorm();
  return std::sqrt(acc / static_cast<double>(p_est.size()));
}

RelErrors kitti_rel_errors(const Trajectory& est, const Trajectory& gt,
                           const RelErrorOptions& opts) {
  auto [p_est, p_gt] = matched_positions(est, gt);
  if (p_est.size() < 2) throw std::invalid_argument("rel_errors: not enough matched frames");

  // Rebuild matched pose lists (positions + rotations) in index order.
  std::vector<geom::SE3> e, g;
  {
    size_t j = 0;
    for (const auto& [idx, pose] : est.poses) {
      while (j < gt.poses.size() && gt.poses[j].first < idx) ++j;
      if (j < gt.poses.size() && gt.poses[j].first == idx) {
        e.push_back(pose);
        g.push_back(gt.poses[j].second);
      }
    }
  }

  double scale = 1.0;
  if (opts.prescale_with_sim3) scale = umeyama_align(est, gt, Alignment::kSim3).scale;
  for (auto& pose : e) pose.translation *= scale;

  // Accumulated gt path length.
  std::vector<double> dist(g.size(), 0.0);
  for (size_t i = 1; i < g.size(); ++i)
    dist[i] = dist[i - 1] + (g[i].translation - g[i - 1].translation).norm();

  const double base_lengths[8] = {100, 200, 300, 400, 500, 600, 700, 800};
  RelErrors out;
  double t_sum = 0, r_sum = 0;
  int total = 0;
  for (double base : base_lengths) {
    const double len = base * opts.length_scale;
    RelErrorEntry entry;
    entry.length = len;
    double t_acc = 0, r_acc = 0;
    for (size_t first = 0; first < g.size(); ++first) {
      // First frame whose accumulated path length reaches first + len.
      size_t last = first;
      while (last < g.size() && dist[last] < dist[first] + len) ++last;
      if (last >= g.size()) break;
      const geom::SE3 delta_gt = geom::se3_compose(geom::se3_inverse(g[first]), g[last]);
      const geom::SE3 delta_est = geom::se3_compose(geom::se3_inverse(e[first]), e[last]);
      const geom::SE3 err = geom::se3_compose(geom::se3_inverse(delta_gt), delta_est);
      t_acc += err.translation.norm() / len * 100.0;
      r_acc += path_angle(err.rotation) * (180.0 / M_PI) / len;
      ++entry.count;
    }
    if (entry.count > 0) {
      entry.rel_trans = t_acc / entry.count;
      entry.rel_rot = r_acc / entry.count;
      out.per_length.push_back(entry);
      t_sum += t_acc;
      r_sum += r_acc;
      total += entry.count;
    }
  }
  if (total == 0)
    throw std::invalid_argument("rel_errors: no qualifying subsequence at any length");
  out.rel_trans = t_sum / total;
  out.rel_rot = r_sum / total;
  return out;
}

SnippetAte snippet_ate(const Trajectory& est, const Trajectory& gt, int n) {
  if (n < 3) throw std::invalid_argument("snippet_ate: window must be >= 3");
  if (static_cast<int>(est.poses.size()) < n)
    throw std::invalid_argument("snippet_ate: trajectory shorter than the window");

  std::vector<double> values;
  int skipped = 0;
  for (size_t start = 0; start + n <= est.poses.size(); ++start) {
    Trajectory we, wg;
    we.poses.assign(est.poses.begin() + start, est.poses.begin() + start + n);
    wg.poses.assign(gt.poses.begin() + start, gt.poses.begin() + start + n);
    try {
      values.push_back(ate_rmse(we, wg, Alignment::kSim3));
    } catch (const std::invalid_argument&) {
      ++skipped;  // collinear or stationary window
    }
  }
  SnippetAte out;
  out.windows = static_cast<int>(values.size());
  out.skipped_degenerate = skipped;
  if (!values.empty()) {
    double mean = 0;
    for (double v : values) mean += v;
    mean /= values.size();
    double var = 0;
    for (double v : values) var += (v - mean) * (v - mean);
    out.mean = mean;
    out.stddev = std::sqrt(var / values.size());
  }
  return out;
}

DepthMetrics depth_metrics(const std::vector<std::vector<double>>& pred,
                           const std::vector<std::vector<double>>& gt, bool median_scale) {
  if (pred.size() != gt.size() || pred.empty())
    throw std::invalid_argument("depth_metrics: frame count mismatch");
  DepthMetrics acc;
  int frames_used = 0;
  for (size_t f = 0; f < pred.size(); ++f) {
    if (pred[f].size() != gt[f].size())
      throw std::invalid_argument("depth_metrics: resolution mismatch at frame " +
                                  std::to_string(f));
    std::vector<double> p, g;
    for (size_t i = 0; i < gt[f].size(); ++i)
      if (gt[f][i] > 0 && pred[f][i] > 0) {
        p.push_back(pred[f][i]);
        g.push_back(gt[f][i]);
      }
    if (p.empty()) continue;
    if (median_scale) {
      auto med = [](std::vector<double> v) {
        std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
        return v[v.size() / 2];
      };
      const double s = med(g) / med(p);
      for (auto& v : p) v *= s;
    }
    double abs_rel = 0, sq_rel = 0, mse = 0, log_mse = 0, d1 = 0, d2 = 0, d3 = 0;
    for (size_t i = 0; i < p.size(); ++i) {
      const double diff = p[i] - g[i];
      abs_rel += std::abs(diff) / g[i];
      sq_rel += diff * diff / g[i];
      mse += diff * diff;
      const double ld = std::log(p[i]) - std::log(g[i]);
      log_mse += ld * ld;
      const double ratio = std::max(p[i] / g[i], g[i] / p[i]);
      d1 += ratio < 1.25;
      d2 += ratio < 1.25 * 1.25;
      d3 += ratio < 1.25 * 1.25 * 1.25;
    }
    const double n = static_cast<double>(p.size());
    acc.abs_rel += abs_rel / n;
    acc.sq_rel += sq_rel / n;
    acc.rmse += std::sqrt(mse / n);
    acc.log_rmse += std::sqrt(log_mse / n);
    acc.delta1 += d1 / n;
    acc.delta2 += d2 / n;
    acc.delta3 += d3 / n;
    ++frames_used;
  }
  if (frames_used == 0) throw std::invalid_argument("depth_metrics: no valid pixels");
  const double inv = 1.0 / frames_used;
  acc.abs_rel *= inv;
  acc.sq_rel *= inv;
  acc.rmse *= inv;
  acc.log_rmse *= inv;
  acc.delta1 *= inv;
  acc.delta2 *= inv;
  acc.delta3 *= inv;
  return acc;
}

std::string MetricsReport::to_key_values() const {
  std::ostringstream os;
  os.precision(12);
  os << "ate_rmse = " << ate_rmse << "\n";
  os << "rel_trans_percent = " << rel_trans << "\n";
  os << "rel_rot_deg_per_unit = " << rel_rot << "\n";
  os << "alignment = " << eval::to_string(alignment) << "\n";
  if (snippet) {
    os << "snippet_ate_mean = " << snippet->mean << "\n";
    os << "snippet_ate_std = " << snippet->stddev << "\n";
    os << "snippet_windows = " << snippet->windows << "\n";
    os << "snippet_skipped_degenerate = " << snippet->skipped_degenerate << "\n";
  }
  if (depth) {
    os << "depth_abs_rel = " << depth->abs_rel << "\n";
    os << "depth_sq_rel = " << depth->sq_rel << "\n";
    os << "depth_rmse = " << depth->rmse << "\n";
    os << "depth_log_rmse = " << depth->log_rmse << "\n";
    os << "depth_delta1 = " << depth->delta1 << "\n";
    os << "depth_delta2 = " << depth->delta2 << "\n";
    os << "depth_delta3 = " << depth->delta3 << "\n";
  }
  return os.str();
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os.precision(12);
  os << "length,rel_trans_percent,rel_rot_deg_per_unit,count\n";
  for (const auto& e : per_length)
    os << e.length << "," << e.rel_trans << "," << e.rel_rot << "," << e.count << "\n";
  return os.str();
}

void write_trajectory_svg(const std::string& path, const Trajectory& est,
                          const Trajectory& gt) {
  double min_x = 1e300, max_x = -1e300, min_z = 1e300, max_z = -1e300;
  auto extend = [&](const Trajectory& t) {
    for (const auto& [idx, pose] : t.poses) {
      min_x = std::min(min_x, pose.translation.x());
      max_x = std::max(max_x, pose.translation.x());
      min_z = std::min(min_z, pose.translation.z());
      max_z = std::max(max_z, pose.translation.z());
    }
  };
  extend(est);
  extend(gt);
  const double span = std::max({max_x - min_x, max_z - min_z, 1e-9});
  const double view = 640.0, margin = 40.0;
  const double s = (view - 2 * margin) / span;

  auto polyline = [&](const Trajectory& t, const char* color) {
    std::ostringstream os;
    os << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [idx, pose] : t.poses)
      os << margin + s * (pose.translation.x() - min_x) << ","
         << view - margin - s * (pose.translation.z() - min_z) << " ";
    os << "\"/>\n";
    return os.str();
  };

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("svg: cannot write " + path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << view << "\" height=\"" << view
     << "\">\n";
  os << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << polyline(gt, "#202020");
  os << polyline(est, "#d62728");
  os << "  <text x=\"10\" y=\"20\" font-family=\"monospace\" font-size=\"13\">"
        "ground truth (black) vs estimate (red), x-z plane</text>\n";
  os << "</svg>\n";
}

}  // namespace ltmvo::eval
