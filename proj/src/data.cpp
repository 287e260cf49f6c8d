#include "ltmvo/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "ltmvo/checkpoint.hpp"
#include "ltmvo/common.hpp"
#include "ltmvo/rng.hpp"

namespace fs = std::filesystem;

namespace ltmvo::data {

void SynthConfig::validate() const {
  if (frame_count < 2) fail_invalid("synth: frame_count must be >= 2");
  if (width < 8 || height < 8) fail_invalid("synth: resolution too small");
  if (channels < 1 || channels > 3) fail_invalid("synth: channels must be 1..3");
  if (!(depth_base > depth_amplitude)) fail_invalid("synth: depth field not positive");
  if (texture_octaves < 1 || waves_per_octave < 1) fail_invalid("synth: texture config");
  if (smooth_window < 1) fail_invalid("synth: smooth_window must be >= 1");
}

namespace {

struct Wave {
  double fx, fy, phase, amp;
};

// Smooth field as a sum of cosine waves; analytic everywhere, so frames can
// be rendered at continuous coordinates without interpolation error.
struct WaveField {
  std::vector<Wave> waves;
  double offset = 0.0;

  double eval(double u, double v) const {
    double acc = offset;
    for (const auto& w : waves)
      acc += w.amp * std::cos(2.0 * M_PI * (w.fx * u + w.fy * v) + w.phase);
    return acc;
  }

  void grad(double u, double v, double& du, double& dv) const {
    du = 0.0;
    dv = 0.0;
    for (const auto& w : waves) {
      const double s =
          -w.amp * std::sin(2.0 * M_PI * (w.fx * u + w.fy * v) + w.phase) * 2.0 * M_PI;
      du += s * w.fx;
      dv += s * w.fy;
    }
  }
};

WaveField make_texture(const SynthConfig& cfg, Rng& rng) {
  WaveField f;
  f.offset = 0.5;
  double weight_sum = 0;
  for (int o = 0; o < cfg.texture_octaves; ++o) weight_sum += std::pow(0.5, o);
  const double total_amp = 0.42;
  for (int o = 0; o < cfg.texture_octaves; ++o) {
    const double octave_amp = total_amp * std::pow(0.5, o) / weight_sum;
    const double base = cfg.texture_base_freq * std::pow(2.0, o);
    for (int k = 0; k < cfg.waves_per_octave; ++k) {
      const double ang = rng.uniform(0.0, 2.0 * M_PI);
      const double freq = base * rng.uniform(0.6, 1.0);
      f.waves.push_back({freq * std::cos(ang), freq * std::sin(ang),
                         rng.uniform(0.0, 2.0 * M_PI), octave_amp / cfg.waves_per_octave});
    }
  }
  return f;
}

WaveField make_depth_field(const SynthConfig& cfg, Rng& rng) {
  WaveField f;
  f.offset = cfg.depth_base;
  for (int k = 0; k < cfg.depth_waves; ++k) {
    const double ang = rng.uniform(0.0, 2.0 * M_PI);
    const double freq = cfg.depth_freq * rng.uniform(0.4, 1.0);
    f.waves.push_back({freq * std::cos(ang), freq * std::sin(ang),
                       rng.uniform(0.0, 2.0 * M_PI),
                       cfg.depth_amplitude / cfg.depth_waves});
  }
  return f;
}

struct Surface {
  const WaveField* depth0;
  geom::Intrinsics K;

  Eigen::Vector3d point(double u, double v) const {
    return depth0->eval(u, v) * K.ray(u, v);
  }

  void point_jacobian(double u, double v, Eigen::Vector3d& dpu, Eigen::Vector3d& dpv) const {
    double du, dv_;
    depth0->grad(u, v, du, dv_);
    const Eigen::Vector3d r = K.ray(u, v);
    const double d = depth0->eval(u, v);
    dpu = du * r + d * Eigen::Vector3d(1.0 / K.fx, 0, 0);
    dpv = dv_ * r + d * Eigen::Vector3d(0, 1.0 / K.fy, 0);
  }
};

// Finds the canonical coordinate whose surface point projects to pixel
// (px, py) in the frame reached by origin_to_t. Damped Newton on the 2D
// reprojection residual; returns false if it fails to converge.
bool invert_projection(const Surface& surf, const geom::SE3& origin_to_t, double px,
                       double py, double& u, double& v, double& depth_out) {
  const auto& K = surf.K;
  auto residual = [&](double uu, double vv, double& rx, double& ry, double& z) {
    const Eigen::Vector3d y = origin_to_t.apply(surf.point(uu, vv));
    z = y.z();
    if (!(z > 1e-9)) return false;
    rx = K.fx * y.x() / z + K.cx - px;
    ry = K.fy * y.y() / z + K.cy - py;
    return true;
  };

  double rx, ry, z;
  if (!residual(u, v, rx, ry, z)) return false;
  for (int it = 0; it < 80; ++it) {
    double err = std::hypot(rx, ry);
    if (err < 1e-11) {
      depth_out = z;
      return true;
    }
    Eigen::Vector3d dpu, dpv;
    surf.point_jacobian(u, v, dpu, dpv);
    const Eigen::Vector3d yu = origin_to_t.rotation * dpu;
    const Eigen::Vector3d yv = origin_to_t.rotation * dpv;
    const Eigen::Vector3d y = origin_to_t.apply(surf.point(u, v));
    const double iz = 1.0 / y.z();
    // d(residual)/d(u,v)
    const double j00 = K.fx * (yu.x() * iz - y.x() * yu.z() * iz * iz);
    const double j01 = K.fx * (yv.x() * iz - y.x() * yv.z() * iz * iz);
    const double j10 = K.fy * (yu.y() * iz - y.y() * yu.z() * iz * iz);
    const double j11 = K.fy * (yv.y() * iz - y.y() * yv.z() * iz * iz);
    const double det = j00 * j11 - j01 * j10;
    if (std::abs(det) < 1e-14) return false;
    const double step_u = (j11 * rx - j01 * ry) / det;
    const double step_v = (-j10 * rx + j00 * ry) / det;

    double scale = 1.0;
    for (int back = 0; back < 12; ++back) {
      double nu = u - scale * step_u, nv = v - scale * step_v;
      double nrx, nry, nz;
      if (residual(nu, nv, nrx, nry, nz) && std::hypot(nrx, nry) < err) {
        u = nu;
        v = nv;
        rx = nrx;
        ry = nry;
        z = nz;
        break;
      }
      scale *= 0.5;
      if (back == 11) return false;
    }
  }
  return false;
}

double inframe_fraction(const geom::Intrinsics& K, const geom::SE3& rel,
                        const std::vector<double>& depth) {
  const auto grid = geom::correspondence_grid(K, rel, depth);
  int64_t valid = 0;
  for (uint8_t m : grid.valid) valid += m;
  return static_cast<double>(valid) / static_cast<double>(grid.valid.size());
}

std::vector<geom::Twist> draw_motion(const SynthConfig& cfg, Rng& rng, double damp) {
  const int steps = cfg.frame_count - 1;
  std::vector<geom::Twist> raw(steps);
  for (auto& t : raw) {
    t.rot = Eigen::Vector3d(rng.normal(0, cfg.rot_std), rng.normal(0, cfg.rot_std),
                            rng.normal(0, cfg.rot_std));
    t.trans = Eigen::Vector3d(cfg.trans_bias_x + rng.normal(0, cfg.trans_std),
                              cfg.trans_bias_y + rng.normal(0, cfg.trans_std),
                              cfg.trans_bias_z + rng.normal(0, cfg.trans_std));
  }
  // Moving-average low-pass so the path is smooth at frame rate.
  std::vector<geom::Twist> smooth(steps);
  const int half = cfg.smooth_window / 2;
  for (int i = 0; i < steps; ++i) {
    Eigen::Vector3d r = Eigen::Vector3d::Zero(), t = Eigen::Vector3d::Zero();
    int cnt = 0;
    for (int j = std::max(0, i - half); j <= std::min(steps - 1, i + half); ++j) {
      r += raw[j].rot;
      t += raw[j].trans;
      ++cnt;
    }
    smooth[i].rot = damp * r / cnt;
    smooth[i].trans = damp * t / cnt;
  }
  return smooth;
}

}  // namespace

double photometric_consistency_error(const Sequence& seq, int t) {
  const auto& K = seq.intrinsics;
  const int w = K.width, h = K.height;
  const auto& gt = seq.gt_trajectory.value();
  // T_{t -> t+1} = (world_from_{t+1})^-1 * world_from_t
  const geom::SE3 rel =
      geom::se3_compose(geom::se3_inverse(gt.poses[t + 1].second), gt.poses[t].second);
  const auto grid = geom::correspondence_grid(K, rel, seq.gt_depths[t]);
  const auto& src = seq.frames[t + 1];
  const auto& dst = seq.frames[t];

  double acc = 0;
  int64_t count = 0;
  for (int y = 2; y < h - 2; ++y)
    for (int x = 2; x < w - 2; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      if (!grid.valid[i]) continue;
      const double gx = grid.x[i], gy = grid.y[i];
      const int x0 = std::min(static_cast<int>(gx), w - 2);
      const int y0 = std::min(static_cast<int>(gy), h - 2);
      const double ax = gx - x0, ay = gy - y0;
      double px_err = 0;
      for (int c = 0; c < src.channels; ++c) {
        const double warped = (1 - ay) * ((1 - ax) * src.at(c, y0, x0) + ax * src.at(c, y0, x0 + 1)) +
                              ay * ((1 - ax) * src.at(c, y0 + 1, x0) + ax * src.at(c, y0 + 1, x0 + 1));
        const double d = warped - dst.at(c, y, x);
        px_err += d * d;
      }
      acc += std::sqrt(px_err);
      ++count;
    }
  return count > 0 ? acc / static_cast<double>(count) : 0.0;
}

Sequence synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  geom::Intrinsics K;
  K.fx = K.fy = cfg.focal;
  K.cx = cfg.width / 2.0;
  K.cy = cfg.height / 2.0;
  K.width = cfg.width;
  K.height = cfg.height;

  std::vector<WaveField> textures;
  for (int c = 0; c < cfg.channels; ++c) textures.push_back(make_texture(cfg, rng));
  const WaveField depth0 = make_depth_field(cfg, rng);
  const Surface surf{&depth0, K};

  double damp = 1.0;
  for (int attempt = 0; attempt < 5; ++attempt, damp *= 0.5) {
    Rng motion_rng = rng.fork(attempt);
    const auto twists = draw_motion(cfg, motion_rng, damp);

    Sequence seq;
    seq.name = "synth_" + std::to_string(cfg.seed);
    seq.intrinsics = K;
    seq.gt_trajectory = Trajectory{};

    std::vector<geom::SE3> origin_to(cfg.frame_count);
    origin_to[0] = geom::SE3::identity();
    for (int t = 1; t < cfg.frame_count; ++t)
      origin_to[t] = geom::se3_compose(geom::se3_exp(twists[t - 1]), origin_to[t - 1]);

    bool ok = true;
    std::vector<double> prev_u(static_cast<size_t>(cfg.width) * cfg.height);
    std::vector<double> prev_v(prev_u.size());
    for (int y = 0; y < cfg.height && ok; ++y)
      for (int x = 0; x < cfg.width; ++x) {
        prev_u[static_cast<size_t>(y) * cfg.width + x] = x;
        prev_v[static_cast<size_t>(y) * cfg.width + x] = y;
      }

    for (int t = 0; t < cfg.frame_count && ok; ++t) {
      img::Image frame(cfg.height, cfg.width, cfg.channels);
      std::vector<double> depth(static_cast<size_t>(cfg.width) * cfg.height);
      std::vector<uint8_t> failed(depth.size(), 0);
      parallel_for(cfg.height, [&](int64_t y) {
        for (int x = 0; x < cfg.width; ++x) {
          const size_t i = static_cast<size_t>(y) * cfg.width + x;
          double u = prev_u[i], v = prev_v[i], d = 0;
          if (!invert_projection(surf, origin_to[t], x, static_cast<double>(y), u, v, d)) {
            failed[i] = 1;
            continue;
          }
          prev_u[i] = u;
          prev_v[i] = v;
          depth[i] = d;
          for (int c = 0; c < cfg.channels; ++c) {
            double val = textures[c].eval(u, v);
            frame.at(c, static_cast<int>(y), x) =
                static_cast<float>(std::min(1.0, std::max(0.0, val)));
          }
        }
      });
      for (uint8_t f : failed)
        if (f) ok = false;
      if (!ok) break;
      seq.frames.push_back(std::move(frame));
      seq.gt_depths.push_back(std::move(depth));
      seq.gt_trajectory->poses.emplace_back(t, geom::se3_inverse(origin_to[t]));
    }
    if (!ok) continue;

    // In-frame budget between consecutive frames.
    for (int t = 0; t + 1 < cfg.frame_count && ok; ++t) {
      const geom::SE3 rel = geom::se3_compose(origin_to[t + 1], geom::se3_inverse(origin_to[t]));
      if (inframe_fraction(K, rel, seq.gt_depths[t]) < cfg.min_inframe_fraction) ok = false;
    }
    if (!ok) continue;

    // Generator self-consistency: the rendered frames must agree through the
    // exact depth and pose up to interpolation error.
    for (int t = 0; t + 1 < cfg.frame_count; ++t) {
      const double err = photometric_consistency_error(seq, t);
      if (err >= 1e-3)
        throw std::runtime_error("synth_generate: photometric consistency " +
                                 std::to_string(err) + " at frame " + std::to_string(t));
    }
    return seq;
  }
  throw std::runtime_error("synth_generate: could not satisfy the in-frame budget");
}

// ---------------------------------------------------------------------------
// Pose files
// ---------------------------------------------------------------------------

Trajectory parse_kitti_poses(const std::string& path, int* renormalized_count) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("poses: cannot open " + path);
  Trajectory traj;
  std::string line;
  int line_no = 0;
  int renorm = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream ls(line);
    double v[12];
    for (int i = 0; i < 12; ++i) {
      if (!(ls >> v[i]) || !std::isfinite(v[i]))
        throw std::runtime_error("poses: malformed line " + std::to_string(line_no) + " in " +
                                 path);
    }
    double extra;
    if (ls >> extra)
      throw std::runtime_error("poses: malformed line " + std::to_string(line_no) +
                               " (more than 12 values) in " + path);
    geom::SE3 pose;
    pose.rotation << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    pose.translation << v[3], v[7], v[11];
    const double drift = pose.orthonormality_drift();
    if (drift > 1e-3)
      throw std::runtime_error("poses: rotation on line " + std::to_string(line_no) +
                               " is not orthonormal (drift " + std::to_string(drift) + ")");
    if (drift > 1e-6) {
      pose.rotation = geom::nearest_rotation(pose.rotation);
      ++renorm;
    }
    traj.poses.emplace_back(line_no - 1, pose);
  }
  if (renormalized_count) *renormalized_count = renorm;
  return traj;
}

void write_kitti_poses(const Trajectory& traj, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("poses: cannot write " + path);
  char buf[32];
  for (const auto& [idx, pose] : traj.poses) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) {
        const double v = c < 3 ? pose.rotation(r, c) : pose.translation(r);
        std::snprintf(buf, sizeof(buf), "%.17e", v);
        os << buf << (r == 2 && c == 3 ? "" : " ");
      }
    os << "\n";
  }
  if (!os) throw std::runtime_error("poses: write failed for " + path);
}

geom::Intrinsics parse_kitti_calib(const std::string& path, int camera_id, int width,
                                   int height) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("calib: cannot open " + path);
  const std::string key = "P" + std::to_string(camera_id) + ":";
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind(key, 0) != 0) continue;
    std::istringstream ls(line.substr(key.size()));
    double v[12];
    for (int i = 0; i < 12; ++i)
      if (!(ls >> v[i])) throw std::runtime_error("calib: malformed projection in " + path);
    geom::Intrinsics k;
    k.fx = v[0];
    k.cx = v[2];
    k.fy = v[5];
    k.cy = v[6];
    k.width = width;
    k.height = height;
    k.validate();
    return k;
  }
  throw std::runtime_error("calib: no entry " + key + " in " + path);
}

void write_depth_raster(const std::string& path, int width, int height,
                        const std::vector<double>& depth) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("depth raster: cannot write " + path);
  checkpoint::put_u32(os, static_cast<uint32_t>(width));
  checkpoint::put_u32(os, static_cast<uint32_t>(height));
  for (double d : depth) checkpoint::put_f32(os, static_cast<float>(d));
}

std::vector<double> read_depth_raster(const std::string& path, int* width, int* height) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("depth raster: cannot open " + path);
  const int w = static_cast<int>(checkpoint::get_u32(is));
  const int h = static_cast<int>(checkpoint::get_u32(is));
  std::vector<double> depth(static_cast<size_t>(w) * h);
  for (auto& d : depth) d = checkpoint::get_f32(is);
  if (width) *width = w;
  if (height) *height = h;
  return depth;
}

void save_sequence(const Sequence& seq, const std::string& dir) {
  fs::create_directories(dir);
  char name[64];
  for (size_t t = 0; t < seq.frames.size(); ++t) {
    std::snprintf(name, sizeof(name), "%06zu.png", t);
    img::write_png((fs::path(dir) / name).string(), seq.frames[t]);
  }
  {
    std::ofstream os(fs::path(dir) / "calib.txt");
    char buf[256];
    std::snprintf(buf, sizeof(buf), "P0: %.17e 0 %.17e 0 0 %.17e %.17e 0 0 0 1 0",
                  seq.intrinsics.fx, seq.intrinsics.cx, seq.intrinsics.fy, seq.intrinsics.cy);
    os << buf << "\n";
  }
  if (seq.gt_trajectory)
    write_kitti_poses(*seq.gt_trajectory, (fs::path(dir) / "poses.txt").string());
  if (!seq.gt_depths.empty()) {
    fs::create_directories(fs::path(dir) / "depths");
    for (size_t t = 0; t < seq.gt_depths.size(); ++t) {
      std::snprintf(name, sizeof(name), "%06zu.f32", t);
      write_depth_raster((fs::path(dir) / "depths" / name).string(), seq.intrinsics.width,
                         seq.intrinsics.height, seq.gt_depths[t]);
    }
  }
}

namespace {

std::vector<fs::path> numbered_pngs(const fs::path& dir) {
  std::vector<fs::path> files;
  if (!fs::is_directory(dir)) return files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    const std::string stem = entry.path().stem().string();
    if (!stem.empty() && std::all_of(stem.begin(), stem.end(), [](char c) {
          return c >= '0' && c <= '9';
        }))
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

Sequence load_kitti_sequence(const std::string& dir, const LoadOptions& opts) {
  const fs::path root(dir);
  auto files = numbered_pngs(root);
  if (files.empty()) files = numbered_pngs(root / "image_0");
  if (files.empty()) throw std::runtime_error("sequence: no numbered png frames in " + dir);

  img::Image first = img::read_png(files[0].string());
  const int native_w = first.width, native_h = first.height;

  const fs::path calib = root / "calib.txt";
  if (!fs::exists(calib)) throw std::runtime_error("sequence: missing calib.txt in " + dir);
  geom::Intrinsics K = parse_kitti_calib(calib.string(), opts.camera_id, native_w, native_h);

  // Optional center crop to the target aspect ratio, then rescale; the
  // intrinsics follow both steps.
  int crop_x = 0, crop_y = 0, crop_w = native_w, crop_h = native_h;
  int out_w = native_w, out_h = native_h;
  if (opts.target_width > 0 && opts.target_height > 0) {
    out_w = opts.target_width;
    out_h = opts.target_height;
    const double want_aspect = static_cast<double>(out_w) / out_h;
    if (static_cast<double>(native_w) / native_h > want_aspect) {
      crop_w = static_cast<int>(std::lround(native_h * want_aspect));
      crop_x = (native_w - crop_w) / 2;
    } else {
      crop_h = static_cast<int>(std::lround(native_w / want_aspect));
      crop_y = (native_h - crop_h) / 2;
    }
    K.cx -= crop_x;
    K.cy -= crop_y;
    const double sx = static_cast<double>(out_w) / crop_w;
    const double sy = static_cast<double>(out_h) / crop_h;
    K.fx *= sx;
    K.fy *= sy;
    K.cx *= sx;
    K.cy *= sy;
    K.width = out_w;
    K.height = out_h;
  }

  Sequence seq;
  seq.name = root.filename().string();
  seq.intrinsics = K;
  for (const auto& f : files) {
    img::Image im = img::read_png(f.string());
    if (im.width != native_w || im.height != native_h)
      throw std::runtime_error("sequence: inconsistent frame size at " + f.string());
    if (opts.channels == 1 && im.channels != 1) im = im.to_gray();
    if (crop_w != native_w || crop_h != native_h) {
      img::Image cropped(crop_h, crop_w, im.channels);
      for (int c = 0; c < im.channels; ++c)
        for (int y = 0; y < crop_h; ++y)
          for (int x = 0; x < crop_w; ++x)
            cropped.at(c, y, x) = im.at(c, y + crop_y, x + crop_x);
      im = std::move(cropped);
    }
    if (out_w != im.width || out_h != im.height) im = im.resized(out_h, out_w);
    seq.frames.push_back(std::move(im));
  }

  const fs::path poses = root / "poses.txt";
  if (fs::exists(poses)) {
    seq.gt_trajectory = parse_kitti_poses(poses.string());
    if (seq.gt_trajectory->poses.size() != seq.frames.size())
      throw std::runtime_error("sequence: pose count does not match frame count in " + dir);
  }

  const fs::path depth_dir = root / "depths";
  if (fs::is_directory(depth_dir)) {
    for (size_t t = 0; t < seq.frames.size(); ++t) {
      char name[64];
      std::snprintf(name, sizeof(name), "%06zu.f32", t);
      const fs::path p = depth_dir / name;
      if (!fs::exists(p)) break;
      seq.gt_depths.push_back(read_depth_raster(p.string()));
    }
  }
  return seq;
}

}  // namespace ltmvo::data
