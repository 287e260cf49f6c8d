#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ltmvo/geom.hpp"
#include "ltmvo/image.hpp"
#include "ltmvo/trajectory.hpp"

namespace ltmvo::data {

/// A loaded or generated monocular sequence. Ground-truth fields are present
/// for synthetic data and for real data with pose files.
struct Sequence {
  std::string name;
  std::vector<img::Image> frames;
  geom::Intrinsics intrinsics;
  std::optional<Trajectory> gt_trajectory;        // world-from-camera
  std::vector<std::vector<double>> gt_depths;     // per frame, H*W; empty if unknown

  int frame_count() const { return static_cast<int>(frames.size()); }
};

/// Synthetic scene: a smoothly textured, gently bumped surface anchored to
/// frame 0, observed by a camera on a smooth random path that slides mostly
/// parallel to the surface. Rendering inverts the frame-0 surface
/// parameterization per pixel, so photometric consistency holds up to
/// bilinear interpolation error and ground truth is exact.
struct SynthConfig {
  int frame_count = 97;
  int width = 64, height = 48;
  int channels = 1;
  double focal = 60.0;

  int texture_octaves = 2;
  int waves_per_octave = 6;
  double texture_base_freq = 0.004;  // cycles/pixel of the lowest octave

  double depth_base = 5.0;
  double depth_amplitude = 0.5;
  double depth_freq = 0.008;  // cycles/pixel
  int depth_waves = 4;

  // Per-frame motion twist: bias plus noise, low-pass filtered.
  double trans_bias_x = 0.30, trans_bias_y = 0.04, trans_bias_z = 0.02;
  double trans_std = 0.10;
  double rot_std = 0.0025;  // radians
  int smooth_window = 7;

  double min_inframe_fraction = 0.9;
  uint64_t seed = 1;

  void validate() const;
};

/// Generates a sequence with exact per-frame depths and trajectory. Motion
/// is damped and regenerated when the consecutive-frame in-frame fraction
/// drops below the configured budget; throws after 5 attempts.
Sequence synth_generate(const SynthConfig& cfg);

/// Warps frame t+1 into frame t through the ground-truth depth and pose and
/// reports the mean L2 error over interior pixels (self-consistency probe;
/// also used as the post-generation assertion inside synth_generate).
double photometric_consistency_error(const Sequence& seq, int t);

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// KITTI pose file: one world-from-camera 3x4 matrix per line, 12 numbers
/// row-major. Rotations with orthonormality drift beyond 1e-3 are an error;
/// milder drift is re-projected with a warning counter.
Trajectory parse_kitti_poses(const std::string& path, int* renormalized_count = nullptr);
void write_kitti_poses(const Trajectory& traj, const std::string& path);

/// Calibration file with lines "Pi: <12 floats>"; returns the intrinsics of
/// the requested camera.
geom::Intrinsics parse_kitti_calib(const std::string& path, int camera_id, int width,
                                   int height);

/// Depth raster: 8-byte header (width, height as u32 LE) then f32 LE values.
void write_depth_raster(const std::string& path, int width, int height,
                        const std::vector<double>& depth);
std::vector<double> read_depth_raster(const std::string& path, int* width = nullptr,
                                      int* height = nullptr);

/// Writes a sequence as PNG frames, a calib file, a KITTI pose file (when
/// ground truth is present) and depth rasters (when present).
void save_sequence(const Sequence& seq, const std::string& dir);

struct LoadOptions {
  int camera_id = 0;       // calib entry to use
  int target_width = 0;    // 0 keeps the native resolution
  int target_height = 0;
  int channels = 0;        // 0 keeps native, 1 forces grayscale
};

/// Loads a sequence directory: zero-padded numeric PNG names (directly or
/// under image_0/), calib.txt, optional poses.txt, optional depths/.
/// Missing calibration is an error; missing poses just omit ground truth.
Sequence load_kitti_sequence(const std::string& dir, const LoadOptions& opts = {});

}  // namespace ltmvo::data
