#pragma once

// Stage-wise training: short-snippet end-to-end optimization of the full
// objective, feature extraction into per-sequence cache files, and
// long-window fine-tuning of the second recurrent layer over those caches.

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ltmvo/data.hpp"
#include "ltmvo/losses.hpp"
#include "ltmvo/model.hpp"

namespace ltmvo::train {

struct TrainConfig {
  int snippet_len = 7;     // N
  int long_snippets = 16;  // M; stage-2 windows span M*(N-1)+1 frames
  int batch_size = 2;
  int epochs = 20;
  double lr_initial = 5e-5;
  double lr_late = 5e-6;
  int lr_drop_epoch = 15;  // epochs 1..drop use lr_initial, the rest lr_late
  uint64_t seed = 42;
  int width = 64, height = 48, channels = 1;
  double lambda1 = losses::kDefaultLambda1;
  double lambda2 = losses::kDefaultLambda2;
  double grad_clip_norm = 10.0;

  void validate() const {
    if (snippet_len < 3) fail_invalid("train: snippet_len must be >= 3");
    if (long_snippets < 1) fail_invalid("train: long_snippets must be >= 1");
    if (!(lr_initial > 0) || !(lr_late > 0)) fail_invalid("train: learning rates");
    if (lr_drop_epoch > epochs) fail_invalid("train: lr_drop_epoch must be <= epochs");
    if (batch_size < 1 || epochs < 1) fail_invalid("train: batch/epochs");
  }

  double lr_for_epoch(int epoch) const {  // 1-based
    return epoch <= lr_drop_epoch ? lr_initial : lr_late;
  }

  int long_window_frames() const { return long_snippets * (snippet_len - 1) + 1; }
};

struct EpochStats {
  int epoch = 0;
  double lr = 0;
  int steps = 0;
  losses::LossBreakdown mean;
};

using ProgressFn = std::function<void(const EpochStats&)>;

/// Snippet forward + full objective for one window of frames.
losses::FullLoss<float> snippet_loss(model::Model<float>& m,
                                     const std::vector<ad::Var<float>>& frames,
                                     const geom::Intrinsics& K, const TrainConfig& cfg);

/// Short-range training: sliding snippet windows (stride 1) shuffled per
/// epoch under the config seed, Adam with the two-phase learning-rate
/// schedule. Aborts with a diagnostic naming the first non-finite component.
std::vector<EpochStats> train_stage1(model::Model<float>& m,
                                     const std::vector<data::Sequence>& dataset,
                                     const TrainConfig& cfg,
                                     const ProgressFn& progress = {});

// ---------------------------------------------------------------------------
// Feature cache
// ---------------------------------------------------------------------------

inline constexpr char kCacheMagic[] = "LTMC1";
inline constexpr uint32_t kCacheVersion = 1;

struct FrameRecord {
  // Empty shape means the field is absent for this frame (frame 0 has no
  // first-layer hidden state or anchor pose feature; tail frames beyond the
  // last full snippet only carry depth and depth features).
  std::vector<int> depth_shape, feat_shape, hidden_shape, pose_feat_shape;
  std::vector<float> depth, feat, hidden, pose_feat;
};

struct CacheHeader {
  uint32_t version = kCacheVersion;
  int snippet_len = 0;
  int stride = 0;
  int frame_count = 0;
  int width = 0, height = 0;
  int feat_channels = 0, hidden_channels = 0, pose_feat_channels = 0;
  std::array<uint8_t, 32> checkpoint_hash{};
};

/// Runs the stage-1 model over a sequence with the fixed tiling (stride
/// N-1, anchors at multiples of N-1) and writes one cache file. Deterministic
/// given the checkpoint.
void extract_and_cache_features(model::Model<float>& m, const data::Sequence& seq,
                                const TrainConfig& cfg,
                                const std::array<uint8_t, 32>& checkpoint_hash,
                                const std::string& cache_path);

/// Random access reader; frames are loaded on demand so the working set of a
/// stage-2 step is one window regardless of sequence or dataset size.
class CacheReader {
 public:
  explicit CacheReader(const std::string& path);
  const CacheHeader& header() const { return header_; }
  FrameRecord read_frame(int index) const;

 private:
  std::string path_;
  CacheHeader header_;
  std::vector<uint64_t> offsets_;
};

// ---------------------------------------------------------------------------
// Stage 2
// ---------------------------------------------------------------------------

struct Stage2Item {
  const data::Sequence* sequence = nullptr;
  std::string cache_path;
};

struct Stage2Result {
  std::vector<EpochStats> curve;
  int skipped_windows = 0;
};

/// Long-range fine-tuning of the fusion layer, second ConvLSTM and second
/// pose head over cached features. All other parameters are left untouched.
/// Windows that do not fit a sequence are skipped (an error if none remain).
Stage2Result train_stage2(model::Model<float>& m, const std::vector<Stage2Item>& items,
                          const TrainConfig& cfg, const ProgressFn& progress = {});

/// Second-layer forward over one long window from cached features; returns
/// anchor->frame poses per snippet. Shared by training, the cache-vs-online
/// check and long-loss evaluation.
struct LongWindowForward {
  std::vector<std::vector<ad::Var<float>>> abs_poses;  // [snippet][k]
  std::vector<ad::Var<float>> anchor_depths;
};

LongWindowForward forward_long_window(model::Model<float>& m, const CacheReader& cache,
                                      int start_frame, int num_snippets, int snippet_len);

}  // namespace ltmvo::train
