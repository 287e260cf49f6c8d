#pragma once

// The assembled pose system: a single-image depth network with skip
// connections, a shared pose encoder, and a two-layer recurrent pose module.
// The first layer predicts consecutive-frame motion; its hidden states feed
// a bounded memory that conditions the second layer, which predicts poses
// from the snippet anchor to every other frame.

#include <optional>
#include <string>
#include <vector>

#include "ltmvo/geom.hpp"
#include "ltmvo/image.hpp"
#include "ltmvo/losses.hpp"
#include "ltmvo/nn.hpp"
#include "ltmvo/pose_ops.hpp"
#include "ltmvo/trajectory.hpp"

namespace ltmvo::model {

using ad::Var;

struct ModelConfig {
  int width = 64;
  int height = 48;
  int channels = 1;
  int depth_ch1 = 12, depth_ch2 = 24, depth_ch3 = 48;
  int pose_ch1 = 16, pose_ch2 = 24, pose_ch3 = 32;
  int lstm_channels = 32;  // pose encoder output and both hidden states
  double depth_min = 0.1, depth_max = 100.0;
  double head_scale = 0.01;
  uint64_t seed = 42;

  void validate() const {
    ad::detail::require(width >= 16 && height >= 16, "model: resolution too small");
    ad::detail::require(channels >= 1 && lstm_channels >= 1, "model: channel counts");
    ad::detail::require(depth_min > 0 && depth_max > depth_min, "model: depth range");
  }
};

/// Bounded store of first-layer hidden states. Cleared at snippet start,
/// appended in frame order, read out as an attention-weighted convex
/// combination of the slots.
template <typename T>
class MemoryBuffer {
 public:
  explicit MemoryBuffer(size_t capacity) : capacity_(capacity) {}

  void clear() { slots_.clear(); }
  size_t size() const { return slots_.size(); }
  size_t capacity() const { return capacity_; }
  const std::vector<Var<T>>& slots() const { return slots_; }

  void push(Var<T> hidden) {
    ad::detail::require(slots_.size() < capacity_, "memory buffer: capacity exceeded");
    slots_.push_back(std::move(hidden));
  }

  /// Softmax over pooled-feature dot products, scaled by 1/sqrt(C); the
  /// result lies in the convex hull of the slots.
  Var<T> readout(const Var<T>& query) const {
    if (slots_.empty()) throw std::logic_error("memory buffer: readout from empty buffer");
    const int c = query.shape()[0];
    auto q = nn::global_avg_pool(query);
    std::vector<Var<T>> logits;
    logits.reserve(slots_.size());
    const T inv_sqrt_c = T(1.0 / std::sqrt(static_cast<double>(c)));
    for (const auto& slot : slots_)
      logits.push_back(ad::scale(ad::dot(q, nn::global_avg_pool(slot)), inv_sqrt_c));
    auto weights = ad::softmax(ad::concat0(logits));
    Var<T> out;
    for (size_t i = 0; i < slots_.size(); ++i) {
      auto term = ad::scale_by(slots_[i], ad::slice0(weights, static_cast<int>(i), 1));
      out = i == 0 ? term : ad::add(out, term);
    }
    return out;
  }

 private:
  size_t capacity_;
  std::vector<Var<T>> slots_;
};

template <typename T>
struct DepthOutput {
  Var<T> depth;    // (1, H, W), strictly inside (depth_min, depth_max)
  Var<T> feature;  // encoder output (depth_ch3, ~H/8, ~W/8)
};

template <typename T>
struct SnippetOutput {
  std::vector<Var<T>> rel_poses;             // (12), frame t-1 -> t, t = 1..N-1
  std::vector<Var<T>> abs_poses;             // (12), anchor -> t, t = 1..N-1
  std::vector<Var<T>> depths;                // (1,H,W) per frame
  std::vector<Var<T>> depth_features;        // per frame
  std::vector<Var<T>> first_hidden;          // per step, memory slot order
  std::vector<Var<T>> anchor_pose_features;  // per step (PEnc of anchor, frame t)
};

template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    auto conv = [&](const std::string& name, int co, int ci, int k) {
      params_.add(name + ".w", nn::kaiming_uniform<T>({co, ci, k, k}, ci * k * k, rng));
      params_.add(name + ".b", nn::zeros_leaf<T>({co}));
    };
    conv("depth.enc1", cfg_.depth_ch1, cfg_.channels, 3);
    conv("depth.enc2", cfg_.depth_ch2, cfg_.depth_ch1, 3);
    conv("depth.enc3", cfg_.depth_ch3, cfg_.depth_ch2, 3);
    conv("depth.dec3", cfg_.depth_ch2, cfg_.depth_ch3 + cfg_.depth_ch2, 3);
    conv("depth.dec2", cfg_.depth_ch1, cfg_.depth_ch2 + cfg_.depth_ch1, 3);
    conv("depth.dec1", cfg_.depth_ch1, cfg_.depth_ch1, 3);
    conv("depth.disp", 1, cfg_.depth_ch1, 1);
    conv("pose.enc1", cfg_.pose_ch1, 2 * cfg_.channels, 3);
    conv("pose.enc2", cfg_.pose_ch2, cfg_.pose_ch1, 3);
    conv("pose.enc3", cfg_.pose_ch3, cfg_.pose_ch2, 3);
    conv("pose.enc4", cfg_.lstm_channels, cfg_.pose_ch3, 3);
    conv("lstm1.gates", 4 * cfg_.lstm_channels, 2 * cfg_.lstm_channels, 3);
    params_.add("head1.w",
                nn::kaiming_uniform<T>({6, cfg_.lstm_channels}, cfg_.lstm_channels, rng));
    params_.add("head1.b", nn::zeros_leaf<T>({6}));
    conv("fuse2", cfg_.lstm_channels, cfg_.lstm_channels * 2 + cfg_.depth_ch3 * 2, 1);
    conv("lstm2.gates", 4 * cfg_.lstm_channels, 2 * cfg_.lstm_channels, 3);
    params_.add("head2.w",
                nn::kaiming_uniform<T>({6, cfg_.lstm_channels}, cfg_.lstm_channels, rng));
    params_.add("head2.b", nn::zeros_leaf<T>({6}));
  }

  const ModelConfig& config() const { return cfg_; }
  nn::ParamSet<T>& params() { return params_; }
  const nn::ParamSet<T>& params() const { return params_; }

  int lstm_h() const { return (cfg_.height + 15) / 16; }
  int lstm_w() const { return (cfg_.width + 15) / 16; }

  /// Parameters updated during long-range fine-tuning: the fusion layer, the
  /// second ConvLSTM and its pose head.
  static bool is_second_layer_param(const std::string& name) {
    return name.rfind("fuse2.", 0) == 0 || name.rfind("lstm2.", 0) == 0 ||
           name.rfind("head2.", 0) == 0;
  }

  DepthOutput<T> depth_net(const Var<T>& image) {
    check_image(image);
    auto e1 = ad::relu(conv(image, "depth.enc1", 2));
    auto e2 = ad::relu(conv(e1, "depth.enc2", 2));
    auto e3 = ad::relu(conv(e2, "depth.enc3", 2));
    auto d3 = ad::relu(conv(cat({up(e3, e2), e2}), "depth.dec3", 1));
    auto d2 = ad::relu(conv(cat({up(d3, e1), e1}), "depth.dec2", 1));
    auto d1 = ad::relu(conv(nn::upsample2x(d2, cfg_.height, cfg_.width), "depth.dec1", 1));
    auto disp = ad::sigmoid(conv2d(d1, params_.at("depth.disp.w"), params_.at("depth.disp.b")));
    // depth = 1 / (a * disp + b) spans (depth_min, depth_max)
    const T a = T(1.0 / cfg_.depth_min - 1.0 / cfg_.depth_max);
    const T b = T(1.0 / cfg_.depth_max);
    auto depth = ad::reciprocal(ad::add_const(ad::scale(disp, a), b));
    return {depth, e3};
  }

  /// Pair encoder; output is (lstm_channels, ceil(H/16), ceil(W/16)).
  Var<T> pose_encoder(const Var<T>& a, const Var<T>& b) {
    check_image(a);
    ad::detail::require(a.shape() == b.shape(), "pose_encoder: resolution mismatch " +
                                                    ad::shape_str(a.shape()) + " vs " +
                                                    ad::shape_str(b.shape()));
    auto x = ad::relu(conv(cat({a, b}), "pose.enc1", 2));
    x = ad::relu(conv(x, "pose.enc2", 2));
    x = ad::relu(conv(x, "pose.enc3", 2));
    return ad::relu(conv(x, "pose.enc4", 2));
  }

  /// Global average pool, linear projection to 6, scaled for near-identity
  /// outputs at init.
  Var<T> pose_head(const Var<T>& features, const std::string& which) {
    auto pooled = nn::global_avg_pool(features);
    auto twist = nn::linear(pooled, params_.at(which + ".w"), params_.at(which + ".b"));
    return ad::scale(twist, T(cfg_.head_scale));
  }

  nn::ConvLstmState<T> zero_state() {
    return nn::conv_lstm_zero_state<T>(cfg_.lstm_channels, lstm_h(), lstm_w());
  }

  struct FirstLayerStep {
    Var<T> pose;    // (12) prev -> cur
    Var<T> twist;   // (6)
    Var<T> hidden;  // memory slot
    nn::ConvLstmState<T> state;
  };

  FirstLayerStep first_layer_step(const Var<T>& prev, const Var<T>& cur,
                                  const nn::ConvLstmState<T>& state) {
    auto feat = pose_encoder(cur, prev);
    auto [out, next] = nn::conv_lstm_step(feat, state, params_.at("lstm1.gates.w"),
                                          params_.at("lstm1.gates.b"));
    auto twist = pose_head(out, "head1");
    return {pose::se3_exp_mat(twist), twist, next.hidden, next};
  }

  struct SecondLayerStep {
    Var<T> pose;   // (12) anchor -> cur
    Var<T> twist;  // (6)
    nn::ConvLstmState<T> state;
  };

  /// Fuses the anchor pose feature with pooled depth features of the anchor
  /// and current frame plus the memory readout, then advances the second
  /// recurrent layer.
  SecondLayerStep second_layer_step(const Var<T>& anchor_pose_feature,
                                    const Var<T>& anchor_depth_feature,
                                    const Var<T>& cur_depth_feature, const Var<T>& memory,
                                    const nn::ConvLstmState<T>& state) {
    auto fused = fuse_second_input(anchor_pose_feature, anchor_depth_feature,
                                   cur_depth_feature, memory);
    auto [out, next] = nn::conv_lstm_step(fused, state, params_.at("lstm2.gates.w"),
                                          params_.at("lstm2.gates.b"));
    auto twist = pose_head(out, "head2");
    return {pose::se3_exp_mat(twist), twist, next};
  }

  Var<T> fuse_second_input(const Var<T>& anchor_pose_feature,
                           const Var<T>& anchor_depth_feature,
                           const Var<T>& cur_depth_feature, const Var<T>& memory) {
    auto stacked = cat({anchor_pose_feature, pool_depth_feature(anchor_depth_feature),
                        pool_depth_feature(cur_depth_feature), memory});
    return ad::relu(conv(stacked, "fuse2", 1));
  }

  /// Depth encoder features live at ~H/8; the recurrent layers at ~H/16.
  Var<T> pool_depth_feature(const Var<T>& feature) {
    auto pooled = nn::avg_pool2(feature);
    ad::detail::require(pooled.shape()[1] == lstm_h() && pooled.shape()[2] == lstm_w(),
                        "pool_depth_feature: unexpected spatial size");
    return pooled;
  }

  /// Full snippet pass: depths for every frame, first layer over consecutive
  /// pairs filling the memory buffer, then the second layer per frame
  /// against anchor 0. Both recurrent states start at zero.
  SnippetOutput<T> forward_snippet(const std::vector<Var<T>>& frames,
                                   const geom::Intrinsics& K) {
    (void)K;
    const int n = static_cast<int>(frames.size());
    ad::detail::require(n >= 3, "forward_snippet: need at least 3 frames, got " +
                                    std::to_string(n));
    SnippetOutput<T> out;
    for (const auto& f : frames) {
      auto d = depth_net(f);
      out.depths.push_back(d.depth);
      out.depth_features.push_back(d.feature);
    }

    MemoryBuffer<T> memory(n);
    auto state1 = zero_state();
    for (int t = 1; t < n; ++t) {
      auto step = first_layer_step(frames[t - 1], frames[t], state1);
      state1 = step.state;
      memory.push(step.hidden);
      out.rel_poses.push_back(step.pose);
      out.first_hidden.push_back(step.hidden);
    }

    auto state2 = zero_state();
    for (int t = 1; t < n; ++t) {
      auto anchor_feat = pose_encoder(frames[0], frames[t]);
      auto mem = memory.readout(anchor_feat);
      auto step = second_layer_step(anchor_feat, out.depth_features[0],
                                    out.depth_features[t], mem, state2);
      state2 = step.state;
      out.abs_poses.push_back(step.pose);
      out.anchor_pose_features.push_back(anchor_feat);
    }
    return out;
  }

  Var<T> conv(const Var<T>& x, const std::string& name, int stride) {
    const int k = params_.at(name + ".w").shape()[2];
    return conv2d(x, params_.at(name + ".w"), params_.at(name + ".b"), stride,
                  k == 1 ? 0 : 1);
  }

 private:
  Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride = 1,
                int pad = 0) {
    return nn::conv2d(x, w, b, stride, pad);
  }
  Var<T> cat(const std::vector<Var<T>>& parts) { return nn::concat_channels(parts); }
  Var<T> up(const Var<T>& x, const Var<T>& like) {
    return nn::upsample2x(x, like.shape()[1], like.shape()[2]);
  }
  void check_image(const Var<T>& image) {
    ad::detail::require(image.shape().size() == 3 && image.shape()[0] == cfg_.channels &&
                            image.shape()[1] == cfg_.height && image.shape()[2] == cfg_.width,
                        "model: image shape " + ad::shape_str(image.shape()) +
                            " does not match configured resolution");
  }

  ModelConfig cfg_;
  nn::ParamSet<T> params_;
};

// ---------------------------------------------------------------------------
// Trajectory assembly
// ---------------------------------------------------------------------------

enum class InferMode { kSecondLayer, kFirstLayer };

inline InferMode infer_mode_from_string(const std::string& s) {
  if (s == "second_layer") return InferMode::kSecondLayer;
  if (s == "first_layer") return InferMode::kFirstLayer;
  throw std::invalid_argument("unknown inference mode: " + s);
}

/// Snippet-local poses: anchor frame index plus anchor->frame transforms for
/// the frames that follow it.
struct SnippetPoses {
  int anchor = 0;
  std::vector<geom::SE3> anchor_to_frame;
};

/// Chains snippet-local anchor->frame poses into a global trajectory of
/// world-from-camera poses (world = frame 0). Snippets must tile the
/// sequence with one shared frame between neighbors.
Trajectory assemble_trajectory(const std::vector<SnippetPoses>& snippets, int frame_count);

/// Tiling of a sequence into snippets of length <= n with stride n-1; a
/// short tail becomes a final shortened snippet (>= 3 frames) or, for a
/// single trailing frame, a length-2 chain entry.
std::vector<std::pair<int, int>> snippet_tiling(int frame_count, int snippet_len);

template <typename T>
Trajectory infer_trajectory(Model<T>& model, const std::vector<img::Image>& frames,
                            const geom::Intrinsics& K, InferMode mode, int snippet_len) {
  const int L = static_cast<int>(frames.size());
  ad::detail::require(L >= 3, "infer_trajectory: need at least 3 frames, got " +
                                  std::to_string(L));
  std::vector<SnippetPoses> locals;
  for (auto [start, len] : snippet_tiling(L, snippet_len)) {
    std::vector<Var<T>> window;
    window.reserve(len);
    for (int i = 0; i < len; ++i) window.push_back(frames[start + i].template to_var<T>());
    SnippetPoses sp;
    sp.anchor = start;
    if (len == 2) {
      // Tail too short for the second layer; chain a single first-layer step.
      auto step = model.first_layer_step(window[0], window[1], model.zero_state());
      sp.anchor_to_frame.push_back(pose::pose_to_se3(step.pose));
    } else {
      auto out = model.forward_snippet(window, K);
      if (mode == InferMode::kSecondLayer) {
        for (auto& p : out.abs_poses) sp.anchor_to_frame.push_back(pose::pose_to_se3(p));
      } else {
        geom::SE3 chain = geom::SE3::identity();
        for (auto& p : out.rel_poses) {
          chain = geom::se3_compose(pose::pose_to_se3(p), chain);
          sp.anchor_to_frame.push_back(chain);
        }
      }
    }
    locals.push_back(std::move(sp));
  }
  return assemble_trajectory(locals, L);
}

}  // namespace ltmvo::model
