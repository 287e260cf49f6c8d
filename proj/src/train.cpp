#include "ltmvo/train.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "ltmvo/checkpoint.hpp"
#include "ltmvo/rng.hpp"

namespace ltmvo::train {

namespace {

using FVar = ad::Var<float>;

void check_finite(const losses::LossBreakdown& b) {
  auto bad = [](double v) { return !std::isfinite(v); };
  if (bad(b.appearance)) throw std::runtime_error("train: appearance loss is not finite");
  if (bad(b.smoothness)) throw std::runtime_error("train: smoothness loss is not finite");
  if (bad(b.appearance_abs))
    throw std::runtime_error("train: anchor appearance loss is not finite");
  if (bad(b.cycle)) throw std::runtime_error("train: cycle loss is not finite");
  if (bad(b.total)) throw std::runtime_error("train: total loss is not finite");
}

void accumulate(losses::LossBreakdown& acc, const losses::LossBreakdown& b) {
  acc.appearance += b.appearance;
  acc.smoothness += b.smoothness;
  acc.appearance_abs += b.appearance_abs;
  acc.cycle += b.cycle;
  acc.total += b.total;
  acc.empty_mask_warning |= b.empty_mask_warning;
}

void divide(losses::LossBreakdown& acc, int n) {
  acc.appearance /= n;
  acc.smoothness /= n;
  acc.appearance_abs /= n;
  acc.cycle /= n;
  acc.total /= n;
}

std::vector<std::pair<std::string, FVar>> trainable_subset(model::Model<float>& m,
                                                           bool second_layer_only) {
  std::vector<std::pair<std::string, FVar>> out;
  for (auto& [name, p] : m.params())
    if (!second_layer_only || model::Model<float>::is_second_layer_param(name))
      out.emplace_back(name, p);
  return out;
}

}  // namespace

losses::FullLoss<float> snippet_loss(model::Model<float>& m,
                                     const std::vector<FVar>& frames,
                                     const geom::Intrinsics& K, const TrainConfig& cfg) {
  auto out = m.forward_snippet(frames, K);
  auto appearance = losses::appearance_loss<float>(frames, out.depths, out.rel_poses, K);
  FVar smooth = FVar::scalar(0.f);
  for (size_t t = 0; t < frames.size(); ++t)
    smooth = ad::add(smooth, losses::smoothness_loss(out.depths[t], frames[t]));
  smooth = ad::scale(smooth, 1.f / static_cast<float>(frames.size()));
  auto abs_app = losses::abs_appearance_loss<float>(frames, out.depths[0], out.abs_poses, K);
  auto cycle = losses::cycle_loss<float>(out.rel_poses, out.abs_poses);
  return losses::full_loss(appearance, smooth, abs_app, cycle, cfg.lambda1, cfg.lambda2);
}

std::vector<EpochStats> train_stage1(model::Model<float>& m,
                                     const std::vector<data::Sequence>& dataset,
                                     const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  const int n = cfg.snippet_len;
  std::vector<std::pair<int, int>> windows;  // (sequence, start)
  for (size_t s = 0; s < dataset.size(); ++s)
    for (int start = 0; start + n <= dataset[s].frame_count(); ++start)
      windows.emplace_back(static_cast<int>(s), start);
  if (windows.empty()) throw std::runtime_error("train_stage1: no snippet fits the dataset");

  auto trainables = trainable_subset(m, false);
  nn::AdamState<float> adam;
  Rng rng(cfg.seed);
  std::vector<EpochStats> curve;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(windows);
    const double lr = cfg.lr_for_epoch(epoch);
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.mean.lambda1 = cfg.lambda1;
    stats.mean.lambda2 = cfg.lambda2;

    for (size_t i = 0; i < windows.size(); i += cfg.batch_size) {
      const size_t batch_end = std::min(windows.size(), i + cfg.batch_size);
      const float inv_batch = 1.f / static_cast<float>(batch_end - i);
      m.params().zero_grad();
      for (size_t j = i; j < batch_end; ++j) {
        const auto& seq = dataset[windows[j].first];
        std::vector<FVar> frames;
        frames.reserve(n);
        for (int k = 0; k < n; ++k)
          frames.push_back(seq.frames[windows[j].second + k].to_var<float>());
        auto loss = snippet_loss(m, frames, seq.intrinsics, cfg);
        check_finite(loss.breakdown);
        ad::backward(ad::scale(loss.total, inv_batch));
        accumulate(stats.mean, loss.breakdown);
      }
      nn::clip_grad_norm(trainables, cfg.grad_clip_norm);
      nn::adam_step(trainables, adam, lr);
      ++stats.steps;
    }
    divide(stats.mean, static_cast<int>(windows.size()));
    curve.push_back(stats);
    if (progress) progress(stats);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Feature cache
// ---------------------------------------------------------------------------

namespace {

void write_frame_record(std::ostream& os, const FrameRecord& r) {
  checkpoint::write_tensor_record(os, r.depth_shape, r.depth);
  checkpoint::write_tensor_record(os, r.feat_shape, r.feat);
  checkpoint::write_tensor_record(os, r.hidden_shape, r.hidden);
  checkpoint::write_tensor_record(os, r.pose_feat_shape, r.pose_feat);
}

}  // namespace

void extract_and_cache_features(model::Model<float>& m, const data::Sequence& seq,
                                const TrainConfig& cfg,
                                const std::array<uint8_t, 32>& checkpoint_hash,
                                const std::string& cache_path) {
  const auto& mc = m.config();
  if (mc.width != seq.intrinsics.width || mc.height != seq.intrinsics.height)
    throw std::runtime_error("cache: sequence resolution does not match the model");
  const int n = cfg.snippet_len;
  const int frames = seq.frame_count();

  std::vector<FrameRecord> records(frames);
  std::vector<FVar> images;
  images.reserve(frames);
  for (int t = 0; t < frames; ++t) images.push_back(seq.frames[t].to_var<float>());

  for (int t = 0; t < frames; ++t) {
    auto d = m.depth_net(images[t]);
    records[t].depth_shape = d.depth.shape();
    records[t].depth = d.depth.value();
    records[t].feat_shape = d.feature.shape();
    records[t].feat = d.feature.value();
  }

  // First-layer hidden states and anchor pose features follow the fixed
  // tiling: anchors at multiples of N-1, full snippets only.
  for (int anchor = 0; anchor + n <= frames; anchor += n - 1) {
    auto state = m.zero_state();
    for (int k = 1; k < n; ++k) {
      auto step = m.first_layer_step(images[anchor + k - 1], images[anchor + k], state);
      state = step.state;
      records[anchor + k].hidden_shape = step.hidden.shape();
      records[anchor + k].hidden = step.hidden.value();
      auto pf = m.pose_encoder(images[anchor], images[anchor + k]);
      records[anchor + k].pose_feat_shape = pf.shape();
      records[anchor + k].pose_feat = pf.value();
    }
  }

  std::ofstream os(cache_path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cache: cannot write " + cache_path);
  os.write(kCacheMagic, 5);
  checkpoint::put_u32(os, kCacheVersion);
  checkpoint::put_u32(os, static_cast<uint32_t>(n));
  checkpoint::put_u32(os, static_cast<uint32_t>(n - 1));
  checkpoint::put_u32(os, static_cast<uint32_t>(frames));
  checkpoint::put_u32(os, static_cast<uint32_t>(mc.width));
  checkpoint::put_u32(os, static_cast<uint32_t>(mc.height));
  checkpoint::put_u32(os, static_cast<uint32_t>(mc.depth_ch3));
  checkpoint::put_u32(os, static_cast<uint32_t>(mc.lstm_channels));
  checkpoint::put_u32(os, static_cast<uint32_t>(mc.lstm_channels));
  os.write(reinterpret_cast<const char*>(checkpoint_hash.data()), 32);
  for (const auto& r : records) write_frame_record(os, r);
  if (!os) throw std::runtime_error("cache: write failed for " + cache_path);
}

CacheReader::CacheReader(const std::string& path) : path_(path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cache: cannot open " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kCacheMagic, 5) != 0)
    throw std::runtime_error("cache: bad magic in " + path);
  header_.version = checkpoint::get_u32(is);
  if (header_.version != kCacheVersion)
    throw std::runtime_error("cache: unsupported version in " + path);
  header_.snippet_len = static_cast<int>(checkpoint::get_u32(is));
  header_.stride = static_cast<int>(checkpoint::get_u32(is));
  header_.frame_count = static_cast<int>(checkpoint::get_u32(is));
  header_.width = static_cast<int>(checkpoint::get_u32(is));
  header_.height = static_cast<int>(checkpoint::get_u32(is));
  header_.feat_channels = static_cast<int>(checkpoint::get_u32(is));
  header_.hidden_channels = static_cast<int>(checkpoint::get_u32(is));
  header_.pose_feat_channels = static_cast<int>(checkpoint::get_u32(is));
  is.read(reinterpret_cast<char*>(header_.checkpoint_hash.data()), 32);
  if (!is) throw std::runtime_error("cache: truncated header in " + path);

  // One scan to index frame offsets; payloads are skipped, not loaded.
  offsets_.reserve(header_.frame_count);
  for (int f = 0; f < header_.frame_count; ++f) {
    offsets_.push_back(static_cast<uint64_t>(is.tellg()));
    for (int rec = 0; rec < 4; ++rec) {
      const uint32_t rank = checkpoint::get_u32(is);
      if (rank > 8) throw std::runtime_error("cache: corrupt record in " + path);
      uint64_t count = 1;
      for (uint32_t d = 0; d < rank; ++d) count *= checkpoint::get_u32(is);
      is.seekg(static_cast<std::streamoff>(count * 4), std::ios::cur);
      if (!is) throw std::runtime_error("cache: truncated records in " + path);
    }
  }
}

FrameRecord CacheReader::read_frame(int index) const {
  if (index < 0 || index >= header_.frame_count)
    throw std::out_of_range("cache: frame index out of range");
  std::ifstream is(path_, std::ios::binary);
  is.seekg(static_cast<std::streamoff>(offsets_[index]));
  FrameRecord r;
  std::tie(r.depth_shape, r.depth) = checkpoint::read_tensor_record(is);
  std::tie(r.feat_shape, r.feat) = checkpoint::read_tensor_record(is);
  std::tie(r.hidden_shape, r.hidden) = checkpoint::read_tensor_record(is);
  std::tie(r.pose_feat_shape, r.pose_feat) = checkpoint::read_tensor_record(is);
  return r;
}

// ---------------------------------------------------------------------------
// Stage 2
// ---------------------------------------------------------------------------

LongWindowForward forward_long_window(model::Model<float>& m, const CacheReader& cache,
                                      int start_frame, int num_snippets, int snippet_len) {
  const int n = snippet_len;
  if (start_frame % (n - 1) != 0)
    throw std::invalid_argument("long window: start frame must align with the cache tiling");
  if (start_frame + num_snippets * (n - 1) >= cache.header().frame_count)
    throw std::invalid_argument("long window: exceeds sequence length");

  LongWindowForward out;
  auto state = m.zero_state();  // persists across the window's snippets
  for (int s = 0; s < num_snippets; ++s) {
    const int anchor = start_frame + s * (n - 1);
    const FrameRecord anchor_rec = cache.read_frame(anchor);
    auto anchor_feat = FVar::constant(anchor_rec.feat_shape, anchor_rec.feat);
    out.anchor_depths.push_back(FVar::constant(anchor_rec.depth_shape, anchor_rec.depth));

    model::MemoryBuffer<float> memory(n);
    std::vector<FrameRecord> steps;
    steps.reserve(n - 1);
    for (int k = 1; k < n; ++k) {
      steps.push_back(cache.read_frame(anchor + k));
      if (steps.back().hidden_shape.empty())
        throw std::runtime_error("cache: missing hidden state at frame " +
                                 std::to_string(anchor + k));
      memory.push(FVar::constant(steps.back().hidden_shape, steps.back().hidden));
    }

    std::vector<FVar> poses;
    for (int k = 1; k < n; ++k) {
      const auto& rec = steps[k - 1];
      auto pose_feat = FVar::constant(rec.pose_feat_shape, rec.pose_feat);
      auto cur_feat = FVar::constant(rec.feat_shape, rec.feat);
      auto mem = memory.readout(pose_feat);
      auto step = m.second_layer_step(pose_feat, anchor_feat, cur_feat, mem, state);
      state = step.state;
      poses.push_back(step.pose);
    }
    out.abs_poses.push_back(std::move(poses));
  }
  return out;
}

Stage2Result train_stage2(model::Model<float>& m, const std::vector<Stage2Item>& items,
                          const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  const int n = cfg.snippet_len;
  const int window = cfg.long_window_frames();

  struct Window {
    int item;
    int start;
  };
  std::vector<Window> windows;
  std::vector<CacheReader> readers;
  readers.reserve(items.size());
  Stage2Result result;
  for (size_t i = 0; i < items.size(); ++i) {
    readers.emplace_back(items[i].cache_path);
    const auto& hdr = readers.back().header();
    if (hdr.snippet_len != n || hdr.stride != n - 1)
      throw std::runtime_error("cache: tiling mismatch for " + items[i].cache_path);
    if (hdr.frame_count != items[i].sequence->frame_count())
      throw std::runtime_error("cache: frame count mismatch for " + items[i].cache_path);
    if (hdr.width != items[i].sequence->intrinsics.width ||
        hdr.height != items[i].sequence->intrinsics.height)
      throw std::runtime_error("cache: resolution mismatch for " + items[i].cache_path);
    bool any = false;
    for (int start = 0; start + window <= hdr.frame_count; start += n - 1) {
      windows.push_back({static_cast<int>(i), start});
      any = true;
    }
    if (!any) ++result.skipped_windows;
  }
  if (windows.empty())
    throw std::runtime_error("train_stage2: no usable long window in any sequence");

  auto trainables = trainable_subset(m, true);
  nn::AdamState<float> adam;
  Rng rng(cfg.seed);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(windows);
    const double lr = cfg.lr_for_epoch(epoch);
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.mean.lambda1 = cfg.lambda1;
    stats.mean.lambda2 = cfg.lambda2;

    for (const auto& wnd : windows) {
      const auto& seq = *items[wnd.item].sequence;
      auto fwd = forward_long_window(m, readers[wnd.item], wnd.start, cfg.long_snippets, n);
      std::vector<FVar> frames;
      frames.reserve(window);
      for (int k = 0; k < window; ++k)
        frames.push_back(seq.frames[wnd.start + k].to_var<float>());
      auto loss = losses::long_loss<float>(frames, fwd.anchor_depths, fwd.abs_poses,
                                           seq.intrinsics, n, cfg.long_snippets);
      losses::LossBreakdown b;
      b.appearance_abs = loss.value.value()[0];
      b.total = b.appearance_abs;
      b.empty_mask_warning = loss.empty_warning;
      check_finite(b);
      m.params().zero_grad();
      ad::backward(loss.value);
      nn::clip_grad_norm(trainables, cfg.grad_clip_norm);
      nn::adam_step(trainables, adam, lr);
      accumulate(stats.mean, b);
      ++stats.steps;
    }
    divide(stats.mean, static_cast<int>(windows.size()));
    stats.mean.lambda1 = cfg.lambda1;
    stats.mean.lambda2 = cfg.lambda2;
    result.curve.push_back(stats);
    if (progress) progress(stats);
  }
  return result;
}

}  // namespace ltmvo::train
