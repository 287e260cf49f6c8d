#include "ltmvo/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ltmvo/checkpoint.hpp"
#include "ltmvo/eval.hpp"
#include "ltmvo/gradcheck.hpp"
#include "ltmvo/log.hpp"

namespace fs = std::filesystem;

namespace ltmvo::cli {

// ---------------------------------------------------------------------------
// Settings
// ---------------------------------------------------------------------------

namespace {

struct Field {
  const char* key;
  enum Kind { kInt, kDouble, kU64, kString } kind;
  void* ptr;
};

std::vector<Field> field_table(Settings& s) {
  return {
      {"snippet_len", Field::kInt, &s.train.snippet_len},
      {"long_snippets", Field::kInt, &s.train.long_snippets},
      {"batch_size", Field::kInt, &s.train.batch_size},
      {"epochs", Field::kInt, &s.train.epochs},
      {"lr_initial", Field::kDouble, &s.train.lr_initial},
      {"lr_late", Field::kDouble, &s.train.lr_late},
      {"lr_drop_epoch", Field::kInt, &s.train.lr_drop_epoch},
      {"seed", Field::kU64, &s.train.seed},
      {"width", Field::kInt, &s.train.width},
      {"height", Field::kInt, &s.train.height},
      {"channels", Field::kInt, &s.train.channels},
      {"lambda1", Field::kDouble, &s.train.lambda1},
      {"lambda2", Field::kDouble, &s.train.lambda2},
      {"grad_clip_norm", Field::kDouble, &s.train.grad_clip_norm},
      {"depth_ch1", Field::kInt, &s.model.depth_ch1},
      {"depth_ch2", Field::kInt, &s.model.depth_ch2},
      {"depth_ch3", Field::kInt, &s.model.depth_ch3},
      {"pose_ch1", Field::kInt, &s.model.pose_ch1},
      {"pose_ch2", Field::kInt, &s.model.pose_ch2},
      {"pose_ch3", Field::kInt, &s.model.pose_ch3},
      {"lstm_channels", Field::kInt, &s.model.lstm_channels},
      {"depth_min", Field::kDouble, &s.model.depth_min},
      {"depth_max", Field::kDouble, &s.model.depth_max},
      {"head_scale", Field::kDouble, &s.model.head_scale},
      {"synth_frames", Field::kInt, &s.synth.frame_count},
      {"synth_focal", Field::kDouble, &s.synth.focal},
      {"synth_seed", Field::kU64, &s.synth.seed},
      {"texture_octaves", Field::kInt, &s.synth.texture_octaves},
      {"waves_per_octave", Field::kInt, &s.synth.waves_per_octave},
      {"texture_base_freq", Field::kDouble, &s.synth.texture_base_freq},
      {"depth_base", Field::kDouble, &s.synth.depth_base},
      {"depth_amplitude", Field::kDouble, &s.synth.depth_amplitude},
      {"depth_freq", Field::kDouble, &s.synth.depth_freq},
      {"depth_waves", Field::kInt, &s.synth.depth_waves},
      {"trans_bias_x", Field::kDouble, &s.synth.trans_bias_x},
      {"trans_bias_y", Field::kDouble, &s.synth.trans_bias_y},
      {"trans_bias_z", Field::kDouble, &s.synth.trans_bias_z},
      {"trans_std", Field::kDouble, &s.synth.trans_std},
      {"rot_std", Field::kDouble, &s.synth.rot_std},
      {"smooth_window", Field::kInt, &s.synth.smooth_window},
      {"min_inframe_fraction", Field::kDouble, &s.synth.min_inframe_fraction},
      {"align", Field::kString, &s.align},
      {"infer_mode", Field::kString, &s.infer_mode},
      {"eval_length_scale", Field::kDouble, &s.eval_length_scale},
      {"snippet_ate_n", Field::kInt, &s.snippet_ate_n},
      {"camera_id", Field::kInt, &s.camera_id},
  };
}

}  // namespace

void Settings::set(const std::string& key, const std::string& value) {
  for (auto& f : field_table(*this)) {
    if (key != f.key) continue;
    std::istringstream pars(value);
    switch (f.kind) {
      case Field::kInt: {
        int v;
        if (!(pars >> v)) fail_invalid("config: bad int for " + key);
        *static_cast<int*>(f.ptr) = v;
        return;
      }
      case Field::kDouble: {
        double v;
        if (!(pars >> v)) fail_invalid("config: bad number for " + key);
        *static_cast<double*>(f.ptr) = v;
        return;
      }
      case Field::kU64: {
        uint64_t v;
        if (!(pars >> v)) fail_invalid("config: bad seed for " + key);
        *static_cast<uint64_t*>(f.ptr) = v;
        return;
      }
      case Field::kString:
        *static_cast<std::string*>(f.ptr) = value;
        return;
    }
  }
  fail_invalid("config: unknown key '" + key + "'");
}

std::string Settings::print() const {
  std::ostringstream os;
  os.precision(17);
  for (auto& f : field_table(const_cast<Settings&>(*this))) {
    os << f.key << " = ";
    switch (f.kind) {
      case Field::kInt: os << *static_cast<int*>(f.ptr); break;
      case Field::kDouble: os << *static_cast<double*>(f.ptr); break;
      case Field::kU64: os << *static_cast<uint64_t*>(f.ptr); break;
      case Field::kString: os << *static_cast<std::string*>(f.ptr); break;
    }
    os << "\n";
  }
  return os.str();
}

void Settings::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        fail_invalid("config: malformed line " + std::to_string(line_no) + " in " + path);
      continue;
    }
    auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t\r");
      const auto e = v.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
    };
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void Settings::finalize() {
  model.width = train.width;
  model.height = train.height;
  model.channels = train.channels;
  model.seed = train.seed;
  synth.width = train.width;
  synth.height = train.height;
  synth.channels = train.channels;
  train.validate();
  model.validate();
}

std::vector<data::Sequence> load_dataset(const std::string& path, const Settings& s) {
  data::LoadOptions opts;
  opts.camera_id = s.camera_id;
  opts.target_width = s.train.width;
  opts.target_height = s.train.height;
  opts.channels = s.train.channels;

  std::vector<data::Sequence> out;
  if (fs::exists(fs::path(path) / "calib.txt")) {
    out.push_back(data::load_kitti_sequence(path, opts));
    return out;
  }
  std::vector<fs::path> subdirs;
  for (const auto& entry : fs::directory_iterator(path))
    if (entry.is_directory() && fs::exists(entry.path() / "calib.txt"))
      subdirs.push_back(entry.path());
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& d : subdirs) out.push_back(data::load_kitti_sequence(d.string(), opts));
  if (out.empty()) throw std::runtime_error("dataset: no sequences under " + path);
  return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

std::string join_args(int argc, const char* const* argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

struct ManifestWriter {
  fs::path out_dir;
  std::string command;
  const Settings* settings = nullptr;
  std::vector<std::string> inputs;
  std::vector<std::string> checkpoint_hashes;
  std::string started_at = log::timestamp();

  void write() const {
    nlohmann::json j;
    j["command"] = command;
    const std::string cfg = settings->print();
    j["config_hash"] = checkpoint::hex(checkpoint::sha256_bytes(
        reinterpret_cast<const uint8_t*>(cfg.data()), cfg.size()));
    j["seed"] = settings->train.seed;
    j["input_paths"] = inputs;
    j["checkpoint_hashes"] = checkpoint_hashes;
    j["started_at"] = started_at;
    j["finished_at"] = log::timestamp();
    j["tool_version"] = kToolVersion;
    const fs::path tmp = out_dir / ".run_manifest.json.tmp";
    {
      std::ofstream os(tmp, std::ios::trunc);
      os << j.dump(2) << "\n";
      if (!os) throw std::runtime_error("manifest: write failed");
    }
    fs::rename(tmp, out_dir / "run_manifest.json");
  }
};

void write_loss_curve(const fs::path& path, const std::vector<train::EpochStats>& curve) {
  std::ofstream os(path, std::ios::trunc);
  os << "epoch,lr,steps,appearance,smoothness,appearance_abs,cycle,total\n";
  os.precision(12);
  for (const auto& e : curve)
    os << e.epoch << "," << e.lr << "," << e.steps << "," << e.mean.appearance << ","
       << e.mean.smoothness << "," << e.mean.appearance_abs << "," << e.mean.cycle << ","
       << e.mean.total << "\n";
}

std::string file_hash_hex(const std::string& path) {
  return checkpoint::hex(checkpoint::sha256_file(path));
}

model::Model<float> build_model(const Settings& s) { return model::Model<float>(s.model); }

void log_epoch(const char* stage, const train::EpochStats& e) {
  log::info({{"stage", stage},
             {"epoch", e.epoch},
             {"lr", e.lr},
             {"steps", e.steps},
             {"loss_total", e.mean.total},
             {"loss_appearance", e.mean.appearance},
             {"loss_smoothness", e.mean.smoothness},
             {"loss_appearance_abs", e.mean.appearance_abs},
             {"loss_cycle", e.mean.cycle}});
}

}  // namespace

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int dispatch(int argc, const char* const* argv) {
  Settings s;
  std::string config_path, out_dir;
  bool print_config = false;
  std::string resolution;
  uint64_t seed_flag = 0;
  bool seed_given = false;

  CLI::App app{"Self-supervised monocular visual odometry with long-term modeling"};
  app.require_subcommand(0, 1);
  app.fallthrough();
  app.add_option("--config", config_path, "key = value configuration file");
  app.add_option_function<uint64_t>(
         "--seed", [&](uint64_t v) { seed_flag = v; seed_given = true; }, "global RNG seed")
      ->expected(1);
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--resolution", resolution, "working resolution WxH");
  app.add_flag("--print-config", print_config, "print the effective configuration and exit");
  int snippet_flag = -1, long_flag = -1;
  app.add_option("--snippet-len", snippet_flag, "snippet length N");
  app.add_option("--long-snippets", long_flag, "snippets per long window M");
  std::string align_flag, mode_flag;
  app.add_option("--align", align_flag, "trajectory alignment: sim3, se3 or none");
  app.add_option("--mode", mode_flag, "pose source: second_layer or first_layer");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic sequence");
  int frames_flag = -1;
  synth_cmd->add_option("--frames", frames_flag, "number of frames");

  // train1
  auto* train1_cmd = app.add_subcommand("train1", "short-range end-to-end training");
  std::string data_path;
  train1_cmd->add_option("--data", data_path, "dataset directory")->required();
  int epochs_flag = -1;
  train1_cmd->add_option("--epochs", epochs_flag, "training epochs");

  // cache
  auto* cache_cmd = app.add_subcommand("cache", "extract and store second-layer inputs");
  std::string ckpt_path;
  cache_cmd->add_option("--data", data_path, "dataset directory")->required();
  cache_cmd->add_option("--checkpoint", ckpt_path, "stage-1 checkpoint")->required();

  // train2
  auto* train2_cmd = app.add_subcommand("train2", "long-range second-layer fine-tuning");
  std::string cache_dir;
  train2_cmd->add_option("--data", data_path, "dataset directory")->required();
  train2_cmd->add_option("--cache-dir", cache_dir, "directory of .ltmc files")->required();
  train2_cmd->add_option("--checkpoint", ckpt_path, "stage-1 checkpoint")->required();
  train2_cmd->add_option("--epochs", epochs_flag, "training epochs");

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "predict a trajectory for a sequence");
  std::string seq_path;
  infer_cmd->add_option("--sequence", seq_path, "sequence directory")->required();
  infer_cmd->add_option("--checkpoint", ckpt_path, "checkpoint")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a trajectory against ground truth");
  std::string est_path, gt_path, pred_depth_dir, gt_depth_dir;
  eval_cmd->add_option("--est", est_path, "estimated KITTI pose file")->required();
  eval_cmd->add_option("--gt", gt_path, "ground-truth KITTI pose file")->required();
  eval_cmd->add_option("--pred-depths", pred_depth_dir, "directory of predicted .f32 rasters");
  eval_cmd->add_option("--gt-depths", gt_depth_dir, "directory of ground-truth .f32 rasters");
  double length_scale_flag = -1;
  eval_cmd->add_option("--length-scale", length_scale_flag,
                       "scale for the 100..800 segment lengths");

  // gradcheck
  auto* grad_cmd =
      app.add_subcommand("gradcheck", "finite-difference check of every op and loss");

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "render est vs gt trajectories as SVG");
  plot_cmd->add_option("--est", est_path, "estimated KITTI pose file")->required();
  plot_cmd->add_option("--gt", gt_path, "ground-truth KITTI pose file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (!config_path.empty()) s.load_file(config_path);
    if (seed_given) {
      s.train.seed = seed_flag;
      s.synth.seed = seed_flag;
    }
    if (!resolution.empty()) {
      const auto x = resolution.find('x');
      if (x == std::string::npos) fail_invalid("--resolution expects WxH");
      s.train.width = std::stoi(resolution.substr(0, x));
      s.train.height = std::stoi(resolution.substr(x + 1));
    }
    if (snippet_flag > 0) s.train.snippet_len = snippet_flag;
    if (long_flag > 0) s.train.long_snippets = long_flag;
    if (epochs_flag > 0) s.train.epochs = epochs_flag;
    if (frames_flag > 0) s.synth.frame_count = frames_flag;
    if (!align_flag.empty()) s.align = align_flag;
    if (!mode_flag.empty()) s.infer_mode = mode_flag;
    if (length_scale_flag > 0) s.eval_length_scale = length_scale_flag;
    s.finalize();

    if (print_config) {
      std::cout << s.print();
      return 0;
    }
    if (app.get_subcommands().empty()) {
      std::cerr << app.help();
      return 1;
    }

    ManifestWriter manifest;
    manifest.command = join_args(argc, argv);
    manifest.settings = &s;
    auto need_out = [&] {
      if (out_dir.empty()) fail_invalid("--out is required for this subcommand");
      fs::create_directories(out_dir);
      manifest.out_dir = out_dir;
    };

    if (*synth_cmd) {
      need_out();
      log::info({{"cmd", "synth"}, {"seed", s.synth.seed}, {"frames", s.synth.frame_count}});
      auto seq = data::synth_generate(s.synth);
      data::save_sequence(seq, out_dir);
      manifest.write();
      return 0;
    }

    if (*train1_cmd) {
      need_out();
      manifest.inputs.push_back(data_path);
      auto dataset = load_dataset(data_path, s);
      auto m = build_model(s);
      auto curve =
          train::train_stage1(m, dataset, s.train, [](const auto& e) { log_epoch("1", e); });
      const std::string ckpt = (fs::path(out_dir) / "stage1.ckpt").string();
      checkpoint::save_params(ckpt, m.params());
      write_loss_curve(fs::path(out_dir) / "stage1_loss.csv", curve);
      manifest.checkpoint_hashes.push_back(file_hash_hex(ckpt));
      manifest.write();
      return 0;
    }

    if (*cache_cmd) {
      need_out();
      manifest.inputs = {data_path, ckpt_path};
      auto dataset = load_dataset(data_path, s);
      auto m = build_model(s);
      checkpoint::load_params(ckpt_path, m.params());
      const auto hash = checkpoint::sha256_file(ckpt_path);
      manifest.checkpoint_hashes.push_back(checkpoint::hex(hash));
      for (const auto& seq : dataset) {
        const std::string path = (fs::path(out_dir) / (seq.name + ".ltmc")).string();
        train::extract_and_cache_features(m, seq, s.train, hash, path);
        log::info({{"cmd", "cache"}, {"sequence", seq.name}, {"file", path}});
      }
      manifest.write();
      return 0;
    }

    if (*train2_cmd) {
      need_out();
      manifest.inputs = {data_path, cache_dir, ckpt_path};
      auto dataset = load_dataset(data_path, s);
      auto m = build_model(s);
      checkpoint::load_params(ckpt_path, m.params());
      const auto hash = checkpoint::sha256_file(ckpt_path);
      manifest.checkpoint_hashes.push_back(checkpoint::hex(hash));
      std::vector<train::Stage2Item> items;
      for (const auto& seq : dataset) {
        const fs::path cache = fs::path(cache_dir) / (seq.name + ".ltmc");
        if (!fs::exists(cache))
          throw std::runtime_error("train2: missing cache file " + cache.string());
        train::CacheReader reader(cache.string());
        if (reader.header().checkpoint_hash != hash)
          throw std::runtime_error("train2: cache " + cache.string() +
                                   " was built from a different checkpoint");
        items.push_back({&seq, cache.string()});
      }
      auto result =
          train::train_stage2(m, items, s.train, [](const auto& e) { log_epoch("2", e); });
      if (result.skipped_windows > 0)
        log::warn({{"cmd", "train2"}, {"sequences_without_window", result.skipped_windows}});
      const std::string ckpt = (fs::path(out_dir) / "stage2.ckpt").string();
      checkpoint::save_params(ckpt, m.params());
      write_loss_curve(fs::path(out_dir) / "stage2_loss.csv", result.curve);
      manifest.checkpoint_hashes.push_back(file_hash_hex(ckpt));
      manifest.write();
      return 0;
    }

    if (*infer_cmd) {
      need_out();
      manifest.inputs = {seq_path, ckpt_path};
      data::LoadOptions opts;
      opts.camera_id = s.camera_id;
      opts.target_width = s.train.width;
      opts.target_height = s.train.height;
      opts.channels = s.train.channels;
      auto seq = data::load_kitti_sequence(seq_path, opts);
      auto m = build_model(s);
      checkpoint::load_params(ckpt_path, m.params());
      manifest.checkpoint_hashes.push_back(file_hash_hex(ckpt_path));
      auto traj = model::infer_trajectory(m, seq.frames, seq.intrinsics,
                                          model::infer_mode_from_string(s.infer_mode),
                                          s.train.snippet_len);
      data::write_kitti_poses(traj, (fs::path(out_dir) / "trajectory.txt").string());
      manifest.write();
      return 0;
    }

    if (*eval_cmd) {
      need_out();
      manifest.inputs = {est_path, gt_path};
      auto est = data::parse_kitti_poses(est_path);
      auto gt = data::parse_kitti_poses(gt_path);
      const auto align = eval::alignment_from_string(s.align);

      eval::MetricsReport report;
      report.alignment = align;
      report.ate_rmse = eval::ate_rmse(est, gt, align);
      eval::RelErrorOptions ropts;
      ropts.length_scale = s.eval_length_scale;
      ropts.prescale_with_sim3 = align == eval::Alignment::kSim3;
      auto rel = eval::kitti_rel_errors(est, gt, ropts);
      report.rel_trans = rel.rel_trans;
      report.rel_rot = rel.rel_rot;
      report.per_length = rel.per_length;
      if (static_cast<int>(est.poses.size()) >= s.snippet_ate_n)
        report.snippet = eval::snippet_ate(est, gt, s.snippet_ate_n);
      if (!pred_depth_dir.empty() && !gt_depth_dir.empty()) {
        auto load_dir = [](const std::string& dir) {
          std::vector<std::vector<double>> out;
          std::vector<fs::path> files;
          for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".f32") files.push_back(e.path());
          std::sort(files.begin(), files.end());
          for (const auto& f : files) out.push_back(data::read_depth_raster(f.string()));
          return out;
        };
        report.depth = eval::depth_metrics(load_dir(pred_depth_dir), load_dir(gt_depth_dir));
      }

      std::ofstream(fs::path(out_dir) / "report.txt") << report.to_key_values();
      std::ofstream(fs::path(out_dir) / "report.csv") << report.to_csv();
      eval::write_trajectory_svg((fs::path(out_dir) / "trajectory.svg").string(),
                                 eval::apply_transform(est, eval::umeyama_align(est, gt, align)),
                                 gt);
      std::cout << report.to_key_values();
      manifest.write();
      return 0;
    }

    if (*grad_cmd) {
      auto results = gradcheck::run_all(s.train.seed);
      bool ok = true;
      std::ostringstream body;
      body.precision(6);
      for (const auto& r : results) {
        body << "op=" << r.name << " max_rel_err=" << r.max_rel_error
             << (r.passed ? "" : " FAILED") << "\n";
        if (!r.passed) {
          ok = false;
          log::error({{"cmd", "gradcheck"}, {"op", r.name}, {"max_rel_err", r.max_rel_error}});
        }
      }
      std::cout << body.str();
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(fs::path(out_dir) / "gradcheck_report.txt") << body.str();
        manifest.out_dir = out_dir;
        manifest.write();
      }
      return ok ? 0 : 2;
    }

    if (*plot_cmd) {
      need_out();
      manifest.inputs = {est_path, gt_path};
      auto est = data::parse_kitti_poses(est_path);
      auto gt = data::parse_kitti_poses(gt_path);
      eval::write_trajectory_svg((fs::path(out_dir) / "trajectory.svg").string(), est, gt);
      manifest.write();
      return 0;
    }

    std::cerr << app.help();
    return 1;
  } catch (const std::invalid_argument& e) {
    log::error({{"error", std::string(e.what())}});
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    log::error({{"error", std::string(e.what())}});
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace ltmvo::cli
