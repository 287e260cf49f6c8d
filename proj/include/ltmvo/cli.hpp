#pragma once

#include <string>
#include <vector>

#include "ltmvo/data.hpp"
#include "ltmvo/model.hpp"
#include "ltmvo/train.hpp"

namespace ltmvo::cli {

inline constexpr const char* kToolVersion = "ltmvo 0.1.0";

/// Every tunable in one place; a plain `key = value` file sets fields by
/// name and command-line flags override the file.
struct Settings {
  train::TrainConfig train;
  model::ModelConfig model;
  data::SynthConfig synth;
  std::string align = "sim3";
  std::string infer_mode = "second_layer";
  double eval_length_scale = 1.0;
  int snippet_ate_n = 5;
  int camera_id = 0;

  /// Applies one key = value assignment; throws on unknown keys.
  void set(const std::string& key, const std::string& value);
  /// Full key = value listing in a stable order.
  std::string print() const;
  /// Parses a config file (blank lines and # comments ignored).
  void load_file(const std::string& path);

  /// Keeps the fields that mirror each other in sync (resolution, seeds,
  /// snippet arity) after flag overrides.
  void finalize();
};

/// Loads either a single sequence directory or a directory of sequence
/// subdirectories.
std::vector<data::Sequence> load_dataset(const std::string& path, const Settings& s);

/// Entry point used by main() and by tests. Returns the process exit code:
/// 0 success, 1 usage error, 2 runtime failure.
int dispatch(int argc, const char* const* argv);

}  // namespace ltmvo::cli
