#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "afp/data_io.hpp"
#include "afp/eval.hpp"
#include "afp/extractor.hpp"
#include "afp/grid.hpp"
#include "afp/predictor.hpp"

namespace afp {

/// Everything a run needs. Loaded from `key = value` lines (`#` starts a
/// comment); command-line flags are applied on top as further key/value
/// pairs. `preset` is applied first wherever it appears.
struct RunConfig {
  std::string preset = "mnist";

  // Geometry.
  int frame_rows = 64;
  int frame_cols = 64;
  int patch_in = 16;
  int patch_out = 8;
  int stride = 4;

  // Predictor.
  std::vector<int> channels{18, 32, 32, 6};  // first must be 6·(frames_in − 1)
  int kernel = 3;
  int frames_in = 4;   // K conditioning frames
  int frames_out = 8;  // frames generated at rollout
  int unroll = 4;      // M used for training
  bool greedy = false;  // train with M = 1
  float lr = 1e-3f;
  int batch = 16;
  int epochs = 20;

  ExtractorConfig extractor;
  ClassifierConfig classifier;
  GeneratorParams data;
  int count = 100;  // gen-data record count
  std::string digits;  // optional IDX file for sprites

  // Benchmark sizes.
  int bench_classifier_train = 1000;
  int bench_classifier_val = 200;
  int bench_predictor_train = 200;
  int bench_test = 1000;
  std::vector<int> eval_frames{4, 8};
  std::vector<std::uint64_t> model_seeds{1, 2, 3};

  std::uint64_t seed = 1;
  int threads = 1;
  bool deterministic = false;

  // Paths (meaning depends on the subcommand).
  std::string input;
  std::string model;
  std::string out;

  GridSpec grid() const;
  PredictorConfig predictor() const;
  void validate() const;

  /// Sets one key; unknown keys and malformed values are ConfigError.
  void set(const std::string& key, const std::string& value);
  static std::vector<std::string> keys();

  static RunConfig from_preset(const std::string& name);
  /// Applies preset (if any) then every pair in order.
  static RunConfig from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);
  static std::vector<std::pair<std::string, std::string>> parse_text(const std::string& text,
                                                                     const std::string& origin);
  std::string to_text() const;
};

}  // namespace afp
