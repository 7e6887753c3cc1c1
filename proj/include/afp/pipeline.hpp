#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "afp/config.hpp"

namespace afp {

using Progress = std::function<void(const std::string&)>;

/// Independent seed for a named data stream of a run.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream);

/// Generator settings from the config (square frames of frame_rows).
GeneratorParams generator_params(const RunConfig& cfg, const std::vector<Bitmap>* digits = nullptr);

struct DeskBenchmark {
  BenchmarkReport report;
  std::map<int, double> classifier_validation;  // by T
  std::vector<std::uint64_t> seeds;
  /// Held-out encoded-space MSE at the last unrolled step, one per seed.
  std::vector<double> greedy_final_step_mse;
  std::vector<double> unrolled_final_step_mse;
};

/// End to end: generates disjoint classifier/predictor/test sets, trains one
/// classifier per evaluation window on ground truth, extracts fields, trains a
/// greedy and an unrolled predictor per model seed and scores every method.
DeskBenchmark run_desk_benchmark(const RunConfig& cfg, const Progress& progress = {});

}  // namespace afp
