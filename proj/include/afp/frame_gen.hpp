#pragma once

#include <span>
#include <vector>

#include "afp/extractor.hpp"
#include "afp/predictor.hpp"

namespace afp {

/// Warps every input window of the reflect-padded frame by its cell's
/// transform and overlap-averages the results. Each channel gets the same
/// field. Output is clamped to [0,1].
Frame apply_field(const Frame& frame, const AffineField& field, const GridSpec& grid);

/// Applies fields[0], fields[1], … in turn, each to the previous result.
std::vector<Frame> apply_fields(const Frame& start, std::span<const AffineField> fields,
                                const GridSpec& grid);

struct RolloutConfig {
  int conditioning = 4;  // N
  int predicted = 8;     // M

  void validate() const;
};

struct RolloutResult {
  std::vector<Frame> frames;         // M generated frames
  std::vector<AffineField> fields;   // M predicted fields
};

/// Extracts N−1 fields from the seed frames, predicts M fields by unrolling,
/// and rebuilds frames starting from the last seed frame.
RolloutResult rollout(const PredictorModel& model, const std::vector<Frame>& seed_frames,
                      const RolloutConfig& cfg, const ExtractorConfig& extractor, int threads = 1);

/// Same as rollout() with the conditioning fields already extracted.
RolloutResult rollout_from_fields(const PredictorModel& model, const Frame& last_seed,
                                  std::span<const AffineField> seed_fields, int predicted);

}  // namespace afp
