#include "afp/frame_gen.hpp"

#include <algorithm>
#include <string>

namespace afp {

Frame apply_field(const Frame& frame, const AffineField& field, const GridSpec& grid) {
  if (frame.rows != grid.rows || frame.cols != grid.cols)
    throw UsageError("apply_field: frame " + std::to_string(frame.rows) + "x" +
                     std::to_string(frame.cols) + " does not match grid");
  if (field.n_r != grid.n_r || field.n_c != grid.n_c)
    throw UsageError("apply_field: field grid " + std::to_string(field.n_r) + "x" +
                     std::to_string(field.n_c) + " does not match " + std::to_string(grid.n_r) +
                     "x" + std::to_string(grid.n_c));
  Frame out(frame.rows, frame.cols, frame.channels);
  for (int ch = 0; ch < frame.channels; ++ch) {
    const auto plane = frame.plane(ch);
    const auto patches = gather_input_patches(plane, grid);
    auto avg = overlap_average(warp_patches(field, patches, grid.d_out), grid);
    for (auto& v : avg.plane) v = std::clamp(v, 0.f, 1.f);
    out.set_plane(ch, avg.plane);
  }
  return out;
}

std::vector<Frame> apply_fields(const Frame& start, std::span<const AffineField> fields,
                                const GridSpec& grid) {
  std::vector<Frame> out;
  out.reserve(fields.size());
  const Frame* prev = &start;
  for (const auto& f : fields) {
    out.push_back(apply_field(*prev, f, grid));
    prev = &out.back();
  }
  return out;
}

void RolloutConfig::validate() const {
  if (conditioning < 2) throw ConfigError("rollout: need at least 2 conditioning frames");
  if (predicted < 1) throw ConfigError("rollout: need at least 1 predicted frame");
}

RolloutResult rollout_from_fields(const PredictorModel& model, const Frame& last_seed,
                                  std::span<const AffineField> seed_fields, int predicted) {
  RolloutResult res;
  res.fields = unroll_forward(model, seed_fields, predicted);
  res.frames = apply_fields(last_seed, res.fields, model.config.grid);
  return res;
}

RolloutResult rollout(const PredictorModel& model, const std::vector<Frame>& seed_frames,
                      const RolloutConfig& cfg, const ExtractorConfig& extractor, int threads) {
  cfg.validate();
  if (static_cast<int>(seed_frames.size()) != cfg.conditioning)
    throw UsageError("rollout: expected " + std::to_string(cfg.conditioning) + " seed frames, got " +
                     std::to_string(seed_frames.size()));
  if (cfg.conditioning - 1 != model.config.inputs)
    throw UsageError("rollout: model conditions on " + std::to_string(model.config.inputs + 1) +
                     " frames but " + std::to_string(cfg.conditioning) + " were configured");
  const auto fields = extract_sequence(seed_frames, model.config.grid, extractor, threads);
  return rollout_from_fields(model, seed_frames.back(), fields, cfg.predicted);
}

}  // namespace afp
