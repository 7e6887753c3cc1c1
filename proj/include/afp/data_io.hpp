#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "afp/frame.hpp"
#include "afp/grid.hpp"
#include "afp/predictor.hpp"

namespace afp {

/// Grayscale sprite, values in [0,1].
struct Bitmap {
  int rows = 0;
  int cols = 0;
  std::vector<float> data;

  float at(int r, int c) const { return data[std::size_t(r) * cols + c]; }
};

struct Provenance {
  std::string source = "ground-truth";  // or "generated"
  std::uint64_t seed = 0;
  int index = 0;
};

/// A labeled clip. Only frames and motion_class are persisted by TSEQ; shape
/// id and provenance are in-memory bookkeeping.
struct SequenceRecord {
  std::vector<Frame> frames;
  std::optional<std::uint16_t> motion_class;  // 0–7, compass direction
  std::optional<int> shape_id;
  Provenance provenance;
};

enum class SpriteKind { Square = 0, Cross = 1, Triangle = 2 };

Bitmap procedural_sprite(SpriteKind kind, int size);

/// One object's state: top-left position and velocity, pixels (per frame).
struct MotionParams {
  double row = 0, col = 0;
  double v_row = 0, v_col = 0;
  int sprite_rows = 0, sprite_cols = 0;
};

/// Positions for frames 0..T−1 with reflecting walls. Position range along
/// each axis is [0, extent − sprite size]; on contact the overshoot is
/// mirrored and that velocity component negated. Final velocities are
/// written back into `motion`.
std::vector<std::pair<double, double>> simulate_trajectory(MotionParams& motion, int length,
                                                           int frame_rows, int frame_cols);

/// Bilinear splat of a sprite at a sub-pixel top-left position, composited
/// into `canvas` by per-pixel max.
void splat_sprite(Frame& canvas, const Bitmap& sprite, double row, double col);

/// 8 compass classes counter-clockwise from east (0 = +col, 2 = −row).
int direction_class(double v_row, double v_col);

struct GeneratorParams {
  int frame_size = 64;
  int min_objects = 1;
  int max_objects = 2;
  int length = 20;
  double min_speed = 1.0;
  double max_speed = 2.0;
  int min_sprite = 12;
  int max_sprite = 16;
  /// When > 0, start positions are drawn so no wall is touched during the
  /// first `bounce_free_frames` frames.
  int bounce_free_frames = 0;
  double angle_jitter_deg = 0.0;
  /// Optional digit sprites (from load_idx_images); procedural shapes otherwise.
  const std::vector<Bitmap>* digits = nullptr;

  void validate() const;
};

/// Record i is drawn from its own RNG stream derived from (seed, i), so
/// generation is order-independent and reproducible.
std::vector<SequenceRecord> generate_moving_shapes(std::uint64_t seed, int count,
                                                   const GeneratorParams& params, int threads = 1);

// --- file formats --------------------------------------------------------

/// Big-endian IDX3 image file (magic 0x00000803); bytes scaled to [0,1].
std::vector<Bitmap> load_idx_images(const std::string& path);

void write_tseq(const std::string& path, const SequenceRecord& record);
SequenceRecord read_tseq(const std::string& path);

void write_tfld(const std::string& path, const std::vector<AffineField>& fields);
std::vector<AffineField> read_tfld(const std::string& path);

void write_checkpoint(const std::string& path, const PredictorModel& model);
PredictorModel read_checkpoint(const std::string& path);

/// Binary P5, maxval 255, round half up. Color frames are written as luminance.
void export_pgm(const Frame& frame, const std::string& path);

/// Writes bytes to `path` via a temporary file and rename.
void write_file_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

}  // namespace afp
