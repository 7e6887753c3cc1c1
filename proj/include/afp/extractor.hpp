#pragma once

#include <span>
#include <vector>

#include "afp/frame.hpp"
#include "afp/grid.hpp"
#include "afp/tensor.hpp"

namespace afp {

struct ExtractorConfig {
  int max_iters = 400;
  float step = 1e-2f;              // linear-part coordinates
  float translation_step = 2e-1f;  // translation coordinates (pixels)
  int window = 20;              // convergence window, in iterations
  double rel_threshold = 1e-6;  // minimum relative improvement per window
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;

  void validate() const;
};

struct ExtractionResult {
  AffineField field;
  double loss = 0.0;          // best (returned) reconstruction MSE
  double initial_loss = 0.0;  // MSE of the identity field
  int iterations = 0;
};

/// Mirror padding without edge repetition (…c b | a b c … x y | x w …).
std::vector<float> reflect_pad(std::span<const float> plane, int rows, int cols, int pad);

/// Input windows of every grid cell, (n_r·n_c)×d_in×d_in, from an unpadded plane.
Tensor<float> gather_input_patches(std::span<const float> plane, const GridSpec& grid);

/// Backward-warps one d_in×d_in patch: output pixel at offset (di, dj) from
/// the output-patch center reads the input at center_in + A·(di, dj, 1),
/// bilinearly, clamped to the patch border. `affine` is (a11,a12,t_row,a21,a22,t_col).
std::vector<float> warp_patch(std::span<const float, 6> affine, std::span<const float> input_patch,
                              int d_in, int d_out);

/// warp_patch applied to every cell; returns (n_r·n_c)×d_out×d_out.
Tensor<float> warp_patches(const AffineField& field, const Tensor<float>& input_patches, int d_out);

struct OverlapResult {
  std::vector<float> plane;  // rows×cols
  std::vector<int> weights;  // covering-patch count per pixel
};

/// Per-pixel mean of all warped patches covering it.
OverlapResult overlap_average(const Tensor<float>& patches, const GridSpec& grid);

/// Whole-frame reconstruction loss of one frame pair as a function of the
/// field parameters, with analytic gradient. Cells whose input window is
/// constant contribute a fixed value and have zero gradient, so they are
/// evaluated once up front.
class ReconstructionObjective {
 public:
  ReconstructionObjective(std::span<const float> x_plane, std::span<const float> y_plane,
                          const GridSpec& grid);

  /// Returns mse(overlap_average(warp(x)), y); fills `grad` (6·cells) if non-null.
  double evaluate(std::span<const float> params, std::vector<float>* grad) const;

  const GridSpec& grid() const { return grid_; }

 private:
  GridSpec grid_;
  Tensor<float> patches_;
  std::vector<float> target_;
  std::vector<float> inv_count_;
  std::vector<float> fixed_sum_;  // contributions of constant-window cells
  std::vector<int> active_;       // cells with non-constant windows
};

/// Jointly estimates the per-patch affine field warping x into y by adaptive
/// moment descent on the whole-frame reconstruction MSE, starting from the
/// identity. Color frames are reduced to luminance first.
ExtractionResult extract_pair(const Frame& x, const Frame& y, const GridSpec& grid,
                              const ExtractorConfig& cfg);

/// Field i maps frame i to frame i+1. Pairs are processed independently.
std::vector<AffineField> extract_sequence(const std::vector<Frame>& frames, const GridSpec& grid,
                                          const ExtractorConfig& cfg, int threads = 1);

}  // namespace afp
