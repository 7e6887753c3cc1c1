#pragma once

#include <vector>

#include "afp/tensor.hpp"

namespace afp {

/// Patch tiling geometry. Output patches of size d_out are laid on a regular
/// grid with strides (stride_r, stride_c); each is paired with the concentric
/// d_in×d_in input window of the frame reflect-padded by `pad` pixels.
struct GridSpec {
  int rows = 0;
  int cols = 0;
  int d_in = 0;
  int d_out = 0;
  int stride_r = 0;
  int stride_c = 0;
  int n_r = 0;
  int n_c = 0;
  int pad = 0;

  int cells() const { return n_r * n_c; }
  int padded_rows() const { return rows + 2 * pad; }
  int padded_cols() const { return cols + 2 * pad; }

  /// Number of output patches covering each frame pixel (rows×cols).
  std::vector<int> coverage() const;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// Validates the geometry and derives n_r, n_c, pad. Throws ConfigError,
/// naming the nearest valid frame size, when the grid does not tile evenly.
GridSpec make_grid(int rows, int cols, int d_in, int d_out, int stride_r, int stride_c);

/// Per-patch 2×3 affine transforms stored as 6×n_r×n_c, parameter-major, in
/// the order (a11, a12, t_row, a21, a22, t_col). Translations are in pixels.
struct AffineField {
  int n_r = 0;
  int n_c = 0;
  std::vector<float> params;

  enum Param { A11 = 0, A12 = 1, TRow = 2, A21 = 3, A22 = 4, TCol = 5 };

  AffineField() = default;
  AffineField(int rows, int cols) : n_r(rows), n_c(cols), params(std::size_t(6) * rows * cols) {}

  static AffineField identity(int rows, int cols);
  static AffineField translation(int rows, int cols, float t_row, float t_col);

  int cells() const { return n_r * n_c; }
  float& at(int q, int i, int j) { return params[(std::size_t(q) * n_r + i) * n_c + j]; }
  float at(int q, int i, int j) const { return params[(std::size_t(q) * n_r + i) * n_c + j]; }

  bool all_finite() const;
  /// Largest |param − identity param| over all cells.
  float max_identity_deviation() const;

  Tensor<float> to_tensor() const { return Tensor<float>({6, n_r, n_c}, params); }
  static AffineField from_tensor(const Tensor<float>& t);

  friend bool operator==(const AffineField&, const AffineField&) = default;
};

}  // namespace afp
