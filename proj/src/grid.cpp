#include "afp/grid.hpp"

#include <cmath>
#include <string>

#include "afp/frame.hpp"

namespace afp {

std::vector<float> Frame::plane(int ch) const {
  std::vector<float> out(pixels());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = data[i * channels + ch];
  return out;
}

void Frame::set_plane(int ch, const std::vector<float>& values) {
  if (values.size() != pixels()) throw UsageError("set_plane: size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) data[i * channels + ch] = values[i];
}

std::vector<float> Frame::luminance() const {
  if (channels != 3) return plane(0);
  std::vector<float> out(pixels());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.299f * data[i * 3] + 0.587f * data[i * 3 + 1] + 0.114f * data[i * 3 + 2];
  return out;
}

namespace {

int next_valid(int extent, int d_out, int stride) {
  int e = std::max(extent, d_out);
  while ((e - d_out) % stride != 0) ++e;
  return e;
}

}  // namespace

GridSpec make_grid(int rows, int cols, int d_in, int d_out, int stride_r, int stride_c) {
  if (rows <= 0 || cols <= 0 || d_in <= 0 || d_out <= 0 || stride_r <= 0 || stride_c <= 0)
    throw ConfigError("grid: all extents, patch sizes and strides must be positive");
  if (d_out > d_in)
    throw ConfigError("grid: output patch (" + std::to_string(d_out) +
                      ") larger than input patch (" + std::to_string(d_in) + ")");
  if ((d_in - d_out) % 2 != 0)
    throw ConfigError("grid: d_in − d_out must be even, got " + std::to_string(d_in - d_out));
  if (d_out > rows || d_out > cols) throw ConfigError("grid: output patch larger than frame");
  const bool rows_ok = (rows - d_out) % stride_r == 0;
  const bool cols_ok = (cols - d_out) % stride_c == 0;
  if (!rows_ok || !cols_ok) {
    const int vr = next_valid(rows, d_out, stride_r);
    const int vc = next_valid(cols, d_out, stride_c);
    throw ConfigError("grid: frame " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " is not tiled by " + std::to_string(d_out) + "-pixel patches at stride " +
                      std::to_string(stride_r) + "x" + std::to_string(stride_c) +
                      "; (size − d_out) must be divisible by the stride. Smallest valid padding: +" +
                      std::to_string(vr - rows) + " rows, +" + std::to_string(vc - cols) +
                      " cols (" + std::to_string(vr) + "x" + std::to_string(vc) + ")");
  }
  GridSpec g;
  g.rows = rows;
  g.cols = cols;
  g.d_in = d_in;
  g.d_out = d_out;
  g.stride_r = stride_r;
  g.stride_c = stride_c;
  g.n_r = (rows - d_out) / stride_r + 1;
  g.n_c = (cols - d_out) / stride_c + 1;
  g.pad = (d_in - d_out) / 2;
  if (g.pad >= rows || g.pad >= cols)
    throw ConfigError("grid: reflect padding " + std::to_string(g.pad) + " exceeds frame size");
  return g;
}

std::vector<int> GridSpec::coverage() const {
  std::vector<int> count(std::size_t(rows) * cols, 0);
  for (int i = 0; i < n_r; ++i)
    for (int j = 0; j < n_c; ++j)
      for (int a = 0; a < d_out; ++a)
        for (int b = 0; b < d_out; ++b) ++count[std::size_t(i * stride_r + a) * cols + j * stride_c + b];
  return count;
}

AffineField AffineField::identity(int rows, int cols) { return translation(rows, cols, 0.f, 0.f); }

AffineField AffineField::translation(int rows, int cols, float t_row, float t_col) {
  AffineField f(rows, cols);
  const int n = rows * cols;
  for (int k = 0; k < n; ++k) {
    f.params[A11 * n + k] = 1.f;
    f.params[A22 * n + k] = 1.f;
    f.params[TRow * n + k] = t_row;
    f.params[TCol * n + k] = t_col;
  }
  return f;
}

bool AffineField::all_finite() const {
  for (float v : params)
    if (!std::isfinite(v)) return false;
  return true;
}

float AffineField::max_identity_deviation() const {
  const int n = cells();
  float dev = 0.f;
  for (int q = 0; q < 6; ++q) {
    const float ref = (q == A11 || q == A22) ? 1.f : 0.f;
    for (int k = 0; k < n; ++k) dev = std::max(dev, std::abs(params[q * n + k] - ref));
  }
  return dev;
}

AffineField AffineField::from_tensor(const Tensor<float>& t) {
  if (t.rank() != 3 || t.dim(0) != 6) throw UsageError("affine field tensor must be 6×n_r×n_c");
  AffineField f(t.dim(1), t.dim(2));
  f.params = t.storage();
  return f;
}

}  // namespace afp
