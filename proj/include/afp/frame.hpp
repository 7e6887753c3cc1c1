#pragma once

#include <cstddef>
#include <vector>

#include "afp/errors.hpp"

namespace afp {

/// A single image, rows × cols × channels, interleaved (HWC), values in [0,1].
struct Frame {
  int rows = 0;
  int cols = 0;
  int channels = 1;
  std::vector<float> data;

  Frame() = default;
  Frame(int r, int c, int ch = 1, float fill = 0.0f)
      : rows(r), cols(c), channels(ch), data(std::size_t(r) * c * ch, fill) {
    if (r <= 0 || c <= 0 || ch <= 0) throw UsageError("frame extents must be positive");
  }

  float& at(int r, int c, int ch = 0) { return data[(std::size_t(r) * cols + c) * channels + ch]; }
  float at(int r, int c, int ch = 0) const {
    return data[(std::size_t(r) * cols + c) * channels + ch];
  }
  std::size_t pixels() const { return std::size_t(rows) * cols; }
  bool same_shape(const Frame& o) const {
    return rows == o.rows && cols == o.cols && channels == o.channels;
  }

  /// Single channel as a row-major rows×cols plane.
  std::vector<float> plane(int ch) const;
  void set_plane(int ch, const std::vector<float>& values);

  /// 0.299 R + 0.587 G + 0.114 B for 3-channel frames; copy of channel 0 otherwise.
  std::vector<float> luminance() const;

  friend bool operator==(const Frame&, const Frame&) = default;
};

}  // namespace afp
