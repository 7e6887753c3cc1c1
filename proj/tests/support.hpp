#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "afp/frame.hpp"

namespace afp::testing {

/// Periodic blurred noise, min-max normalized to [0,1]. Periodic so circular
/// shifts of it are themselves valid textures.
inline std::vector<float> periodic_texture(int n, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  std::vector<float> base(std::size_t(n) * n), tmp(base.size()), img(base.size());
  for (auto& v : base) v = u(rng);
  const int r = int(std::ceil(3 * sigma));
  std::vector<float> k(2 * r + 1);
  float ks = 0;
  for (int i = -r; i <= r; ++i) ks += k[i + r] = float(std::exp(-i * i / (2 * sigma * sigma)));
  auto wrap = [n](int i) { return ((i % n) + n) % n; };
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      float s = 0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * base[y * n + wrap(x + i)];
      tmp[y * n + x] = s / ks;
    }
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      float s = 0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[wrap(y + i) * n + x];
      img[y * n + x] = s / ks;
    }
  const auto [mn, mx] = std::minmax_element(img.begin(), img.end());
  const float lo = *mn, hi = *mx;
  for (auto& v : img) v = (v - lo) / (hi - lo);
  return img;
}

/// Frame with pixel (r, c) = texture[(r + dr) mod n, (c + dc) mod n].
inline Frame shifted_frame(const std::vector<float>& tex, int n, int dr, int dc) {
  Frame f(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) f.at(r, c) = tex[std::size_t(((r + dr) % n + n) % n) * n + ((c + dc) % n + n) % n];
  return f;
}

/// Bilinear rotation of a frame about its center by `deg` (backward map,
/// border clamp), independent of the library's sampler.
inline Frame rotated_frame(const Frame& src, double deg) {
  const double th = deg * 3.14159265358979323846 / 180.0;
  const double cr = (src.rows - 1) / 2.0, cc = (src.cols - 1) / 2.0;
  Frame out(src.rows, src.cols);
  for (int r = 0; r < src.rows; ++r)
    for (int c = 0; c < src.cols; ++c) {
      const double y = r - cr, x = c - cc;
      double sr = cr + std::cos(th) * y - std::sin(th) * x;
      double sc = cc + std::sin(th) * y + std::cos(th) * x;
      sr = std::clamp(sr, 0.0, src.rows - 1.0);
      sc = std::clamp(sc, 0.0, src.cols - 1.0);
      const int r0 = std::min(int(sr), src.rows - 2), c0 = std::min(int(sc), src.cols - 2);
      const double fr = sr - r0, fc = sc - c0;
      out.at(r, c) = float((1 - fr) * ((1 - fc) * src.at(r0, c0) + fc * src.at(r0, c0 + 1)) +
                           fr * ((1 - fc) * src.at(r0 + 1, c0) + fc * src.at(r0 + 1, c0 + 1)));
    }
  return out;
}

/// MSE over pixels at least `margin` from every border.
inline double interior_mse(const Frame& a, const Frame& b, int margin) {
  double s = 0;
  int n = 0;
  for (int r = margin; r < a.rows - margin; ++r)
    for (int c = margin; c < a.cols - margin; ++c) {
      const double d = double(a.at(r, c)) - b.at(r, c);
      s += d * d;
      ++n;
    }
  return s / n;
}

inline double psnr(double mse) { return 10.0 * std::log10(1.0 / mse); }

// Fresh, empty directory under the working directory.
inline std::string temp_dir(const std::string& name) {
  const std::string d = std::string("afp_test_tmp/") + name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace afp::testing
