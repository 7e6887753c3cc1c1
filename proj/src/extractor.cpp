#include "afp/extractor.hpp"

#include <cmath>
#include <string>

#include "afp/autodiff.hpp"
#include "afp/parallel.hpp"

namespace afp {

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

// Output-pixel offsets from the output-patch center.
std::vector<float> center_offsets(int d_out) {
  std::vector<float> off(d_out);
  const float c = float(d_out - 1) / 2.f;
  for (int i = 0; i < d_out; ++i) off[i] = float(i) - c;
  return off;
}

}  // namespace

void ExtractorConfig::validate() const {
  if (max_iters <= 0 || !(step > 0) || !(translation_step > 0) || window <= 0 || !(rel_threshold > 0) || !(beta1 > 0) ||
      !(beta2 > 0) || !(eps > 0) || beta1 >= 1 || beta2 >= 1)
    throw ConfigError("extractor: all settings must be positive (decay rates below 1)");
}

std::vector<float> reflect_pad(std::span<const float> plane, int rows, int cols, int pad) {
  if (plane.size() != std::size_t(rows) * cols) throw UsageError("reflect_pad: size mismatch");
  const int pr = rows + 2 * pad, pc = cols + 2 * pad;
  std::vector<float> out(std::size_t(pr) * pc);
  for (int r = 0; r < pr; ++r) {
    const int sr = reflect_index(r - pad, rows);
    for (int c = 0; c < pc; ++c) out[std::size_t(r) * pc + c] = plane[std::size_t(sr) * cols + reflect_index(c - pad, cols)];
  }
  return out;
}

Tensor<float> gather_input_patches(std::span<const float> plane, const GridSpec& grid) {
  const auto padded = reflect_pad(plane, grid.rows, grid.cols, grid.pad);
  const int pc = grid.padded_cols();
  const int d = grid.d_in;
  Tensor<float> out({grid.cells(), d, d});
  for (int i = 0; i < grid.n_r; ++i)
    for (int j = 0; j < grid.n_c; ++j) {
      float* dst = out.data() + std::size_t(i * grid.n_c + j) * d * d;
      for (int a = 0; a < d; ++a) {
        const float* src = padded.data() + std::size_t(i * grid.stride_r + a) * pc + j * grid.stride_c;
        std::copy(src, src + d, dst + a * d);
      }
    }
  return out;
}

std::vector<float> warp_patch(std::span<const float, 6> affine, std::span<const float> input_patch,
                              int d_in, int d_out) {
  if (input_patch.size() != std::size_t(d_in) * d_in)
    throw UsageError("warp_patch: input patch must be d_in×d_in");
  const auto off = center_offsets(d_out);
  const float center_in = float(d_in - 1) / 2.f;
  std::vector<float> out(std::size_t(d_out) * d_out);
  const float* s = input_patch.data();
  for (int oi = 0; oi < d_out; ++oi)
    for (int oj = 0; oj < d_out; ++oj) {
      const float row = center_in + affine[0] * off[oi] + affine[1] * off[oj] + affine[2];
      const float col = center_in + affine[3] * off[oi] + affine[4] * off[oj] + affine[5];
      const auto t = ad::bilinear_tap(row, col, d_in, d_in);
      const float top = s[t.r0 * d_in + t.c0] + t.fc * (s[t.r0 * d_in + t.c1] - s[t.r0 * d_in + t.c0]);
      const float bot = s[t.r1 * d_in + t.c0] + t.fc * (s[t.r1 * d_in + t.c1] - s[t.r1 * d_in + t.c0]);
      out[oi * d_out + oj] = top + t.fr * (bot - top);
    }
  return out;
}

Tensor<float> warp_patches(const AffineField& field, const Tensor<float>& input_patches, int d_out) {
  const int cells = field.cells();
  if (input_patches.rank() != 3 || input_patches.dim(0) != cells)
    throw UsageError("warp_patches: patch count does not match field");
  const int d_in = input_patches.dim(1);
  Tensor<float> out({cells, d_out, d_out});
  const std::size_t in_sz = std::size_t(d_in) * d_in, out_sz = std::size_t(d_out) * d_out;
  for (int k = 0; k < cells; ++k) {
    float a[6];
    for (int q = 0; q < 6; ++q) a[q] = field.params[std::size_t(q) * cells + k];
    const auto w = warp_patch(std::span<const float, 6>(a, 6),
                              std::span<const float>(input_patches.data() + k * in_sz, in_sz), d_in, d_out);
    std::copy(w.begin(), w.end(), out.data() + k * out_sz);
  }
  return out;
}

OverlapResult overlap_average(const Tensor<float>& patches, const GridSpec& grid) {
  if (patches.rank() != 3 || patches.dim(0) != grid.cells() || patches.dim(1) != grid.d_out)
    throw UsageError("overlap_average: patch count or size does not match grid");
  OverlapResult res;
  res.plane.assign(std::size_t(grid.rows) * grid.cols, 0.f);
  res.weights = grid.coverage();
  const int d = grid.d_out;
  // Fixed cell order keeps the summation order (and result bits) reproducible.
  for (int i = 0; i < grid.n_r; ++i)
    for (int j = 0; j < grid.n_c; ++j) {
      const float* p = patches.data() + std::size_t(i * grid.n_c + j) * d * d;
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
          res.plane[std::size_t(i * grid.stride_r + a) * grid.cols + j * grid.stride_c + b] += p[a * d + b];
    }
  for (std::size_t idx = 0; idx < res.plane.size(); ++idx)
    if (res.weights[idx] > 0) res.plane[idx] /= float(res.weights[idx]);
  return res;
}

// ---------------------------------------------------------------------------

ReconstructionObjective::ReconstructionObjective(std::span<const float> x_plane,
                                                 std::span<const float> y_plane,
                                                 const GridSpec& grid)
    : grid_(grid), target_(y_plane.begin(), y_plane.end()) {
  const std::size_t n = std::size_t(grid.rows) * grid.cols;
  if (x_plane.size() != n || y_plane.size() != n)
    throw UsageError("extraction: frame size does not match grid " + std::to_string(grid.rows) +
                     "x" + std::to_string(grid.cols));
  patches_ = gather_input_patches(x_plane, grid);
  const auto count = grid.coverage();
  inv_count_.resize(n);
  for (std::size_t i = 0; i < n; ++i) inv_count_[i] = count[i] > 0 ? 1.f / float(count[i]) : 0.f;

  fixed_sum_.assign(n, 0.f);
  const int d_in = grid.d_in, d = grid.d_out;
  const std::size_t in_sz = std::size_t(d_in) * d_in;
  for (int k = 0; k < grid.cells(); ++k) {
    const float* p = patches_.data() + k * in_sz;
    bool flat = true;
    for (std::size_t q = 1; q < in_sz && flat; ++q) flat = p[q] == p[0];
    if (!flat) {
      active_.push_back(k);
      continue;
    }
    const int i = k / grid.n_c, j = k % grid.n_c;
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        fixed_sum_[std::size_t(i * grid.stride_r + a) * grid.cols + j * grid.stride_c + b] += p[0];
  }
}

double ReconstructionObjective::evaluate(std::span<const float> params,
                                         std::vector<float>* grad) const {
  const GridSpec& g = grid_;
  const int cells = g.cells();
  if (params.size() != std::size_t(6) * cells) throw UsageError("objective: parameter count mismatch");
  const int d_in = g.d_in, d = g.d_out;
  const std::size_t in_sz = std::size_t(d_in) * d_in, out_sz = std::size_t(d) * d;
  const auto off = center_offsets(d);
  const float center_in = float(d_in - 1) / 2.f;

  std::vector<float> recon = fixed_sum_;
  // Per active pixel: d(value)/d(row), d(value)/d(col).
  std::vector<float> d_row(active_.size() * out_sz), d_col(active_.size() * out_sz);
  for (std::size_t ai = 0; ai < active_.size(); ++ai) {
    const int k = active_[ai];
    const int i = k / g.n_c, j = k % g.n_c;
    const float a11 = params[0 * cells + k], a12 = params[1 * cells + k], tr = params[2 * cells + k];
    const float a21 = params[3 * cells + k], a22 = params[4 * cells + k], tc = params[5 * cells + k];
    const float* s = patches_.data() + k * in_sz;
    float* dr = d_row.data() + ai * out_sz;
    float* dc = d_col.data() + ai * out_sz;
    for (int oi = 0; oi < d; ++oi) {
      float* rec = recon.data() + std::size_t(i * g.stride_r + oi) * g.cols + j * g.stride_c;
      for (int oj = 0; oj < d; ++oj) {
        const float row = center_in + a11 * off[oi] + a12 * off[oj] + tr;
        const float col = center_in + a21 * off[oi] + a22 * off[oj] + tc;
        const auto t = ad::bilinear_tap(row, col, d_in, d_in);
        const float s00 = s[t.r0 * d_in + t.c0], s01 = s[t.r0 * d_in + t.c1];
        const float s10 = s[t.r1 * d_in + t.c0], s11 = s[t.r1 * d_in + t.c1];
        const float top = s00 + t.fc * (s01 - s00);
        const float bot = s10 + t.fc * (s11 - s10);
        rec[oj] += top + t.fr * (bot - top);
        dr[oi * d + oj] = t.clamp_r ? 0.f : bot - top;
        dc[oi * d + oj] = t.clamp_c ? 0.f : (1.f - t.fr) * (s01 - s00) + t.fr * (s11 - s10);
      }
    }
  }

  const std::size_t n = recon.size();
  double loss = 0.0;
  std::vector<float> g_recon(grad ? n : 0);
  const float scale = 2.f / float(n);
  for (std::size_t q = 0; q < n; ++q) {
    const float r = recon[q] * inv_count_[q] - target_[q];
    loss += double(r) * r;
    if (grad) g_recon[q] = scale * r * inv_count_[q];
  }
  loss /= double(n);

  if (grad) {
    grad->assign(std::size_t(6) * cells, 0.f);
    for (std::size_t ai = 0; ai < active_.size(); ++ai) {
      const int k = active_[ai];
      const int i = k / g.n_c, j = k % g.n_c;
      const float* dr = d_row.data() + ai * out_sz;
      const float* dc = d_col.data() + ai * out_sz;
      double acc[6] = {0, 0, 0, 0, 0, 0};
      for (int oi = 0; oi < d; ++oi) {
        const float* gr = g_recon.data() + std::size_t(i * g.stride_r + oi) * g.cols + j * g.stride_c;
        for (int oj = 0; oj < d; ++oj) {
          const float gv = gr[oj];
          const float gwr = gv * dr[oi * d + oj], gwc = gv * dc[oi * d + oj];
          acc[0] += gwr * off[oi];
          acc[1] += gwr * off[oj];
          acc[2] += gwr;
          acc[3] += gwc * off[oi];
          acc[4] += gwc * off[oj];
          acc[5] += gwc;
        }
      }
      for (int q = 0; q < 6; ++q) (*grad)[std::size_t(q) * cells + k] = float(acc[q]);
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------

ExtractionResult extract_pair(const Frame& x, const Frame& y, const GridSpec& grid,
                              const ExtractorConfig& cfg) {
  cfg.validate();
  if (!x.same_shape(y)) throw UsageError("extract_pair: frames differ in shape");
  if (x.rows != grid.rows || x.cols != grid.cols)
    throw ConfigError("extract_pair: frame " + std::to_string(x.rows) + "x" + std::to_string(x.cols) +
                      " does not match grid " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols));
  const auto xl = x.luminance();
  const auto yl = y.luminance();
  ReconstructionObjective objective(xl, yl, grid);

  AffineField field = AffineField::identity(grid.n_r, grid.n_c);
  std::vector<float>& p = field.params;
  const std::size_t np = p.size();
  std::vector<float> m(np, 0.f), v(np, 0.f), grad;
  std::vector<float> best_params = p;
  double best = 0.0;
  std::vector<double> best_history;
  best_history.reserve(cfg.max_iters);

  ExtractionResult res;
  double b1t = 1.0, b2t = 1.0;
  for (int it = 0; it < cfg.max_iters; ++it) {
    const double loss = objective.evaluate(p, &grad);
    if (!std::isfinite(loss))
      throw NumericalError("extraction diverged at iteration " + std::to_string(it) +
                           " (non-finite loss); reduce the extractor step size");
    if (it == 0) {
      res.initial_loss = loss;
      best = loss;
    } else if (loss < best) {
      best = loss;
      best_params = p;
    }
    best_history.push_back(best);
    res.iterations = it + 1;
    if (best <= 0.0) break;
    if (it >= cfg.window) {
      const double prev = best_history[it - cfg.window];
      if (prev - best <= cfg.rel_threshold * prev) break;
    }
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    const std::size_t cells = std::size_t(grid.cells());
    for (std::size_t q = 0; q < np; ++q) {
      const int param = static_cast<int>(q / cells);
      const float lr =
          (param == AffineField::TRow || param == AffineField::TCol) ? cfg.translation_step : cfg.step;
      m[q] = cfg.beta1 * m[q] + (1.f - cfg.beta1) * grad[q];
      v[q] = cfg.beta2 * v[q] + (1.f - cfg.beta2) * grad[q] * grad[q];
      const double mh = m[q] / (1.0 - b1t);
      const double vh = v[q] / (1.0 - b2t);
      p[q] -= float(lr * mh / (std::sqrt(vh) + cfg.eps));
    }
  }
  field.params = std::move(best_params);
  if (!field.all_finite()) throw NumericalError("extraction produced a non-finite field");
  res.field = std::move(field);
  res.loss = best;
  return res;
}

std::vector<AffineField> extract_sequence(const std::vector<Frame>& frames, const GridSpec& grid,
                                          const ExtractorConfig& cfg, int threads) {
  if (frames.size() < 2) throw UsageError("extract_sequence: need at least 2 frames");
  const int pairs = static_cast<int>(frames.size()) - 1;
  std::vector<AffineField> out(pairs);
  parallel_for(pairs, threads, [&](int i) {
    try {
      out[i] = extract_pair(frames[i], frames[i + 1], grid, cfg).field;
    } catch (const NumericalError& e) {
      throw NumericalError("pair " + std::to_string(i) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("pair " + std::to_string(i) + ": " + e.what());
    } catch (const UsageError& e) {
      throw UsageError("pair " + std::to_string(i) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace afp
