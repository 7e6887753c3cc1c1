#include "afp/autodiff.hpp"

#include <cmath>
#include <string>

#include "blas.hpp"

namespace afp::ad {

namespace {

std::atomic<std::uint64_t> g_conv_flops{0};

void require_same_shape(const char* op, const std::vector<int>& a, const std::vector<int>& b) {
  if (a != b) throw UsageError(std::string(op) + ": operand shapes differ");
}

template <typename T>
void im2col(const T* x, int c_in, int h, int w, int k, int pad, int stride, int ho, int wo,
            T* col) {
  const int plane = ho * wo;
  for (int c = 0; c < c_in; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        T* dst = col + (std::size_t(c * k + ki) * k + kj) * plane;
        const T* src = x + std::size_t(c) * h * w;
        for (int oi = 0; oi < ho; ++oi) {
          const int r = oi * stride + ki - pad;
          T* row_dst = dst + oi * wo;
          if (r < 0 || r >= h) {
            std::fill(row_dst, row_dst + wo, T(0));
            continue;
          }
          for (int oj = 0; oj < wo; ++oj) {
            const int cc = oj * stride + kj - pad;
            row_dst[oj] = (cc >= 0 && cc < w) ? src[r * w + cc] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, int c_in, int h, int w, int k, int pad, int stride, int ho, int wo,
                T* x) {
  const int plane = ho * wo;
  for (int c = 0; c < c_in; ++c)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const T* src = col + (std::size_t(c * k + ki) * k + kj) * plane;
        T* dst = x + std::size_t(c) * h * w;
        for (int oi = 0; oi < ho; ++oi) {
          const int r = oi * stride + ki - pad;
          if (r < 0 || r >= h) continue;
          for (int oj = 0; oj < wo; ++oj) {
            const int cc = oj * stride + kj - pad;
            if (cc >= 0 && cc < w) dst[r * w + cc] += src[oi * wo + oj];
          }
        }
      }
}

}  // namespace

const char* op_name(OpTag tag) {
  switch (tag) {
    case OpTag::Leaf: return "leaf";
    case OpTag::Add: return "add";
    case OpTag::Sub: return "sub";
    case OpTag::Mul: return "mul";
    case OpTag::Scale: return "scale";
    case OpTag::ChannelAffine: return "channel_affine";
    case OpTag::Relu: return "relu";
    case OpTag::Conv2d: return "conv2d";
    case OpTag::BilinearSample: return "bilinear_sample";
    case OpTag::AffineCoords: return "affine_coords";
    case OpTag::OverlapAverage: return "overlap_average";
    case OpTag::Concat: return "concat";
    case OpTag::Mse: return "mse";
    case OpTag::GlobalAvgPool: return "global_avg_pool";
    case OpTag::Linear: return "linear";
    case OpTag::SoftmaxXent: return "softmax_xent";
  }
  return "?";
}

std::uint64_t conv_flops() { return g_conv_flops.load(); }
void reset_conv_flops() { g_conv_flops.store(0); }

// ---------------------------------------------------------------------------
// Graph

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  return emit(OpTag::Leaf, {}, std::move(value), nullptr);
}

template <typename T>
Var Graph<T>::parameter(Tensor<T> value) {
  Var v = emit(OpTag::Leaf, {}, std::move(value), nullptr);
  nodes_[v.id].requires_grad = true;
  return v;
}

template <typename T>
const Tensor<T>& Graph<T>::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty())
    throw UsageError(std::string("no gradient at node ") + std::to_string(v.id) + " (" +
                     op_name(n.tag) + ")");
  return n.grad;
}

template <typename T>
Var Graph<T>::emit(OpTag tag, std::vector<int> parents, Tensor<T> value, Backward backward) {
  if (!value.all_finite())
    throw NumericalError(std::string("non-finite output from ") + op_name(tag));
  Node n;
  n.tag = tag;
  n.parents = std::move(parents);
  n.value = std::move(value);
  for (int p : n.parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Tensor<T>& Graph<T>::grad_slot(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var loss) {
  if (loss.id < 0 || loss.id >= static_cast<int>(nodes_.size()))
    throw UsageError("backward: invalid loss node");
  if (nodes_[loss.id].value.size() != 1)
    throw UsageError("backward: loss must be scalar, got shape " +
                     nodes_[loss.id].value.shape_string());
  for (Node& n : nodes_) n.grad = Tensor<T>();
  grad_slot(loss.id)[0] = T(1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  require_same_shape("add", va.shape(), vb.shape());
  Tensor<T> out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  return g.emit(OpTag::Add, {a.id, b.id}, std::move(out), [a, b](Graph<T>& gr, int self) {
    const auto& gy = gr.node(self).grad;
    for (Var p : {a, b}) {
      if (!gr.requires_grad(p.id)) continue;
      auto& gp = gr.grad_slot(p.id);
      for (std::size_t i = 0; i < gy.size(); ++i) gp[i] += gy[i];
    }
  });
}

template <typename T>
Var sub(Graph<T>& g, Var a, Var b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  require_same_shape("sub", va.shape(), vb.shape());
  Tensor<T> out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
  return g.emit(OpTag::Sub, {a.id, b.id}, std::move(out), [a, b](Graph<T>& gr, int self) {
    const auto& gy = gr.node(self).grad;
    if (gr.requires_grad(a.id)) {
      auto& ga = gr.grad_slot(a.id);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (gr.requires_grad(b.id)) {
      auto& gb = gr.grad_slot(b.id);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
    }
  });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  require_same_shape("mul", va.shape(), vb.shape());
  Tensor<T> out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  return g.emit(OpTag::Mul, {a.id, b.id}, std::move(out), [a, b](Graph<T>& gr, int self) {
    const auto& gy = gr.node(self).grad;
    const auto& va = gr.node(a.id).value;
    const auto& vb = gr.node(b.id).value;
    if (gr.requires_grad(a.id)) {
      auto& ga = gr.grad_slot(a.id);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * vb[i];
    }
    if (gr.requires_grad(b.id)) {
      auto& gb = gr.grad_slot(b.id);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * va[i];
    }
  });
}

template <typename T>
Var scale(Graph<T>& g, Var a, T factor) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.storage()) v *= factor;
  return g.emit(OpTag::Scale, {a.id}, std::move(out), [a, factor](Graph<T>& gr, int self) {
    const auto& gy = gr.node(self).grad;
    auto& ga = gr.grad_slot(a.id);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * factor;
  });
}

template <typename T>
Var channel_affine(Graph<T>& g, Var a, std::span<const T> gain, std::span<const T> offset) {
  const auto& va = g.value(a);
  const int channels = va.dim(0);
  if (static_cast<int>(gain.size()) != channels || static_cast<int>(offset.size()) != channels)
    throw UsageError("channel_affine: gain/offset length must equal channel count");
  const std::size_t plane = va.size() / channels;
  Tensor<T> out = va;
  for (int c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      T& v = out[c * plane + i];
      v = v * gain[c] + offset[c];
    }
  std::vector<T> gains(gain.begin(), gain.end());
  return g.emit(OpTag::ChannelAffine, {a.id}, std::move(out),
                [a, gains = std::move(gains), plane](Graph<T>& gr, int self) {
                  const auto& gy = gr.node(self).grad;
                  auto& ga = gr.grad_slot(a.id);
                  for (std::size_t c = 0; c < gains.size(); ++c)
                    for (std::size_t i = 0; i < plane; ++i)
                      ga[c * plane + i] += gy[c * plane + i] * gains[c];
                });
}

template <typename T>
Var relu(Graph<T>& g, Var a) {
  Tensor<T> out = g.value(a);
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  return g.emit(OpTag::Relu, {a.id}, std::move(out), [a](Graph<T>& gr, int self) {
    const auto& gy = gr.node(self).grad;
    const auto& x = gr.node(a.id).value;
    auto& ga = gr.grad_slot(a.id);
    for (std::size_t i = 0; i < gy.size(); ++i)
      if (x[i] > T(0)) ga[i] += gy[i];
  });
}

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
Var conv2d(Graph<T>& g, Var input, Var weights, Var bias, int zero_pad, int stride) {
  const auto& x = g.value(input);
  const auto& w = g.value(weights);
  const auto& b = g.value(bias);
  if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1)
    throw UsageError("conv2d: expected input C×H×W, weights O×C×k×k, bias O");
  const int c_in = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int c_out = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c_in)
    throw ConfigError("conv2d: input has " + std::to_string(c_in) +
                      " channels but weights expect " + std::to_string(w.dim(1)));
  if (w.dim(3) != k) throw ConfigError("conv2d: kernel must be square");
  if (b.dim(0) != c_out) throw ConfigError("conv2d: bias length must equal output channels");
  if (stride < 1 || zero_pad < 0) throw UsageError("conv2d: invalid stride/padding");
  const int ho = (h + 2 * zero_pad - k) / stride + 1;
  const int wo = (wd + 2 * zero_pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw UsageError("conv2d: kernel larger than padded input");

  const int ckk = c_in * k * k;
  const int plane = ho * wo;
  std::vector<T> col(std::size_t(ckk) * plane);
  im2col(x.data(), c_in, h, wd, k, zero_pad, stride, ho, wo, col.data());

  Tensor<T> out({c_out, ho, wo});
  for (int o = 0; o < c_out; ++o) std::fill_n(out.data() + std::size_t(o) * plane, plane, b[o]);
  detail::gemm(false, false, c_out, plane, ckk, T(1), w.data(), ckk, col.data(), plane, T(1),
               out.data(), plane);
  g_conv_flops.fetch_add(2ull * c_out * ckk * plane, std::memory_order_relaxed);

  return g.emit(
      OpTag::Conv2d, {input.id, weights.id, bias.id}, std::move(out),
      [=, col = std::move(col)](Graph<T>& gr, int self) {
        const auto& gy = gr.node(self).grad;
        if (gr.requires_grad(weights.id)) {
          auto& gw = gr.grad_slot(weights.id);
          detail::gemm(false, true, c_out, ckk, plane, T(1), gy.data(), plane, col.data(), plane,
                       T(1), gw.data(), ckk);
        }
        if (gr.requires_grad(bias.id)) {
          auto& gb = gr.grad_slot(bias.id);
          for (int o = 0; o < c_out; ++o) {
            T s = 0;
            const T* row = gy.data() + std::size_t(o) * plane;
            for (int i = 0; i < plane; ++i) s += row[i];
            gb[o] += s;
          }
        }
        if (gr.requires_grad(input.id)) {
          const auto& wv = gr.node(weights.id).value;
          std::vector<T> gcol(std::size_t(ckk) * plane);
          detail::gemm(true, false, ckk, plane, c_out, T(1), wv.data(), ckk, gy.data(), plane,
                       T(0), gcol.data(), plane);
          auto& gx = gr.grad_slot(input.id);
          col2im_add(gcol.data(), c_in, h, wd, k, zero_pad, stride, ho, wo, gx.data());
        }
      });
}

// ---------------------------------------------------------------------------
// Sampling and patch geometry

template <typename T>
Var bilinear_sample(Graph<T>& g, Var source, Var coords) {
  const auto& src = g.value(source);
  const auto& crd = g.value(coords);
  if (src.rank() != 3) throw UsageError("bilinear_sample: source must be B×h×w");
  const int batch = src.dim(0), h = src.dim(1), w = src.dim(2);
  int ho, wo;
  if (crd.rank() == 3 && batch == 1 && crd.dim(0) == 2) {
    ho = crd.dim(1);
    wo = crd.dim(2);
  } else if (crd.rank() == 4 && crd.dim(0) == batch && crd.dim(1) == 2) {
    ho = crd.dim(2);
    wo = crd.dim(3);
  } else {
    throw UsageError("bilinear_sample: coords must be B×2×h'×w' matching source batch");
  }
  const int plane = ho * wo;
  Tensor<T> out({batch, ho, wo});
  for (int bi = 0; bi < batch; ++bi) {
    const T* s = src.data() + std::size_t(bi) * h * w;
    const T* rows = crd.data() + std::size_t(bi) * 2 * plane;
    const T* cols = rows + plane;
    T* o = out.data() + std::size_t(bi) * plane;
    for (int p = 0; p < plane; ++p) {
      const auto t = bilinear_tap(rows[p], cols[p], h, w);
      const T top = s[t.r0 * w + t.c0] + t.fc * (s[t.r0 * w + t.c1] - s[t.r0 * w + t.c0]);
      const T bot = s[t.r1 * w + t.c0] + t.fc * (s[t.r1 * w + t.c1] - s[t.r1 * w + t.c0]);
      o[p] = top + t.fr * (bot - top);
    }
  }
  return g.emit(
      OpTag::BilinearSample, {source.id, coords.id}, std::move(out),
      [=](Graph<T>& gr, int self) {
        const auto& gy = gr.node(self).grad;
        const auto& src = gr.node(source.id).value;
        const auto& crd = gr.node(coords.id).value;
        T* gsrc = gr.requires_grad(source.id) ? gr.grad_slot(source.id).data() : nullptr;
        T* gcrd = gr.requires_grad(coords.id) ? gr.grad_slot(coords.id).data() : nullptr;
        for (int bi = 0; bi < batch; ++bi) {
          const T* s = src.data() + std::size_t(bi) * h * w;
          const T* rows = crd.data() + std::size_t(bi) * 2 * plane;
          const T* cols = rows + plane;
          const T* go = gy.data() + std::size_t(bi) * plane;
          for (int p = 0; p < plane; ++p) {
            const auto t = bilinear_tap(rows[p], cols[p], h, w);
            const T gp = go[p];
            if (gsrc) {
              T* gs = gsrc + std::size_t(bi) * h * w;
              gs[t.r0 * w + t.c0] += gp * (T(1) - t.fr) * (T(1) - t.fc);
              gs[t.r0 * w + t.c1] += gp * (T(1) - t.fr) * t.fc;
              gs[t.r1 * w + t.c0] += gp * t.fr * (T(1) - t.fc);
              gs[t.r1 * w + t.c1] += gp * t.fr * t.fc;
            }
            if (gcrd) {
              const T s00 = s[t.r0 * w + t.c0], s01 = s[t.r0 * w + t.c1];
              const T s10 = s[t.r1 * w + t.c0], s11 = s[t.r1 * w + t.c1];
              T* gr_row = gcrd + std::size_t(bi) * 2 * plane;
              if (!t.clamp_r)
                gr_row[p] += gp * ((T(1) - t.fc) * (s10 - s00) + t.fc * (s11 - s01));
              if (!t.clamp_c)
                gr_row[plane + p] += gp * ((T(1) - t.fr) * (s01 - s00) + t.fr * (s11 - s10));
            }
          }
        }
      });
}

template <typename T>
Var affine_coords(Graph<T>& g, Var params, int d_in, int d_out) {
  const auto& prm = g.value(params);
  if (prm.rank() != 3 || prm.dim(0) != 6)
    throw UsageError("affine_coords: params must be 6×n_r×n_c");
  if (d_out < 1 || d_in < 1) throw UsageError("affine_coords: patch sizes must be positive");
  const int cells = prm.dim(1) * prm.dim(2);
  const int plane = d_out * d_out;
  const T center_in = T(d_in - 1) / T(2);
  const T center_out = T(d_out - 1) / T(2);
  Tensor<T> out({cells, 2, d_out, d_out});
  for (int k = 0; k < cells; ++k) {
    const T a11 = prm[0 * cells + k], a12 = prm[1 * cells + k], tr = prm[2 * cells + k];
    const T a21 = prm[3 * cells + k], a22 = prm[4 * cells + k], tc = prm[5 * cells + k];
    T* rows = out.data() + std::size_t(k) * 2 * plane;
    T* cols = rows + plane;
    for (int oi = 0; oi < d_out; ++oi) {
      const T di = T(oi) - center_out;
      for (int oj = 0; oj < d_out; ++oj) {
        const T dj = T(oj) - center_out;
        rows[oi * d_out + oj] = center_in + a11 * di + a12 * dj + tr;
        cols[oi * d_out + oj] = center_in + a21 * di + a22 * dj + tc;
      }
    }
  }
  return g.emit(OpTag::AffineCoords, {params.id}, std::move(out),
                [=](Graph<T>& gr, int self) {
                  const auto& gy = gr.node(self).grad;
                  auto& gp = gr.grad_slot(params.id);
                  for (int k = 0; k < cells; ++k) {
                    const T* grow = gy.data() + std::size_t(k) * 2 * plane;
                    const T* gcol = grow + plane;
                    T s[6] = {0, 0, 0, 0, 0, 0};
                    for (int oi = 0; oi < d_out; ++oi) {
                      const T di = T(oi) - center_out;
                      for (int oj = 0; oj < d_out; ++oj) {
                        const T dj = T(oj) - center_out;
                        const T r = grow[oi * d_out + oj], c = gcol[oi * d_out + oj];
                        s[0] += r * di;
                        s[1] += r * dj;
                        s[2] += r;
                        s[3] += c * di;
                        s[4] += c * dj;
                        s[5] += c;
                      }
                    }
                    for (int q = 0; q < 6; ++q) gp[q * cells + k] += s[q];
                  }
                });
}

template <typename T>
Var overlap_average(Graph<T>& g, Var patches, int n_r, int n_c, int stride_r, int stride_c,
                    int rows, int cols) {
  const auto& pv = g.value(patches);
  if (pv.rank() != 3 || pv.dim(0) != n_r * n_c || pv.dim(1) != pv.dim(2))
    throw UsageError("overlap_average: expected (n_r·n_c)×d×d patches");
  const int d = pv.dim(1);
  if ((n_r - 1) * stride_r + d > rows || (n_c - 1) * stride_c + d > cols)
    throw UsageError("overlap_average: patch grid exceeds frame");
  std::vector<T> inv_count(std::size_t(rows) * cols, T(0));
  Tensor<T> out({1, rows, cols});
  for (int i = 0; i < n_r; ++i)
    for (int j = 0; j < n_c; ++j) {
      const T* p = pv.data() + std::size_t(i * n_c + j) * d * d;
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) {
          const std::size_t idx = std::size_t(i * stride_r + a) * cols + j * stride_c + b;
          out[idx] += p[a * d + b];
          inv_count[idx] += T(1);
        }
    }
  for (std::size_t idx = 0; idx < inv_count.size(); ++idx) {
    if (inv_count[idx] > T(0)) {
      inv_count[idx] = T(1) / inv_count[idx];
      out[idx] *= inv_count[idx];
    }
  }
  return g.emit(OpTag::OverlapAverage, {patches.id}, std::move(out),
                [=, inv = std::move(inv_count)](Graph<T>& gr, int self) {
                  const auto& gy = gr.node(self).grad;
                  auto& gp = gr.grad_slot(patches.id);
                  for (int i = 0; i < n_r; ++i)
                    for (int j = 0; j < n_c; ++j) {
                      T* p = gp.data() + std::size_t(i * n_c + j) * d * d;
                      for (int a = 0; a < d; ++a)
                        for (int b = 0; b < d; ++b) {
                          const std::size_t idx =
                              std::size_t(i * stride_r + a) * cols + j * stride_c + b;
                          p[a * d + b] += gy[idx] * inv[idx];
                        }
                    }
                });
}

// ---------------------------------------------------------------------------
// Structural ops and reductions

template <typename T>
Var concat(Graph<T>& g, std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  std::vector<int> shape = g.value(parts[0]).shape();
  std::vector<int> ids;
  int channels = 0;
  for (Var p : parts) {
    const auto& s = g.value(p).shape();
    if (s.size() != shape.size() || !std::equal(s.begin() + 1, s.end(), shape.begin() + 1))
      throw UsageError("concat: trailing extents differ");
    channels += s[0];
    ids.push_back(p.id);
  }
  shape[0] = channels;
  Tensor<T> out(shape);
  std::size_t offset = 0;
  for (Var p : parts) {
    const auto& v = g.value(p);
    std::copy(v.data(), v.data() + v.size(), out.data() + offset);
    offset += v.size();
  }
  std::vector<Var> pv(parts.begin(), parts.end());
  return g.emit(OpTag::Concat, ids, std::move(out), [pv](Graph<T>& gr, int self) {
    const auto& gy = gr.node(self).grad;
    std::size_t offset = 0;
    for (Var p : pv) {
      const std::size_t n = gr.node(p.id).value.size();
      if (gr.requires_grad(p.id)) {
        auto& gp = gr.grad_slot(p.id);
        for (std::size_t i = 0; i < n; ++i) gp[i] += gy[offset + i];
      }
      offset += n;
    }
  });
}

template <typename T>
Var mse(Graph<T>& g, Var a, Var b) {
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  if (va.shape() != vb.shape())
    throw ConfigError("mse: shape mismatch " + va.shape_string() + " vs " + vb.shape_string());
  T sum = 0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const T d = va[i] - vb[i];
    sum += d * d;
  }
  const T n = T(va.size());
  return g.emit(OpTag::Mse, {a.id, b.id}, Tensor<T>::scalar(sum / n),
                [a, b, n](Graph<T>& gr, int self) {
                  const T gy = gr.node(self).grad[0];
                  const auto& va = gr.node(a.id).value;
                  const auto& vb = gr.node(b.id).value;
                  const T f = T(2) * gy / n;
                  if (gr.requires_grad(a.id)) {
                    auto& ga = gr.grad_slot(a.id);
                    for (std::size_t i = 0; i < va.size(); ++i) ga[i] += f * (va[i] - vb[i]);
                  }
                  if (gr.requires_grad(b.id)) {
                    auto& gb = gr.grad_slot(b.id);
                    for (std::size_t i = 0; i < va.size(); ++i) gb[i] -= f * (va[i] - vb[i]);
                  }
                });
}

template <typename T>
Var global_avg_pool(Graph<T>& g, Var a) {
  const auto& va = g.value(a);
  if (va.rank() != 3) throw UsageError("global_avg_pool: expected C×H×W");
  const int c = va.dim(0);
  const std::size_t plane = std::size_t(va.dim(1)) * va.dim(2);
  Tensor<T> out({c});
  for (int ch = 0; ch < c; ++ch) {
    T s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += va[ch * plane + i];
    out[ch] = s / T(plane);
  }
  return g.emit(OpTag::GlobalAvgPool, {a.id}, std::move(out), [a, c, plane](Graph<T>& gr, int self) {
    const auto& gy = gr.node(self).grad;
    auto& ga = gr.grad_slot(a.id);
    for (int ch = 0; ch < c; ++ch) {
      const T v = gy[ch] / T(plane);
      for (std::size_t i = 0; i < plane; ++i) ga[ch * plane + i] += v;
    }
  });
}

template <typename T>
Var linear(Graph<T>& g, Var input, Var weights, Var bias) {
  const auto& x = g.value(input);
  const auto& w = g.value(weights);
  const auto& b = g.value(bias);
  if (w.rank() != 2 || b.rank() != 1 || w.dim(1) != static_cast<int>(x.size()) ||
      b.dim(0) != w.dim(0))
    throw ConfigError("linear: weights must be out×in with in = input size, bias out");
  const int n_out = w.dim(0), n_in = w.dim(1);
  Tensor<T> out = b;
  for (int o = 0; o < n_out; ++o) {
    T s = 0;
    for (int i = 0; i < n_in; ++i) s += w[std::size_t(o) * n_in + i] * x[i];
    out[o] += s;
  }
  g_conv_flops.fetch_add(2ull * n_out * n_in, std::memory_order_relaxed);
  return g.emit(OpTag::Linear, {input.id, weights.id, bias.id}, std::move(out),
                [=](Graph<T>& gr, int self) {
                  const auto& gy = gr.node(self).grad;
                  const auto& x = gr.node(input.id).value;
                  const auto& w = gr.node(weights.id).value;
                  if (gr.requires_grad(weights.id)) {
                    auto& gw = gr.grad_slot(weights.id);
                    for (int o = 0; o < n_out; ++o)
                      for (int i = 0; i < n_in; ++i) gw[std::size_t(o) * n_in + i] += gy[o] * x[i];
                  }
                  if (gr.requires_grad(bias.id)) {
                    auto& gb = gr.grad_slot(bias.id);
                    for (int o = 0; o < n_out; ++o) gb[o] += gy[o];
                  }
                  if (gr.requires_grad(input.id)) {
                    auto& gx = gr.grad_slot(input.id);
                    for (int o = 0; o < n_out; ++o)
                      for (int i = 0; i < n_in; ++i) gx[i] += gy[o] * w[std::size_t(o) * n_in + i];
                  }
                });
}

template <typename T>
Var softmax_xent(Graph<T>& g, Var logits, int label) {
  const auto& z = g.value(logits);
  const int n = static_cast<int>(z.size());
  if (label < 0 || label >= n) throw UsageError("softmax_xent: label out of range");
  T mx = z[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, z[i]);
  std::vector<T> prob(n);
  T denom = 0;
  for (int i = 0; i < n; ++i) denom += (prob[i] = std::exp(z[i] - mx));
  for (auto& p : prob) p /= denom;
  const T loss = -(z[label] - mx - std::log(denom));
  return g.emit(OpTag::SoftmaxXent, {logits.id}, Tensor<T>::scalar(loss),
                [logits, label, prob = std::move(prob)](Graph<T>& gr, int self) {
                  const T gy = gr.node(self).grad[0];
                  auto& gz = gr.grad_slot(logits.id);
                  for (std::size_t i = 0; i < prob.size(); ++i)
                    gz[i] += gy * (prob[i] - (static_cast<int>(i) == label ? T(1) : T(0)));
                });
}

// ---------------------------------------------------------------------------

#define AFP_INSTANTIATE(T)                                                                    \
  template class Graph<T>;                                                                    \
  template Var add<T>(Graph<T>&, Var, Var);                                                   \
  template Var sub<T>(Graph<T>&, Var, Var);                                                   \
  template Var mul<T>(Graph<T>&, Var, Var);                                                   \
  template Var scale<T>(Graph<T>&, Var, T);                                                   \
  template Var channel_affine<T>(Graph<T>&, Var, std::span<const T>, std::span<const T>);     \
  template Var relu<T>(Graph<T>&, Var);                                                       \
  template Var conv2d<T>(Graph<T>&, Var, Var, Var, int, int);                                 \
  template Var bilinear_sample<T>(Graph<T>&, Var, Var);                                       \
  template Var affine_coords<T>(Graph<T>&, Var, int, int);                                    \
  template Var overlap_average<T>(Graph<T>&, Var, int, int, int, int, int, int);              \
  template Var concat<T>(Graph<T>&, std::span<const Var>);                                    \
  template Var mse<T>(Graph<T>&, Var, Var);                                                   \
  template Var global_avg_pool<T>(Graph<T>&, Var);                                            \
  template Var linear<T>(Graph<T>&, Var, Var, Var);                                           \
  template Var softmax_xent<T>(Graph<T>&, Var, int);

AFP_INSTANTIATE(float)
AFP_INSTANTIATE(double)

#undef AFP_INSTANTIATE

}  // namespace afp::ad
