#pragma once

// Define-by-run reverse-mode differentiation over dense tensors.
//
// A Graph is an append-only tape. Every op appends one node holding its
// output value and a closure that pushes the node's gradient into its
// parents. Parent ids are always smaller than the node id, so a single
// reverse sweep is a valid topological order.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "afp/tensor.hpp"

namespace afp::ad {

enum class OpTag {
  Leaf,
  Add,
  Sub,
  Mul,
  Scale,
  ChannelAffine,
  Relu,
  Conv2d,
  BilinearSample,
  AffineCoords,
  OverlapAverage,
  Concat,
  Mse,
  GlobalAvgPool,
  Linear,
  SoftmaxXent,
};

const char* op_name(OpTag tag);

struct Var {
  int id = -1;
};

template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&, int self)>;

  struct Node {
    OpTag tag;
    std::vector<int> parents;
    Tensor<T> value;
    Tensor<T> grad;  // empty until backward reaches the node
    bool requires_grad = false;
    Backward backward;
  };

  /// Leaf that never receives a gradient.
  Var constant(Tensor<T> value);
  /// Leaf whose gradient is populated by backward().
  Var parameter(Tensor<T> value);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor<T>& grad(Var v) const;
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  const Node& node(int id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Every node
  /// reachable from the loss through differentiable edges ends up with a
  /// gradient of its output's shape; fan-out contributions are summed.
  void backward(Var loss);

  // Op-building interface.
  Var emit(OpTag tag, std::vector<int> parents, Tensor<T> value, Backward backward);
  /// Gradient buffer of node `id`, zero-allocated on first use.
  Tensor<T>& grad_slot(int id);

 private:
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations. All shape errors are UsageError/ConfigError; all ops verify
// their outputs are finite and throw NumericalError otherwise.

template <typename T> Var add(Graph<T>& g, Var a, Var b);
template <typename T> Var sub(Graph<T>& g, Var a, Var b);
template <typename T> Var mul(Graph<T>& g, Var a, Var b);
template <typename T> Var scale(Graph<T>& g, Var a, T factor);

/// out[c, ...] = in[c, ...] * gain[c] + offset[c]; gain/offset are constants.
template <typename T>
Var channel_affine(Graph<T>& g, Var a, std::span<const T> gain, std::span<const T> offset);

template <typename T> Var relu(Graph<T>& g, Var a);

/// Cross-correlation (no kernel flip). input C_in×H×W, weights
/// C_out×C_in×k×k, bias C_out. Output C_out×H'×W' with
/// H' = (H + 2·pad − k)/stride + 1.
template <typename T>
Var conv2d(Graph<T>& g, Var input, Var weights, Var bias, int zero_pad, int stride = 1);

/// Bilinear interpolation of `source` (B×h×w, or 1×h×w) at `coords`
/// (B×2×h'×w', or 2×h'×w' for B = 1) holding (row, col) positions in source
/// pixel units. Positions are clamped to [0,h−1]×[0,w−1]. Output B×h'×w'.
/// Differentiable in both source and coords.
template <typename T> Var bilinear_sample(Graph<T>& g, Var source, Var coords);

/// Sampling positions for backward-warping patches. params is 6×n_r×n_c,
/// laid out (a11, a12, t_row, a21, a22, t_col). Output is
/// (n_r·n_c)×2×d_out×d_out positions in the coordinate frame of each d_in×d_in
/// input patch: center_in + A·(di, dj, 1), with (di, dj) the offset of an
/// output pixel from the output-patch center.
template <typename T> Var affine_coords(Graph<T>& g, Var params, int d_in, int d_out);

/// Overlap-averages P = n_r·n_c patches (P×d×d) placed on a regular grid
/// with the given strides into a 1×rows×cols frame.
template <typename T>
Var overlap_average(Graph<T>& g, Var patches, int n_r, int n_c, int stride_r, int stride_c,
                    int rows, int cols);

/// Concatenates along the leading (channel) axis; trailing extents must match.
template <typename T> Var concat(Graph<T>& g, std::span<const Var> parts);

/// Mean over all elements of (a − b)²; returns a 1-element tensor.
template <typename T> Var mse(Graph<T>& g, Var a, Var b);

/// C×H×W -> C.
template <typename T> Var global_avg_pool(Graph<T>& g, Var a);

/// weights out×in, bias out, input in -> out.
template <typename T> Var linear(Graph<T>& g, Var input, Var weights, Var bias);

/// −log softmax(logits)[label]; returns a 1-element tensor.
template <typename T> Var softmax_xent(Graph<T>& g, Var logits, int label);

// ---------------------------------------------------------------------------

/// Multiply-add FLOPs executed by conv2d/linear forwards since the last reset
/// (each multiply-add counted as 2). Used to cross-check analytic estimates.
std::uint64_t conv_flops();
void reset_conv_flops();

/// Per-pixel bilinear weights/offsets, shared with the fused extractor kernel.
template <typename T>
struct BilinearTap {
  int r0, c0, r1, c1;
  T fr, fc;          // fractional parts
  bool clamp_r, clamp_c;  // coordinate saturated (zero derivative)
};

/// Lattice cell and fractional offsets for a bilinear read. Positions on the
/// last row/column use the cell below/left of them, so the derivative there is
/// one-sided rather than zero. Positions strictly outside the image are
/// clamped and carry zero derivative.
template <typename T>
inline BilinearTap<T> bilinear_tap(T row, T col, int h, int w) {
  BilinearTap<T> t{};
  const T max_r = T(h - 1), max_c = T(w - 1);
  t.clamp_r = row < T(0) || row > max_r;
  t.clamp_c = col < T(0) || col > max_c;
  const T r = std::clamp(row, T(0), max_r);
  const T c = std::clamp(col, T(0), max_c);
  if (h == 1) {
    t.r0 = t.r1 = 0;
    t.fr = T(0);
  } else {
    t.r0 = std::min(static_cast<int>(r), h - 2);
    t.r1 = t.r0 + 1;
    t.fr = r - T(t.r0);
  }
  if (w == 1) {
    t.c0 = t.c1 = 0;
    t.fc = T(0);
  } else {
    t.c0 = std::min(static_cast<int>(c), w - 2);
    t.c1 = t.c0 + 1;
    t.fc = c - T(t.c0);
  }
  return t;
}

}  // namespace afp::ad
