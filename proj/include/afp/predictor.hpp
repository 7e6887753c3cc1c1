#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "afp/autodiff.hpp"
#include "afp/grid.hpp"

namespace afp {

struct PredictorConfig {
  /// Feature maps per layer boundary, input first. First = 6·inputs, last = 6.
  std::vector<int> channels{18, 32, 32, 6};
  int kernel = 3;
  int inputs = 3;  // number of conditioning fields (K−1)
  int unroll = 4;  // M used for training
  GridSpec grid = make_grid(64, 64, 16, 8, 4, 4);

  // Training.
  float step = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  int batch_size = 16;
  int epochs = 20;
  std::uint64_t seed = 1;

  int layers() const { return static_cast<int>(channels.size()) - 1; }
  void validate() const;

  static PredictorConfig mnist();
  /// 240×320 frames; the full 18→…→6 channel list (7 conv layers).
  static PredictorConfig ucf();
};

struct ConvLayer {
  TensorF weights;  // C_out×C_in×k×k
  TensorF bias;     // C_out
};

struct PredictorModel {
  PredictorConfig config;
  std::vector<ConvLayer> layers;
  int epochs_seen = 0;
  double final_loss = 0.0;
  std::uint64_t seed = 0;
};

/// Hidden layers U(±sqrt(1/(C_in·k²))), zero biases; the last layer is all
/// zeros so a fresh model predicts the identity field.
PredictorModel init_model(const PredictorConfig& config, std::uint64_t seed);

std::size_t count_params(const PredictorConfig& config);

struct FlopEstimate {
  std::uint64_t conv = 0;  // 2·Σ n_r·n_c·C_out·C_in·k²
  std::uint64_t warp = 0;  // patch warping + overlap averaging for one frame
  std::uint64_t total() const { return conv + warp; }
};

FlopEstimate estimate_flops(const PredictorConfig& config, const GridSpec& grid);

// Network I/O encoding: linear part minus identity, translations divided by
// the stride. Encoded tensors are 6×n_r×n_c.
TensorF encode_field(const AffineField& field, const GridSpec& grid);
AffineField decode_field(const TensorF& encoded, const GridSpec& grid);

/// Graph handles for one set of predictor parameters.
template <typename T>
struct ModelVars {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
};

/// Adds the model's parameters to a graph, converted to T.
template <typename T>
ModelVars<T> bind_parameters(ad::Graph<T>& g, const PredictorModel& model, bool trainable);

/// One predictor application on encoded fields (oldest first); returns the
/// encoded next field.
template <typename T>
ad::Var predictor_step(ad::Graph<T>& g, const ModelVars<T>& vars, std::span<const ad::Var> encoded);

/// M chained applications sharing `vars`. Step m consumes the most recent
/// `inputs` fields, mixing given and previously predicted ones.
template <typename T>
std::vector<ad::Var> unroll_graph(ad::Graph<T>& g, const ModelVars<T>& vars,
                                  std::span<const ad::Var> encoded_inputs, int steps);

/// Predicts the next absolute field from the K−1 most recent fields.
AffineField forward_step(const PredictorModel& model, std::span<const AffineField> inputs);

/// Predicts M fields by recirculating predictions through the same model.
std::vector<AffineField> unroll_forward(const PredictorModel& model,
                                        std::span<const AffineField> inputs, int steps);

struct TrainingSample {
  std::vector<AffineField> inputs;   // K−1 fields
  std::vector<AffineField> targets;  // M fields
};

/// Slides a window of (inputs + steps) consecutive fields over each sequence.
std::vector<TrainingSample> make_samples(const std::vector<std::vector<AffineField>>& sequences,
                                         int inputs, int steps);

struct TrainResult {
  PredictorModel model;
  std::vector<double> loss_history;  // per-epoch mean loss
};

/// Minimizes the mean over the unrolled steps of encoded-space MSE with
/// adaptive-moment updates. Sample order is shuffled per epoch from
/// config.seed; per-sample gradients are summed in index order, so results do
/// not depend on `threads`.
TrainResult train_predictor(const std::vector<TrainingSample>& dataset, const PredictorConfig& config,
                            int threads = 1);

/// Encoded-space MSE at each unrolled step, averaged over samples. Samples
/// must carry at least `steps` targets.
std::vector<double> per_step_mse(const PredictorModel& model,
                                 const std::vector<TrainingSample>& samples, int steps);

}  // namespace afp
