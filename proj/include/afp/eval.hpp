#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "afp/data_io.hpp"
#include "afp/extractor.hpp"
#include "afp/frame_gen.hpp"
#include "afp/predictor.hpp"

namespace afp {

// --- classifier ------------------------------------------------------------

struct ClassifierConfig {
  /// Feature maps after each 3×3 stride-2 block; the input channel count is
  /// the number of stacked frames T and is prepended automatically.
  std::vector<int> hidden{32, 64, 64};
  int classes = 8;
  float step = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  int batch_size = 16;
  int epochs = 10;
  std::uint64_t seed = 1;
};

/// Frames stacked as input channels → conv blocks → global average pool →
/// linear head.
struct ClassifierModel {
  int frames = 0;  // T
  int classes = 8;
  std::vector<ConvLayer> convs;
  TensorF head_weights;  // classes×C
  TensorF head_bias;     // classes
  double validation_accuracy = 0.0;
  int epochs_seen = 0;
  std::uint64_t seed = 0;
};

ClassifierModel init_classifier(int frames, const ClassifierConfig& cfg, std::uint64_t seed);

/// AFPK classifier checkpoint (defined alongside the other binary formats).
void write_classifier(const std::string& path, const ClassifierModel& model);
ClassifierModel read_classifier(const std::string& path);

struct LabeledClip {
  std::vector<Frame> frames;
  int label = 0;
};

std::vector<float> classifier_logits(const ClassifierModel& model, std::span<const Frame> frames);
/// Argmax of the logits; ties go to the lowest class index.
int classify(const ClassifierModel& model, std::span<const Frame> frames);
double classify_accuracy(const ClassifierModel& model, const std::vector<LabeledClip>& clips);

/// The T frames following the first `offset` frames of each labeled record.
std::vector<LabeledClip> clips_from_records(const std::vector<SequenceRecord>& records, int offset,
                                            int frames);

/// Trains on ground-truth clips only (records whose provenance is not
/// "ground-truth" are rejected). Validation accuracy is stored on the model.
ClassifierModel train_classifier(const std::vector<SequenceRecord>& train,
                                 const std::vector<SequenceRecord>& validation, int offset,
                                 int frames, const ClassifierConfig& cfg, int threads = 1);

// --- baselines -------------------------------------------------------------

std::vector<Frame> baseline_copy_last(std::span<const Frame> seed_frames, int predicted);

struct BlockMatchConfig {
  int radius = 6;
};

/// Translation-only field from exhaustive block matching of each grid cell's
/// output block of `current` against displaced blocks of `previous`
/// (integer displacements in [−radius, radius]², minimum mean squared
/// difference; ties go to the smaller displacement, then row-major order).
AffineField block_match_translation(const Frame& previous, const Frame& current,
                                    const GridSpec& grid, const BlockMatchConfig& cfg = {});

/// Estimates translation between the last two seed frames and applies it
/// repeatedly.
std::vector<Frame> baseline_constant_flow(std::span<const Frame> seed_frames, int predicted,
                                          const GridSpec& grid, const BlockMatchConfig& cfg = {});

// --- benchmark -------------------------------------------------------------

inline constexpr const char* kMethodGroundTruth = "ground-truth";
inline constexpr const char* kMethodGroundTruthAffine = "ground-truth-affine";
inline constexpr const char* kMethodCopyLast = "copy-last";
inline constexpr const char* kMethodConstantFlow = "constant-flow";
inline constexpr const char* kMethodGreedy = "model-greedy";
inline constexpr const char* kMethodUnrolled = "model-unrolled";

/// A held-out sequence with its extracted fields cached: fields[i] maps
/// frame i to frame i+1, for i < conditioning + horizon − 1.
struct BenchmarkSequence {
  std::vector<Frame> frames;
  std::vector<AffineField> fields;
  int label = 0;
};

std::vector<BenchmarkSequence> prepare_benchmark(const std::vector<SequenceRecord>& records,
                                                 int conditioning, int horizon,
                                                 const GridSpec& grid, const ExtractorConfig& extractor,
                                                 int threads = 1);

struct BenchmarkRow {
  std::string method;
  int frames = 0;  // T
  double accuracy = 0.0;
  int sequences = 0;
  std::uint64_t seed = 0;
};

struct BenchmarkReport {
  std::vector<BenchmarkRow> rows;
  bool complete = true;
  std::vector<std::string> notes;

  /// Median over all rows for (method, T), e.g. several model seeds.
  std::optional<double> accuracy(const std::string& method, int frames) const;
  /// method,T,accuracy,n_sequences,seed
  std::string to_csv() const;
  /// Methods as rows, one column per T; cells are medians over seeds.
  std::string to_table() const;
};

struct BenchmarkModels {
  const PredictorModel* greedy = nullptr;
  const PredictorModel* unrolled = nullptr;
  /// Off when only model rows are wanted (e.g. extra model seeds).
  bool baselines = true;
};

/// Every method is conditioned on the same first `conditioning` frames and
/// generates max(T) frames; accuracy for each T uses the first T of them and
/// the classifier trained for that T. Missing models are skipped and the
/// report marked incomplete.
BenchmarkReport run_benchmark(const std::vector<BenchmarkSequence>& sequences,
                              const std::map<int, ClassifierModel>& classifiers,
                              const BenchmarkModels& models, const GridSpec& grid,
                              int conditioning, std::uint64_t seed, int threads = 1);

}  // namespace afp
