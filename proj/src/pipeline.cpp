#include "afp/pipeline.hpp"

#include <algorithm>

namespace afp {

namespace {

enum Stream : std::uint64_t { ClassifierTrain = 1, ClassifierVal = 2, PredictorTrain = 3, Test = 4 };

std::vector<TrainingSample> first_windows(const std::vector<BenchmarkSequence>& seqs, int inputs, int steps) {
  std::vector<TrainingSample> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) {
    if (static_cast<int>(s.fields.size()) < inputs + steps) continue;
    TrainingSample t;
    t.inputs.assign(s.fields.begin(), s.fields.begin() + inputs);
    t.targets.assign(s.fields.begin() + inputs, s.fields.begin() + inputs + steps);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed * 0x9e3779b97f4a7c15ull + stream * 0xd1b54a32d192ed03ull;
  x = (x ^ (x >> 31)) * 0xbf58476d1ce4e5b9ull;
  return x ^ (x >> 29);
}

GeneratorParams generator_params(const RunConfig& cfg, const std::vector<Bitmap>* digits) {
  if (cfg.frame_rows != cfg.frame_cols)
    throw ConfigError("the sequence generator renders square frames; frame_rows " + std::to_string(cfg.frame_rows) +
                      " != frame_cols " + std::to_string(cfg.frame_cols));
  GeneratorParams gp = cfg.data;
  gp.frame_size = cfg.frame_rows;
  gp.digits = digits;
  gp.validate();
  return gp;
}

DeskBenchmark run_desk_benchmark(const RunConfig& cfg, const Progress& progress) {
  cfg.validate();
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  const int conditioning = cfg.frames_in;
  const int horizon = *std::max_element(cfg.eval_frames.begin(), cfg.eval_frames.end());
  std::vector<Bitmap> digits;
  if (!cfg.digits.empty()) digits = load_idx_images(cfg.digits);
  const GeneratorParams gp = generator_params(cfg, cfg.digits.empty() ? nullptr : &digits);
  if (gp.length < conditioning + horizon)
    throw ConfigError("length " + std::to_string(gp.length) + " is shorter than frames_in + max(eval_frames) = " +
                      std::to_string(conditioning + horizon));
  const GridSpec grid = cfg.grid();
  const int th = cfg.threads;

  DeskBenchmark out;
  out.seeds = cfg.model_seeds;

  // Classifiers see ground-truth frames only.
  std::map<int, ClassifierModel> classifiers;
  {
    const auto train = generate_moving_shapes(stream_seed(cfg.seed, ClassifierTrain), cfg.bench_classifier_train, gp, th);
    const auto val = generate_moving_shapes(stream_seed(cfg.seed, ClassifierVal), cfg.bench_classifier_val, gp, th);
    for (int t : cfg.eval_frames) {
      ClassifierConfig cc = cfg.classifier;
      cc.seed = stream_seed(cfg.seed, 100 + t);
      classifiers[t] = train_classifier(train, val, conditioning, t, cc, th);
      out.classifier_validation[t] = classifiers[t].validation_accuracy;
      say("classifier T=" + std::to_string(t) + " validation accuracy " +
          std::to_string(classifiers[t].validation_accuracy));
    }
  }

  std::vector<BenchmarkSequence> test;
  {
    const auto records = generate_moving_shapes(stream_seed(cfg.seed, Test), cfg.bench_test, gp, th);
    test = prepare_benchmark(records, conditioning, horizon, grid, cfg.extractor, th);
    say("extracted fields for " + std::to_string(test.size()) + " test sequences");
  }

  std::vector<std::vector<AffineField>> train_fields;
  {
    const auto records = generate_moving_shapes(stream_seed(cfg.seed, PredictorTrain), cfg.bench_predictor_train, gp, th);
    for (const auto& r : records) train_fields.push_back(extract_sequence(r.frames, grid, cfg.extractor, th));
    say("extracted fields for " + std::to_string(records.size()) + " predictor training sequences");
  }

  const int inputs = conditioning - 1;
  const int unroll = cfg.greedy ? 1 : cfg.unroll;
  const auto unrolled_set = make_samples(train_fields, inputs, unroll);
  const auto greedy_set = make_samples(train_fields, inputs, 1);
  const auto held_out = first_windows(test, inputs, unroll);

  for (std::size_t si = 0; si < cfg.model_seeds.size(); ++si) {
    PredictorConfig pc = cfg.predictor();
    pc.seed = cfg.model_seeds[si];
    pc.unroll = 1;
    const PredictorModel greedy = train_predictor(greedy_set, pc, th).model;
    pc.unroll = unroll;
    const PredictorModel unrolled = train_predictor(unrolled_set, pc, th).model;
    if (!held_out.empty()) {
      out.greedy_final_step_mse.push_back(per_step_mse(greedy, held_out, unroll).back());
      out.unrolled_final_step_mse.push_back(per_step_mse(unrolled, held_out, unroll).back());
    }
    BenchmarkModels bm{&greedy, &unrolled, si == 0};
    auto rep = run_benchmark(test, classifiers, bm, grid, conditioning, pc.seed, th);
    for (auto& row : rep.rows) {
      if (bm.baselines && row.method != kMethodGreedy && row.method != kMethodUnrolled) row.seed = cfg.seed;
      out.report.rows.push_back(row);
    }
    say("model seed " + std::to_string(pc.seed) + " scored");
  }
  out.report.notes.push_back("model rows are medians over " + std::to_string(cfg.model_seeds.size()) + " seed(s)");
  out.report.notes.push_back("classifier input: generated frames only, " + std::to_string(conditioning) +
                             " conditioning frames");
  return out;
}

}  // namespace afp
