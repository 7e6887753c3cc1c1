#include "afp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "afp/parallel.hpp"

namespace afp {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (double(rng() >> 11) * 0x1.0p-53);
}

TensorF stack_frames(std::span<const Frame> frames) {
  const Frame& f0 = frames.front();
  TensorF t({static_cast<int>(frames.size()), f0.rows, f0.cols});
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].rows != f0.rows || frames[i].cols != f0.cols)
      throw UsageError("classifier: frames differ in size");
    const auto lum = frames[i].luminance();
    std::copy(lum.begin(), lum.end(), t.data() + i * lum.size());
  }
  return t;
}

struct ClassifierVars {
  std::vector<ad::Var> w, b;
  ad::Var head_w, head_b;
};

ClassifierVars bind(ad::Graph<float>& g, const ClassifierModel& m, bool trainable) {
  auto leaf = [&](const TensorF& t) { return trainable ? g.parameter(t) : g.constant(t); };
  ClassifierVars v;
  for (const auto& c : m.convs) {
    v.w.push_back(leaf(c.weights));
    v.b.push_back(leaf(c.bias));
  }
  v.head_w = leaf(m.head_weights);
  v.head_b = leaf(m.head_bias);
  return v;
}

ad::Var logits_graph(ad::Graph<float>& g, const ClassifierVars& v, ad::Var input) {
  ad::Var h = input;
  for (std::size_t l = 0; l < v.w.size(); ++l) h = ad::relu(g, ad::conv2d(g, h, v.w[l], v.b[l], 1, 2));
  return ad::linear(g, ad::global_avg_pool(g, h), v.head_w, v.head_b);
}

void check_frames(const ClassifierModel& model, std::span<const Frame> frames) {
  if (static_cast<int>(frames.size()) != model.frames)
    throw UsageError("classifier expects " + std::to_string(model.frames) + " frames, got " +
                     std::to_string(frames.size()));
}

int argmax_lowest(const std::vector<float>& v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace

// ---------------------------------------------------------------------------

ClassifierModel init_classifier(int frames, const ClassifierConfig& cfg, std::uint64_t seed) {
  if (frames < 1) throw ConfigError("classifier: frame count must be positive");
  if (cfg.hidden.empty() || cfg.classes < 2) throw ConfigError("classifier: invalid architecture");
  ClassifierModel m;
  m.frames = frames;
  m.classes = cfg.classes;
  m.seed = seed;
  std::mt19937_64 rng(seed);
  int c_in = frames;
  for (int c_out : cfg.hidden) {
    ConvLayer layer{TensorF({c_out, c_in, 3, 3}), TensorF({c_out})};
    const double bound = std::sqrt(1.0 / (c_in * 9.0));
    for (auto& w : layer.weights.storage()) w = float(uniform(rng, -bound, bound));
    m.convs.push_back(std::move(layer));
    c_in = c_out;
  }
  m.head_weights = TensorF({cfg.classes, c_in});
  m.head_bias = TensorF({cfg.classes});
  const double bound = std::sqrt(1.0 / c_in);
  for (auto& w : m.head_weights.storage()) w = float(uniform(rng, -bound, bound));
  return m;
}

std::vector<float> classifier_logits(const ClassifierModel& model, std::span<const Frame> frames) {
  check_frames(model, frames);
  ad::Graph<float> g;
  auto vars = bind(g, model, false);
  ad::Var out = logits_graph(g, vars, g.constant(stack_frames(frames)));
  return g.value(out).storage();
}

int classify(const ClassifierModel& model, std::span<const Frame> frames) {
  return argmax_lowest(classifier_logits(model, frames));
}

double classify_accuracy(const ClassifierModel& model, const std::vector<LabeledClip>& clips) {
  if (clips.empty()) throw UsageError("classify_accuracy: no sequences");
  int correct = 0;
  for (const auto& c : clips)
    if (classify(model, c.frames) == c.label) ++correct;
  return double(correct) / double(clips.size());
}

std::vector<LabeledClip> clips_from_records(const std::vector<SequenceRecord>& records, int offset,
                                            int frames) {
  std::vector<LabeledClip> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.motion_class) throw UsageError("classifier data: record without motion label");
    if (static_cast<int>(r.frames.size()) < offset + frames)
      throw UsageError("classifier data: record has " + std::to_string(r.frames.size()) +
                       " frames, need " + std::to_string(offset + frames));
    out.push_back({std::vector<Frame>(r.frames.begin() + offset, r.frames.begin() + offset + frames),
                   int(*r.motion_class)});
  }
  return out;
}

ClassifierModel train_classifier(const std::vector<SequenceRecord>& train,
                                 const std::vector<SequenceRecord>& validation, int offset,
                                 int frames, const ClassifierConfig& cfg, int threads) {
  if (train.empty()) throw UsageError("train_classifier: empty training set");
  for (const auto& r : train)
    if (r.provenance.source != "ground-truth")
      throw UsageError("train_classifier: refusing non-ground-truth record (source \"" +
                       r.provenance.source + "\")");
  const auto clips = clips_from_records(train, offset, frames);
  std::vector<TensorF> inputs;
  inputs.reserve(clips.size());
  for (const auto& c : clips) inputs.push_back(stack_frames(c.frames));

  ClassifierModel model = init_classifier(frames, cfg, cfg.seed);
  auto flat_params = [](ClassifierModel& m) {
    std::vector<TensorF*> p;
    for (auto& c : m.convs) {
      p.push_back(&c.weights);
      p.push_back(&c.bias);
    }
    p.push_back(&m.head_weights);
    p.push_back(&m.head_bias);
    return p;
  };
  std::size_t np = 0;
  for (TensorF* t : flat_params(model)) np += t->size();
  std::vector<float> m1(np, 0.f), m2(np, 0.f), gsum(np);
  std::vector<std::size_t> order(clips.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ull);
  double b1t = 1.0, b2t = 1.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const int bs = static_cast<int>(std::min<std::size_t>(cfg.batch_size, order.size() - start));
      std::vector<std::vector<float>> grads(bs, std::vector<float>(np));
      std::vector<double> losses(bs);
      parallel_for(bs, threads, [&](int b) {
        const std::size_t idx = order[start + b];
        ad::Graph<float> g;
        auto vars = bind(g, model, true);
        ad::Var loss = ad::softmax_xent(g, logits_graph(g, vars, g.constant(inputs[idx])), clips[idx].label);
        g.backward(loss);
        losses[b] = g.value(loss)[0];
        std::size_t off = 0;
        auto take = [&](ad::Var v) {
          const auto& gv = g.grad(v);
          std::copy(gv.data(), gv.data() + gv.size(), grads[b].begin() + off);
          off += gv.size();
        };
        for (std::size_t l = 0; l < vars.w.size(); ++l) {
          take(vars.w[l]);
          take(vars.b[l]);
        }
        take(vars.head_w);
        take(vars.head_b);
      });
      std::fill(gsum.begin(), gsum.end(), 0.f);
      for (int b = 0; b < bs; ++b) {
        if (!std::isfinite(losses[b])) throw NumericalError("classifier training diverged");
        for (std::size_t q = 0; q < np; ++q) gsum[q] += grads[b][q];
      }
      b1t *= cfg.beta1;
      b2t *= cfg.beta2;
      std::size_t q = 0;
      for (TensorF* t : flat_params(model))
        for (auto& w : t->storage()) {
          const float gq = gsum[q] / float(bs);
          m1[q] = cfg.beta1 * m1[q] + (1.f - cfg.beta1) * gq;
          m2[q] = cfg.beta2 * m2[q] + (1.f - cfg.beta2) * gq * gq;
          w -= float(cfg.step * (m1[q] / (1.0 - b1t)) / (std::sqrt(m2[q] / (1.0 - b2t)) + cfg.eps));
          ++q;
        }
    }
    model.epochs_seen = epoch + 1;
  }
  if (!validation.empty())
    model.validation_accuracy = classify_accuracy(model, clips_from_records(validation, offset, frames));
  return model;
}

// ---------------------------------------------------------------------------
// Baselines

std::vector<Frame> baseline_copy_last(std::span<const Frame> seed_frames, int predicted) {
  if (seed_frames.empty()) throw UsageError("copy-last: need at least one seed frame");
  return std::vector<Frame>(std::max(predicted, 0), seed_frames.back());
}

AffineField block_match_translation(const Frame& previous, const Frame& current,
                                    const GridSpec& grid, const BlockMatchConfig& cfg) {
  if (!previous.same_shape(current) || previous.rows != grid.rows || previous.cols != grid.cols)
    throw UsageError("block matching: frames must match the grid geometry");
  const auto prev = previous.luminance();
  const auto cur = current.luminance();
  const int R = cfg.radius, d = grid.d_out, W = grid.cols, H = grid.rows;
  // Candidate order: increasing squared magnitude, then row-major.
  std::vector<std::pair<int, int>> cand;
  for (int dr = -R; dr <= R; ++dr)
    for (int dc = -R; dc <= R; ++dc) cand.emplace_back(dr, dc);
  std::stable_sort(cand.begin(), cand.end(), [](auto a, auto b) {
    return a.first * a.first + a.second * a.second < b.first * b.first + b.second * b.second;
  });
  AffineField field = AffineField::identity(grid.n_r, grid.n_c);
  for (int i = 0; i < grid.n_r; ++i)
    for (int j = 0; j < grid.n_c; ++j) {
      const int r0 = i * grid.stride_r, c0 = j * grid.stride_c;
      double best = std::numeric_limits<double>::infinity();
      std::pair<int, int> best_d{0, 0};
      for (auto [dr, dc] : cand) {
        double ssd = 0.0;
        int n = 0;
        for (int a = 0; a < d; ++a) {
          const int pr = r0 + a + dr;
          if (pr < 0 || pr >= H) continue;
          for (int b = 0; b < d; ++b) {
            const int pc = c0 + b + dc;
            if (pc < 0 || pc >= W) continue;
            const double diff = double(cur[std::size_t(r0 + a) * W + c0 + b]) - prev[std::size_t(pr) * W + pc];
            ssd += diff * diff;
            ++n;
          }
        }
        if (n == 0) continue;
        const double score = ssd / n;
        if (score < best) {
          best = score;
          best_d = {dr, dc};
        }
      }
      field.at(AffineField::TRow, i, j) = float(best_d.first);
      field.at(AffineField::TCol, i, j) = float(best_d.second);
    }
  return field;
}

std::vector<Frame> baseline_constant_flow(std::span<const Frame> seed_frames, int predicted,
                                          const GridSpec& grid, const BlockMatchConfig& cfg) {
  if (seed_frames.size() < 2) throw UsageError("constant-flow: need at least two seed frames");
  const auto field = block_match_translation(seed_frames[seed_frames.size() - 2], seed_frames.back(), grid, cfg);
  std::vector<AffineField> fields(std::max(predicted, 0), field);
  return apply_fields(seed_frames.back(), fields, grid);
}

// ---------------------------------------------------------------------------
// Benchmark

std::vector<BenchmarkSequence> prepare_benchmark(const std::vector<SequenceRecord>& records,
                                                 int conditioning, int horizon,
                                                 const GridSpec& grid, const ExtractorConfig& extractor,
                                                 int threads) {
  const int need = conditioning + horizon;
  std::vector<BenchmarkSequence> out(records.size());
  parallel_for(static_cast<int>(records.size()), threads, [&](int i) {
    const auto& r = records[i];
    if (!r.motion_class) throw UsageError("benchmark: record without motion label");
    if (static_cast<int>(r.frames.size()) < need)
      throw UsageError("benchmark: record " + std::to_string(i) + " has too few frames");
    BenchmarkSequence s;
    s.frames.assign(r.frames.begin(), r.frames.begin() + need);
    s.fields = extract_sequence(s.frames, grid, extractor, 1);
    s.label = *r.motion_class;
    out[i] = std::move(s);
  });
  return out;
}

std::optional<double> BenchmarkReport::accuracy(const std::string& method, int frames) const {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.method == method && r.frames == frames) v.push_back(r.accuracy);
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

std::string BenchmarkReport::to_csv() const {
  std::ostringstream os;
  os << "method,T,accuracy,n_sequences,seed\n";
  for (const auto& r : rows) {
    char acc[32];
    std::snprintf(acc, sizeof acc, "%.6f", r.accuracy);
    os << r.method << ',' << r.frames << ',' << acc << ',' << r.sequences << ',' << r.seed << '\n';
  }
  return os.str();
}

std::string BenchmarkReport::to_table() const {
  std::vector<std::string> methods;
  std::vector<int> ts;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (std::find(ts.begin(), ts.end(), r.frames) == ts.end()) ts.push_back(r.frames);
  }
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-24s", "Method");
  os << buf;
  for (int t : ts) {
    std::snprintf(buf, sizeof buf, " | %8s", (std::to_string(t) + " frames").c_str());
    os << buf;
  }
  os << '\n' << std::string(24 + 11 * ts.size(), '=') << '\n';
  for (const auto& m : methods) {
    std::snprintf(buf, sizeof buf, "%-24s", m.c_str());
    os << buf;
    for (int t : ts) {
      const auto a = accuracy(m, t);
      if (a) std::snprintf(buf, sizeof buf, " | %8.2f", 100.0 * *a);
      else std::snprintf(buf, sizeof buf, " | %8s", "-");
      os << buf;
    }
    os << '\n';
  }
  if (!complete) os << "(incomplete report)\n";
  for (const auto& n : notes) os << "note: " << n << '\n';
  return os.str();
}

BenchmarkReport run_benchmark(const std::vector<BenchmarkSequence>& sequences,
                              const std::map<int, ClassifierModel>& classifiers,
                              const BenchmarkModels& models, const GridSpec& grid,
                              int conditioning, std::uint64_t seed, int threads) {
  if (sequences.empty()) throw UsageError("benchmark: no sequences");
  if (classifiers.empty()) throw UsageError("benchmark: no classifiers");
  int horizon = 0;
  for (const auto& [t, c] : classifiers) {
    if (c.frames != t) throw UsageError("benchmark: classifier keyed T=" + std::to_string(t) +
                                        " takes " + std::to_string(c.frames) + " frames");
    horizon = std::max(horizon, t);
  }
  for (const auto* m : {models.greedy, models.unrolled})
    if (m && m->config.inputs != conditioning - 1)
      throw UsageError("benchmark: model conditions on " + std::to_string(m->config.inputs + 1) +
                       " frames, benchmark uses " + std::to_string(conditioning));

  BenchmarkReport report;
  std::vector<std::string> methods;
  if (models.baselines)
    methods = {kMethodGroundTruth, kMethodGroundTruthAffine, kMethodCopyLast, kMethodConstantFlow};
  if (models.greedy) methods.push_back(kMethodGreedy);
  else { report.complete = false; report.notes.push_back("greedy model not provided"); }
  if (models.unrolled) methods.push_back(kMethodUnrolled);
  else { report.complete = false; report.notes.push_back("unrolled model not provided"); }

  const int n = static_cast<int>(sequences.size());
  const int n_methods = static_cast<int>(methods.size());
  // correct[(seq * methods + method) * |T| + t_index]
  std::vector<int> ts;
  for (const auto& kv : classifiers) ts.push_back(kv.first);
  std::vector<char> correct(std::size_t(n) * n_methods * ts.size(), 0);

  parallel_for(n, threads, [&](int s) {
    const auto& seq = sequences[s];
    if (static_cast<int>(seq.frames.size()) < conditioning + horizon ||
        static_cast<int>(seq.fields.size()) < conditioning + horizon - 1)
      throw UsageError("benchmark: sequence " + std::to_string(s) + " is too short");
    std::span<const Frame> seed_frames(seq.frames.data(), conditioning);
    const Frame& last = seq.frames[conditioning - 1];
    for (int mi = 0; mi < n_methods; ++mi) {
      const std::string& m = methods[mi];
      std::vector<Frame> gen;
      if (m == kMethodGroundTruth) {
        gen.assign(seq.frames.begin() + conditioning, seq.frames.begin() + conditioning + horizon);
      } else if (m == kMethodGroundTruthAffine) {
        gen = apply_fields(last, std::span<const AffineField>(seq.fields.data() + conditioning - 1, horizon), grid);
      } else if (m == kMethodCopyLast) {
        gen = baseline_copy_last(seed_frames, horizon);
      } else if (m == kMethodConstantFlow) {
        gen = baseline_constant_flow(seed_frames, horizon, grid);
      } else {
        const PredictorModel& model = m == kMethodGreedy ? *models.greedy : *models.unrolled;
        gen = rollout_from_fields(model, last, std::span<const AffineField>(seq.fields.data(), conditioning - 1),
                                  horizon).frames;
      }
      for (std::size_t ti = 0; ti < ts.size(); ++ti) {
        const auto& clf = classifiers.at(ts[ti]);
        const int pred = classify(clf, std::span<const Frame>(gen.data(), ts[ti]));
        correct[(std::size_t(s) * n_methods + mi) * ts.size() + ti] = pred == seq.label;
      }
    }
  });

  for (int mi = 0; mi < n_methods; ++mi)
    for (std::size_t ti = 0; ti < ts.size(); ++ti) {
      int c = 0;
      for (int s = 0; s < n; ++s) c += correct[(std::size_t(s) * n_methods + mi) * ts.size() + ti];
      report.rows.push_back({methods[mi], ts[ti], double(c) / n, n, seed});
    }
  return report;
}

}  // namespace afp
