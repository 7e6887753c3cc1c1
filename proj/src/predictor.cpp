#include "afp/predictor.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "afp/parallel.hpp"

namespace afp {

namespace {

// Uniform in [lo, hi) from the top 53 bits; independent of the standard
// library's distribution implementations.
double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (double(rng() >> 11) * 0x1.0p-53);
}

}  // namespace

void PredictorConfig::validate() const {
  if (channels.size() < 2) throw ConfigError("predictor: need at least one layer (two channel counts)");
  for (int c : channels)
    if (c <= 0) throw ConfigError("predictor: channel counts must be positive");
  if (inputs < 1) throw ConfigError("predictor: need at least one input field");
  if (channels.front() != 6 * inputs)
    throw ConfigError("predictor: first channel count " + std::to_string(channels.front()) +
                      " must equal 6·inputs = " + std::to_string(6 * inputs));
  if (channels.back() != 6)
    throw ConfigError("predictor: last channel count must be 6, got " + std::to_string(channels.back()));
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("predictor: kernel size must be odd");
  if (unroll < 1) throw ConfigError("predictor: unroll steps must be ≥ 1");
  if (batch_size < 1 || epochs < 0 || !(step > 0))
    throw ConfigError("predictor: invalid training settings");
}

PredictorConfig PredictorConfig::mnist() { return PredictorConfig{}; }

PredictorConfig PredictorConfig::ucf() {
  PredictorConfig c;
  c.channels = {18, 128, 128, 128, 64, 32, 16, 6};
  c.grid = make_grid(240, 320, 16, 8, 4, 4);
  c.unroll = 4;
  return c;
}

PredictorModel init_model(const PredictorConfig& config, std::uint64_t seed) {
  config.validate();
  PredictorModel m;
  m.config = config;
  m.seed = seed;
  std::mt19937_64 rng(seed);
  const int k = config.kernel;
  for (int l = 0; l < config.layers(); ++l) {
    const int c_in = config.channels[l], c_out = config.channels[l + 1];
    ConvLayer layer{TensorF({c_out, c_in, k, k}), TensorF({c_out})};
    if (l + 1 < config.layers()) {
      const double bound = std::sqrt(1.0 / (double(c_in) * k * k));
      for (auto& w : layer.weights.storage()) w = float(uniform(rng, -bound, bound));
    }
    m.layers.push_back(std::move(layer));
  }
  return m;
}

std::size_t count_params(const PredictorConfig& config) {
  std::size_t n = 0;
  const std::size_t kk = std::size_t(config.kernel) * config.kernel;
  for (int l = 0; l + 1 < static_cast<int>(config.channels.size()); ++l)
    n += std::size_t(config.channels[l + 1]) * config.channels[l] * kk + config.channels[l + 1];
  return n;
}

FlopEstimate estimate_flops(const PredictorConfig& config, const GridSpec& grid) {
  FlopEstimate f;
  const std::uint64_t cells = std::uint64_t(grid.n_r) * grid.n_c;
  const std::uint64_t kk = std::uint64_t(config.kernel) * config.kernel;
  for (int l = 0; l + 1 < static_cast<int>(config.channels.size()); ++l)
    f.conv += 2 * cells * std::uint64_t(config.channels[l + 1]) * config.channels[l] * kk;
  // Per warped pixel: 2 sampling positions (3 multiply-adds each = 12),
  // bilinear blend (2 fractions + 3 lerps of 3 = 11), one accumulation add.
  // Plus one normalizing divide per frame pixel.
  const std::uint64_t warped = cells * std::uint64_t(grid.d_out) * grid.d_out;
  f.warp = warped * (12 + 11 + 1) + std::uint64_t(grid.rows) * grid.cols;
  return f;
}

TensorF encode_field(const AffineField& field, const GridSpec& grid) {
  if (field.n_r != grid.n_r || field.n_c != grid.n_c)
    throw UsageError("encode_field: field grid " + std::to_string(field.n_r) + "x" +
                     std::to_string(field.n_c) + " does not match model grid " +
                     std::to_string(grid.n_r) + "x" + std::to_string(grid.n_c));
  TensorF t({6, field.n_r, field.n_c}, field.params);
  const std::size_t n = field.cells();
  for (std::size_t k = 0; k < n; ++k) {
    t[AffineField::A11 * n + k] -= 1.f;
    t[AffineField::A22 * n + k] -= 1.f;
    t[AffineField::TRow * n + k] /= float(grid.stride_r);
    t[AffineField::TCol * n + k] /= float(grid.stride_c);
  }
  return t;
}

AffineField decode_field(const TensorF& encoded, const GridSpec& grid) {
  AffineField f = AffineField::from_tensor(encoded);
  const std::size_t n = f.cells();
  for (std::size_t k = 0; k < n; ++k) {
    f.params[AffineField::A11 * n + k] += 1.f;
    f.params[AffineField::A22 * n + k] += 1.f;
    f.params[AffineField::TRow * n + k] *= float(grid.stride_r);
    f.params[AffineField::TCol * n + k] *= float(grid.stride_c);
  }
  return f;
}

// ---------------------------------------------------------------------------

template <typename T>
ModelVars<T> bind_parameters(ad::Graph<T>& g, const PredictorModel& model, bool trainable) {
  ModelVars<T> v;
  for (const auto& layer : model.layers) {
    auto w = layer.weights.template cast<T>();
    auto b = layer.bias.template cast<T>();
    v.weights.push_back(trainable ? g.parameter(std::move(w)) : g.constant(std::move(w)));
    v.biases.push_back(trainable ? g.parameter(std::move(b)) : g.constant(std::move(b)));
  }
  return v;
}

template <typename T>
ad::Var predictor_step(ad::Graph<T>& g, const ModelVars<T>& vars, std::span<const ad::Var> encoded) {
  ad::Var h = encoded.size() == 1 ? encoded[0] : ad::concat(g, encoded);
  const std::size_t layers = vars.weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    const int k = g.value(vars.weights[l]).dim(2);
    h = ad::conv2d(g, h, vars.weights[l], vars.biases[l], (k - 1) / 2, 1);
    if (l + 1 < layers) h = ad::relu(g, h);
  }
  return h;
}

template <typename T>
std::vector<ad::Var> unroll_graph(ad::Graph<T>& g, const ModelVars<T>& vars,
                                  std::span<const ad::Var> encoded_inputs, int steps) {
  if (steps < 1) throw UsageError("unroll: steps must be ≥ 1");
  std::vector<ad::Var> window(encoded_inputs.begin(), encoded_inputs.end());
  std::vector<ad::Var> out;
  for (int m = 0; m < steps; ++m) {
    ad::Var next = predictor_step(g, vars, std::span<const ad::Var>(window));
    out.push_back(next);
    window.erase(window.begin());
    window.push_back(next);
  }
  return out;
}

std::vector<AffineField> unroll_forward(const PredictorModel& model,
                                        std::span<const AffineField> inputs, int steps) {
  const auto& cfg = model.config;
  if (static_cast<int>(inputs.size()) != cfg.inputs)
    throw UsageError("predictor expects " + std::to_string(cfg.inputs) + " input fields, got " +
                     std::to_string(inputs.size()));
  ad::Graph<float> g;
  auto vars = bind_parameters(g, model, false);
  std::vector<ad::Var> enc;
  for (const auto& f : inputs) enc.push_back(g.constant(encode_field(f, cfg.grid)));
  auto outs = unroll_graph(g, vars, std::span<const ad::Var>(enc), steps);
  std::vector<AffineField> fields;
  for (ad::Var v : outs) fields.push_back(decode_field(g.value(v), cfg.grid));
  return fields;
}

AffineField forward_step(const PredictorModel& model, std::span<const AffineField> inputs) {
  return unroll_forward(model, inputs, 1).front();
}

std::vector<TrainingSample> make_samples(const std::vector<std::vector<AffineField>>& sequences,
                                         int inputs, int steps) {
  std::vector<TrainingSample> out;
  const std::size_t span = std::size_t(inputs + steps);
  for (const auto& seq : sequences) {
    for (std::size_t s = 0; s + span <= seq.size(); ++s) {
      TrainingSample sample;
      sample.inputs.assign(seq.begin() + s, seq.begin() + s + inputs);
      sample.targets.assign(seq.begin() + s + inputs, seq.begin() + s + span);
      out.push_back(std::move(sample));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct EncodedSample {
  std::vector<TensorF> inputs;
  std::vector<TensorF> targets;
};

// Loss and flattened parameter gradient for one sample.
double sample_gradient(const PredictorModel& model, const EncodedSample& s, int steps,
                       std::vector<float>& grad) {
  ad::Graph<float> g;
  auto vars = bind_parameters(g, model, true);
  std::vector<ad::Var> enc;
  for (const auto& t : s.inputs) enc.push_back(g.constant(t));
  auto preds = unroll_graph(g, vars, std::span<const ad::Var>(enc), steps);
  ad::Var loss{};
  for (int m = 0; m < steps; ++m) {
    ad::Var term = ad::mse(g, preds[m], g.constant(s.targets[m]));
    loss = m == 0 ? term : ad::add(g, loss, term);
  }
  if (steps > 1) loss = ad::scale(g, loss, 1.f / float(steps));
  g.backward(loss);
  std::size_t off = 0;
  for (std::size_t l = 0; l < vars.weights.size(); ++l) {
    for (ad::Var v : {vars.weights[l], vars.biases[l]}) {
      const auto& gv = g.grad(v);
      std::copy(gv.data(), gv.data() + gv.size(), grad.begin() + off);
      off += gv.size();
    }
  }
  return g.value(loss)[0];
}

}  // namespace

TrainResult train_predictor(const std::vector<TrainingSample>& dataset, const PredictorConfig& config,
                            int threads) {
  config.validate();
  if (dataset.empty()) throw UsageError("train_predictor: empty dataset");
  const int steps = config.unroll;
  std::vector<EncodedSample> data;
  data.reserve(dataset.size());
  for (const auto& s : dataset) {
    if (static_cast<int>(s.inputs.size()) != config.inputs ||
        static_cast<int>(s.targets.size()) < steps)
      throw UsageError("train_predictor: each sample needs " + std::to_string(config.inputs) +
                       " inputs and " + std::to_string(steps) + " targets");
    EncodedSample e;
    for (const auto& f : s.inputs) e.inputs.push_back(encode_field(f, config.grid));
    for (int m = 0; m < steps; ++m) e.targets.push_back(encode_field(s.targets[m], config.grid));
    data.push_back(std::move(e));
  }

  TrainResult res;
  res.model = init_model(config, config.seed);
  PredictorModel& model = res.model;
  const std::size_t np = count_params(config);
  std::vector<float> m1(np, 0.f), m2(np, 0.f), grad_sum(np);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  double b1t = 1.0, b2t = 1.0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const int bs = static_cast<int>(std::min<std::size_t>(config.batch_size, order.size() - start));
      std::vector<std::vector<float>> grads(bs, std::vector<float>(np));
      std::vector<double> losses(bs);
      parallel_for(bs, threads, [&](int b) {
        losses[b] = sample_gradient(model, data[order[start + b]], steps, grads[b]);
      });
      std::fill(grad_sum.begin(), grad_sum.end(), 0.f);
      for (int b = 0; b < bs; ++b) {
        if (!std::isfinite(losses[b]))
          throw NumericalError("predictor training diverged (non-finite loss) at epoch " +
                               std::to_string(epoch + 1) + "; reduce the step size");
        epoch_loss += losses[b];
        for (std::size_t q = 0; q < np; ++q) grad_sum[q] += grads[b][q];
      }
      b1t *= config.beta1;
      b2t *= config.beta2;
      std::size_t q = 0;
      for (auto& layer : model.layers) {
        for (TensorF* t : {&layer.weights, &layer.bias}) {
          for (auto& w : t->storage()) {
            const float gq = grad_sum[q] / float(bs);
            m1[q] = config.beta1 * m1[q] + (1.f - config.beta1) * gq;
            m2[q] = config.beta2 * m2[q] + (1.f - config.beta2) * gq * gq;
            const double mh = m1[q] / (1.0 - b1t);
            const double vh = m2[q] / (1.0 - b2t);
            w -= float(config.step * mh / (std::sqrt(vh) + config.eps));
            ++q;
          }
        }
      }
    }
    epoch_loss /= double(order.size());
    if (!std::isfinite(epoch_loss))
      throw NumericalError("predictor training produced a non-finite loss");
    res.loss_history.push_back(epoch_loss);
    model.epochs_seen = epoch + 1;
    model.final_loss = epoch_loss;
  }
  return res;
}

std::vector<double> per_step_mse(const PredictorModel& model,
                                 const std::vector<TrainingSample>& samples, int steps) {
  if (samples.empty()) throw UsageError("per_step_mse: no samples");
  std::vector<double> acc(steps, 0.0);
  const auto& grid = model.config.grid;
  for (const auto& s : samples) {
    if (static_cast<int>(s.targets.size()) < steps)
      throw UsageError("per_step_mse: sample has too few targets");
    auto preds = unroll_forward(model, s.inputs, steps);
    for (int m = 0; m < steps; ++m) {
      const auto p = encode_field(preds[m], grid);
      const auto t = encode_field(s.targets[m], grid);
      double e = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) e += double(p[i] - t[i]) * (p[i] - t[i]);
      acc[m] += e / double(p.size());
    }
  }
  for (auto& a : acc) a /= double(samples.size());
  return acc;
}

template ModelVars<float> bind_parameters<float>(ad::Graph<float>&, const PredictorModel&, bool);
template ModelVars<double> bind_parameters<double>(ad::Graph<double>&, const PredictorModel&, bool);
template ad::Var predictor_step<float>(ad::Graph<float>&, const ModelVars<float>&, std::span<const ad::Var>);
template ad::Var predictor_step<double>(ad::Graph<double>&, const ModelVars<double>&, std::span<const ad::Var>);
template std::vector<ad::Var> unroll_graph<float>(ad::Graph<float>&, const ModelVars<float>&,
                                                  std::span<const ad::Var>, int);
template std::vector<ad::Var> unroll_graph<double>(ad::Graph<double>&, const ModelVars<double>&,
                                                   std::span<const ad::Var>, int);

}  // namespace afp
