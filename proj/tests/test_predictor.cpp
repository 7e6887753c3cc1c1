#include <cmath>
#include <random>

#include "afp/predictor.hpp"
#include "doctest.h"

using namespace afp;

namespace {

AffineField random_field(const GridSpec& g, std::mt19937_64& rng, double spread = 0.2) {
  std::uniform_real_distribution<float> u(-float(spread), float(spread));
  AffineField f = AffineField::identity(g.n_r, g.n_c);
  for (auto& p : f.params) p += u(rng);
  return f;
}

std::vector<AffineField> random_fields(const GridSpec& g, int n, std::mt19937_64& rng) {
  std::vector<AffineField> v;
  for (int i = 0; i < n; ++i) v.push_back(random_field(g, rng));
  return v;
}

PredictorModel randomized_model(const PredictorConfig& cfg, std::uint64_t seed) {
  PredictorModel m = init_model(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<float> u(-0.05f, 0.05f);
  for (auto& w : m.layers.back().weights.storage()) w = u(rng);
  return m;
}

// Independent parameter count: Σ C_out·C_in·k² + C_out.
std::size_t params_oracle(const std::vector<int>& ch, int k) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < ch.size(); ++l) n += std::size_t(ch[l + 1]) * (ch[l] * k * k + 1);
  return n;
}

// Dataset in which every field is one uniform translation v.
std::vector<TrainingSample> constant_velocity_samples(const GridSpec& g, int count, int steps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-2.f, 2.f);
  std::vector<TrainingSample> out;
  for (int i = 0; i < count; ++i) {
    const AffineField f = AffineField::translation(g.n_r, g.n_c, u(rng), u(rng));
    out.push_back({std::vector<AffineField>(3, f), std::vector<AffineField>(steps, f)});
  }
  return out;
}

}  // namespace

TEST_SUITE("predictor") {

TEST_CASE("MNIST preset layer shapes") {
  const PredictorModel m = init_model(PredictorConfig::mnist(), 1);
  REQUIRE(m.layers.size() == 3);
  CHECK(m.layers[0].weights.shape() == std::vector<int>{32, 18, 3, 3});
  CHECK(m.layers[1].weights.shape() == std::vector<int>{32, 32, 3, 3});
  CHECK(m.layers[2].weights.shape() == std::vector<int>{6, 32, 3, 3});
  CHECK(m.layers[0].bias.shape() == std::vector<int>{32});
  CHECK(m.layers[2].bias.shape() == std::vector<int>{6});
}

TEST_CASE("init is deterministic per seed and bounded by fan-in") {
  const auto cfg = PredictorConfig::mnist();
  const PredictorModel a = init_model(cfg, 5), b = init_model(cfg, 5), c = init_model(cfg, 6);
  CHECK(a.layers[0].weights == b.layers[0].weights);
  CHECK_FALSE(a.layers[0].weights == c.layers[0].weights);
  const float bound = float(std::sqrt(1.0 / (18 * 9)));
  for (float w : a.layers[0].weights.values()) CHECK(std::abs(w) <= bound);
  for (float w : a.layers[2].weights.values()) CHECK(w == 0.f);
  for (float w : a.layers[2].bias.values()) CHECK(w == 0.f);
}

TEST_CASE("config validation") {
  PredictorConfig c;
  c.channels = {12, 32, 6};  // needs 18 for 3 inputs
  CHECK_THROWS_AS(init_model(c, 1), ConfigError);
  c.channels = {18, 32, 5};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.channels = {18, 6};
  c.kernel = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("count_params") {
  PredictorConfig one;
  one.channels = {6, 6};
  one.inputs = 1;
  CHECK(count_params(one) == 330);
  CHECK(count_params(PredictorConfig::mnist()) == params_oracle({18, 32, 32, 6}, 3));
  CHECK(count_params(PredictorConfig::mnist()) == 16198);
  const auto ucf = PredictorConfig::ucf();
  CHECK(ucf.layers() == 7);
  CHECK(count_params(ucf) == params_oracle({18, 128, 128, 128, 64, 32, 16, 6}, 3));
  CHECK(count_params(ucf) == 413782);
  CHECK(count_params(ucf) < 500000);
}

TEST_CASE("estimate_flops") {
  PredictorConfig none;
  none.channels = {6};
  none.inputs = 1;
  CHECK(estimate_flops(none, make_grid(64, 64, 16, 8, 4, 4)).conv == 0);

  const auto ucf = PredictorConfig::ucf();
  REQUIRE(ucf.grid.n_r == 59);
  REQUIRE(ucf.grid.n_c == 79);
  std::uint64_t oracle = 0;
  const std::vector<int> ch{18, 128, 128, 128, 64, 32, 16, 6};
  for (std::size_t l = 0; l + 1 < ch.size(); ++l) oracle += 2ull * 59 * 79 * ch[l + 1] * ch[l] * 9;
  const auto f = estimate_flops(ucf, ucf.grid);
  CHECK(f.conv == oracle);
  CHECK(double(f.conv) > 1e9);
  CHECK(double(f.conv) < 4e9);
  CHECK(f.warp > 0);
}

TEST_CASE("estimate_flops agrees with an instrumented forward pass") {
  for (const auto& cfg : {PredictorConfig::mnist(), PredictorConfig::ucf()}) {
    const PredictorModel m = init_model(cfg, 1);
    const std::vector<AffineField> in(3, AffineField::identity(cfg.grid.n_r, cfg.grid.n_c));
    ad::reset_conv_flops();
    forward_step(m, in);
    CHECK(ad::conv_flops() == estimate_flops(cfg, cfg.grid).conv);
  }
}

TEST_CASE("encode/decode roundtrip and scaling") {
  const GridSpec g = make_grid(64, 64, 16, 8, 4, 4);
  const AffineField f = AffineField::translation(g.n_r, g.n_c, 2.f, -4.f);
  const TensorF e = encode_field(f, g);
  CHECK(e.shape() == std::vector<int>{6, 15, 15});
  CHECK(e.at(AffineField::TRow, 3, 3) == 0.5f);
  CHECK(e.at(AffineField::TCol, 3, 3) == -1.f);
  CHECK(e.at(AffineField::A11, 3, 3) == 0.f);
  CHECK(decode_field(e, g) == f);
}

TEST_CASE("fresh model predicts identity for any input") {
  const auto cfg = PredictorConfig::mnist();
  const PredictorModel m = init_model(cfg, 3);
  std::mt19937_64 rng(1);
  const auto out = unroll_forward(m, random_fields(cfg.grid, 3, rng), 4);
  REQUIRE(out.size() == 4);
  for (const auto& f : out) CHECK(f == AffineField::identity(15, 15));
}

TEST_CASE("forward_step shapes and grid checks") {
  const auto cfg = PredictorConfig::mnist();
  const PredictorModel m = randomized_model(cfg, 2);
  std::mt19937_64 rng(2);
  const auto out = forward_step(m, random_fields(cfg.grid, 3, rng));
  CHECK(out.n_r == 15);
  CHECK(out.n_c == 15);
  CHECK(out.all_finite());
  std::vector<AffineField> wrong(3, AffineField::identity(14, 15));
  CHECK_THROWS_AS(forward_step(m, wrong), UsageError);
  CHECK_THROWS_AS(forward_step(m, random_fields(cfg.grid, 2, rng)), UsageError);
}

TEST_CASE("unroll recirculates predictions") {
  const auto cfg = PredictorConfig::mnist();
  const PredictorModel m = randomized_model(cfg, 4);
  std::mt19937_64 rng(4);
  const auto in = random_fields(cfg.grid, 3, rng);
  const auto one = unroll_forward(m, in, 1);
  CHECK(one.front() == forward_step(m, in));
  const auto two = unroll_forward(m, in, 2);
  CHECK(two[0] == one[0]);
  // Recirculation stays in the encoded domain, so compare up to float round-off.
  const std::vector<AffineField> slots{in[1], in[2], two[0]};
  const AffineField ref = forward_step(m, slots);
  double diff = 0;
  for (std::size_t i = 0; i < ref.params.size(); ++i) diff = std::max(diff, double(std::abs(ref.params[i] - two[1].params[i])));
  CHECK(diff < 1e-5);
  CHECK_FALSE(two[1] == two[0]);
}

TEST_CASE("unrolled steps share one parameter set") {
  const auto cfg = PredictorConfig::mnist();
  PredictorModel m = randomized_model(cfg, 7);
  std::mt19937_64 rng(7);
  const auto in = random_fields(cfg.grid, 3, rng);
  const auto before = unroll_forward(m, in, 3);
  m.layers[1].bias.storage()[0] += 0.5f;
  const auto after = unroll_forward(m, in, 3);
  for (int s = 0; s < 3; ++s) CHECK_FALSE(before[s] == after[s]);
}

TEST_CASE("make_samples slides a window") {
  const GridSpec g = make_grid(64, 64, 16, 8, 4, 4);
  std::vector<AffineField> seq;
  for (int i = 0; i < 8; ++i) seq.push_back(AffineField::translation(g.n_r, g.n_c, float(i), 0.f));
  const auto s = make_samples({seq}, 3, 2);
  REQUIRE(s.size() == 4);
  CHECK(s[1].inputs[0] == seq[1]);
  CHECK(s[1].targets[1] == seq[5]);
}

TEST_CASE("training overfits a single sample") {
  PredictorConfig cfg = PredictorConfig::mnist();
  cfg.unroll = 1;
  cfg.epochs = 500;
  std::mt19937_64 rng(8);
  const std::vector<TrainingSample> one{{random_fields(cfg.grid, 3, rng), random_fields(cfg.grid, 1, rng)}};
  const auto res = train_predictor(one, cfg);
  CHECK(res.loss_history.size() == 500);
  CHECK(per_step_mse(res.model, one, 1)[0] < 1e-4);
}

TEST_CASE("training makes progress and is reproducible") {
  PredictorConfig cfg = PredictorConfig::mnist();
  cfg.unroll = 2;
  cfg.epochs = 20;
  const auto data = constant_velocity_samples(cfg.grid, 48, 2, 3);
  const auto a = train_predictor(data, cfg);
  CHECK(a.loss_history.back() < a.loss_history.front());
  const auto b = train_predictor(data, cfg, 3);
  CHECK(a.loss_history == b.loss_history);
  CHECK(a.model.layers[0].weights == b.model.layers[0].weights);
}

TEST_CASE("M = 1 training ignores extra targets") {
  PredictorConfig cfg = PredictorConfig::mnist();
  cfg.unroll = 1;
  cfg.epochs = 3;
  const auto long_targets = constant_velocity_samples(cfg.grid, 20, 4, 5);
  auto one_target = long_targets;
  for (auto& s : one_target) s.targets.resize(1);
  CHECK(train_predictor(long_targets, cfg).loss_history == train_predictor(one_target, cfg).loss_history);
}

TEST_CASE("constant-velocity oracle") {
  PredictorConfig cfg = PredictorConfig::mnist();
  cfg.unroll = 1;
  cfg.epochs = 60;
  const auto data = constant_velocity_samples(cfg.grid, 160, 1, 9);
  const auto res = train_predictor(data, cfg);
  for (auto v : {std::pair{1.5f, -0.5f}, std::pair{-1.f, 1.25f}, std::pair{0.f, 0.f}}) {
    const std::vector<AffineField> in(3, AffineField::translation(15, 15, v.first, v.second));
    const AffineField out = forward_step(res.model, in);
    // The outer ring sees zero padding and is fit less tightly.
    double sum = 0, interior = 0;
    for (int i = 0; i < 15; ++i)
      for (int j = 0; j < 15; ++j) {
        const double e = std::hypot(out.at(AffineField::TRow, i, j) - v.first, out.at(AffineField::TCol, i, j) - v.second);
        sum += e;
        if (i > 0 && j > 0 && i < 14 && j < 14) interior = std::max(interior, e);
      }
    CHECK(sum / 225 < 0.1);
    CHECK(interior < 0.15);
  }
}

TEST_CASE("training errors") {
  PredictorConfig cfg = PredictorConfig::mnist();
  CHECK_THROWS_AS(train_predictor({}, cfg), UsageError);
  cfg.unroll = 1;
  auto data = constant_velocity_samples(cfg.grid, 2, 1, 1);
  data[0].inputs[0].params[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(train_predictor(data, cfg), NumericalError);
}

}  // TEST_SUITE
