#include <cmath>

#include "afp/eval.hpp"
#include "afp/frame_gen.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace afp;
using namespace afp::testing;

namespace {

const GridSpec kGrid = make_grid(64, 64, 16, 8, 4, 4);

double max_abs(const Frame& a, const Frame& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, double(std::abs(a.data[i] - b.data[i])));
  return m;
}

// Predictor trained on uniform-translation fields (constant velocity).
PredictorModel constant_velocity_model() {
  PredictorConfig cfg = PredictorConfig::mnist();
  cfg.unroll = 1;
  cfg.epochs = 40;
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<float> u(-2.f, 2.f);
  std::vector<TrainingSample> data;
  for (int i = 0; i < 128; ++i) {
    const AffineField f = AffineField::translation(15, 15, u(rng), u(rng));
    data.push_back({std::vector<AffineField>(3, f), {f}});
  }
  return train_predictor(data, cfg).model;
}

}  // namespace

TEST_SUITE("frame_gen") {

TEST_CASE("identity field reproduces the frame") {
  const Frame x = shifted_frame(periodic_texture(64, 2.0, 1), 64, 0, 0);
  CHECK(max_abs(apply_field(x, AffineField::identity(15, 15), kGrid), x) < 1e-6);
}

TEST_CASE("color frames get the same field per channel") {
  const auto t0 = periodic_texture(64, 2.0, 2), t1 = periodic_texture(64, 2.0, 3);
  Frame x(64, 64, 3);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      x.at(r, c, 0) = t0[r * 64 + c];
      x.at(r, c, 1) = t1[r * 64 + c];
      x.at(r, c, 2) = 0.5f;
    }
  const AffineField f = AffineField::translation(15, 15, 1.f, -2.f);
  const Frame y = apply_field(x, f, kGrid);
  REQUIRE(y.channels == 3);
  const Frame y0 = apply_field(shifted_frame(t0, 64, 0, 0), f, kGrid);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      CHECK(y.at(r, c, 0) == y0.at(r, c));
      CHECK(y.at(r, c, 2) == doctest::Approx(0.5f));
    }
}

TEST_CASE("uniform translation shifts the frame") {
  const auto tex = periodic_texture(64, 3.0, 4);
  const Frame x = shifted_frame(tex, 64, 0, 0);
  const Frame y = apply_field(x, AffineField::translation(15, 15, 0.f, 4.f), kGrid);
  CHECK(interior_mse(y, shifted_frame(tex, 64, 0, 4), 8) < 1e-4);
}

TEST_CASE("two 2 px steps approximate one 4 px step") {
  const auto tex = periodic_texture(64, 3.0, 5);
  const Frame x = shifted_frame(tex, 64, 0, 0);
  const AffineField two = AffineField::translation(15, 15, 0.f, 2.f);
  const auto chained = apply_fields(x, std::vector<AffineField>{two, two}, kGrid);
  const Frame once = apply_field(x, AffineField::translation(15, 15, 0.f, 4.f), kGrid);
  CHECK(interior_mse(chained.back(), once, 8) < 1e-3);
}

TEST_CASE("outputs stay in [0,1]") {
  const Frame x = shifted_frame(periodic_texture(64, 1.0, 6), 64, 0, 0);
  AffineField f = AffineField::identity(15, 15);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<float> u(-1.5f, 1.5f);
  for (auto& p : f.params) p += u(rng);
  for (float v : apply_field(x, f, kGrid).data) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
}

TEST_CASE("apply_field checks geometry") {
  CHECK_THROWS_AS(apply_field(Frame(60, 64), AffineField::identity(15, 15), kGrid), UsageError);
  CHECK_THROWS_AS(apply_field(Frame(64, 64), AffineField::identity(14, 15), kGrid), UsageError);
}

TEST_CASE("untrained rollout equals copy-last") {
  const auto tex = periodic_texture(64, 3.0, 7);
  std::vector<Frame> seed;
  for (int t = 0; t < 4; ++t) seed.push_back(shifted_frame(tex, 64, t, 0));
  const PredictorModel m = init_model(PredictorConfig::mnist(), 1);
  const auto res = rollout(m, seed, RolloutConfig{4, 6}, ExtractorConfig{});
  REQUIRE(res.frames.size() == 6);
  const auto copies = baseline_copy_last(seed, 6);
  for (int i = 0; i < 6; ++i) CHECK(max_abs(res.frames[i], copies[i]) < 1e-6);
}

TEST_CASE("rollout decomposes into extraction plus unroll_forward") {
  const auto tex = periodic_texture(64, 3.0, 8);
  std::vector<Frame> seed;
  for (int t = 0; t < 4; ++t) seed.push_back(shifted_frame(tex, 64, 0, t));
  PredictorModel m = init_model(PredictorConfig::mnist(), 2);
  for (auto& w : m.layers.back().weights.storage()) w = 0.01f;
  const auto res = rollout(m, seed, RolloutConfig{4, 3}, ExtractorConfig{});
  const auto fields = extract_sequence(seed, kGrid, ExtractorConfig{});
  const auto direct = unroll_forward(m, fields, 3);
  REQUIRE(res.fields.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(res.fields[i] == direct[i]);
  const auto again = rollout(m, seed, RolloutConfig{4, 3}, ExtractorConfig{});
  for (int i = 0; i < 3; ++i) CHECK(again.frames[i] == res.frames[i]);
}

TEST_CASE("rollout validates its inputs") {
  const PredictorModel m = init_model(PredictorConfig::mnist(), 1);
  const std::vector<Frame> three(3, Frame(64, 64));
  CHECK_THROWS_AS(rollout(m, three, RolloutConfig{4, 2}, ExtractorConfig{}), UsageError);
  CHECK_THROWS_AS(rollout(m, three, RolloutConfig{3, 2}, ExtractorConfig{}), UsageError);
  CHECK_THROWS_AS(RolloutConfig({1, 2}).validate(), ConfigError);
  CHECK_THROWS_AS(RolloutConfig({4, 0}).validate(), ConfigError);
}

TEST_CASE("trained constant-velocity rollout beats copy-last") {
  const PredictorModel m = constant_velocity_model();
  const auto tex = periodic_texture(64, 3.0, 9);
  std::vector<Frame> truth;
  for (int t = 0; t < 8; ++t) truth.push_back(shifted_frame(tex, 64, t, -t));  // 1 px/frame diagonal
  const std::vector<Frame> seed(truth.begin(), truth.begin() + 4);
  const auto res = rollout(m, seed, RolloutConfig{4, 4}, ExtractorConfig{});
  for (int i = 0; i < 4; ++i) {
    CAPTURE(i);
    CHECK(interior_mse(res.frames[i], truth[4 + i], 8) < interior_mse(seed.back(), truth[4 + i], 8));
  }
}

}  // TEST_SUITE
