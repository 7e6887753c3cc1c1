#include "afp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "afp/predictor.hpp"

namespace afp {

namespace {

using G = ad::Graph<double>;

// Piecewise structure of the graph at the current point: relu input signs and
// bilinear cell indices. A perturbation that changes it straddles a kink.
std::vector<long> kink_signature(const G& g) {
  std::vector<long> sig;
  for (std::size_t id = 0; id < g.size(); ++id) {
    const auto& n = g.node(int(id));
    if (n.tag == ad::OpTag::Relu) {
      for (double v : g.node(n.parents[0]).value.values()) sig.push_back(v > 0.0);
    } else if (n.tag == ad::OpTag::BilinearSample) {
      for (double v : g.node(n.parents[1]).value.values()) sig.push_back(long(std::floor(v)));
    }
  }
  return sig;
}

struct Eval {
  double loss;
  std::vector<long> sig;
};

Eval evaluate(const std::vector<TensorD>& leaves, const LossBuilder& build) {
  G g;
  std::vector<ad::Var> vars;
  for (const auto& t : leaves) vars.push_back(g.constant(t));
  ad::Var loss = build(g, vars);
  return {g.value(loss)[0], kink_signature(g)};
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform(double lo, double hi) { return lo + (hi - lo) * (double(gen_() >> 11) * 0x1.0p-53); }
  TensorD tensor(std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    TensorD t(std::move(shape));
    for (auto& v : t.storage()) v = uniform(lo, hi);
    return t;
  }
  // Values with |v| ≥ margin, so relu kinks are not within reach of h.
  TensorD away_from_zero(std::vector<int> shape, double margin) {
    TensorD t(std::move(shape));
    for (auto& v : t.storage()) {
      const double m = uniform(margin, 1.0);
      v = (gen_() & 1) ? m : -m;
    }
    return t;
  }
  std::mt19937_64& gen() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

ad::Var mse_to(G& g, ad::Var out, const TensorD& target) { return ad::mse(g, out, g.constant(target)); }

}  // namespace

GradCheckResult check_gradient(const std::string& name, const std::vector<TensorD>& leaves,
                               const LossBuilder& build, const GradCheckConfig& cfg) {
  GradCheckResult res;
  res.name = name;
  G g;
  std::vector<ad::Var> vars;
  for (const auto& t : leaves) vars.push_back(g.parameter(t));
  ad::Var loss = build(g, vars);
  g.backward(loss);
  const auto base_sig = kink_signature(g);

  std::mt19937_64 pick(cfg.seed * 0x9e3779b97f4a7c15ull + leaves.size());
  std::vector<TensorD> work = leaves;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const TensorD analytic = g.has_grad(vars[li]) ? g.grad(vars[li]) : TensorD(leaves[li].shape());
    std::vector<std::size_t> idx(leaves[li].size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[pick() % i]);
    int done = 0;
    for (std::size_t k : idx) {
      if (done >= cfg.samples_per_input) break;
      const double x0 = work[li].data()[k];
      work[li].data()[k] = x0 + cfg.h;
      const Eval plus = evaluate(work, build);
      work[li].data()[k] = x0 - cfg.h;
      const Eval minus = evaluate(work, build);
      work[li].data()[k] = x0;
      if (plus.sig != base_sig || minus.sig != base_sig) {
        ++res.skipped;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * cfg.h);
      const double a = analytic.data()[k];
      const double denom = std::max(std::abs(a), std::abs(numeric));
      const double err = denom < 1e-10 ? std::abs(a - numeric) : std::abs(a - numeric) / denom;
      res.max_rel_error = std::max(res.max_rel_error, err);
      ++res.checked;
      ++done;
    }
  }
  res.passed = res.checked > 0 && res.max_rel_error < cfg.tolerance;
  return res;
}

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckConfig& cfg) {
  Rng rng(cfg.seed);
  std::vector<GradCheckResult> out;
  auto run = [&](const std::string& name, std::vector<TensorD> leaves, const LossBuilder& b) {
    out.push_back(check_gradient(name, leaves, b, cfg));
  };
  const std::vector<int> s3{3, 4, 5};

  {
    auto t = rng.tensor(s3);
    run("add", {rng.tensor(s3), rng.tensor(s3)},
        [t](G& g, const auto& v) { return mse_to(g, ad::add(g, v[0], v[1]), t); });
    run("sub", {rng.tensor(s3), rng.tensor(s3)},
        [t](G& g, const auto& v) { return mse_to(g, ad::sub(g, v[0], v[1]), t); });
    run("mul", {rng.tensor(s3), rng.tensor(s3)},
        [t](G& g, const auto& v) { return mse_to(g, ad::mul(g, v[0], v[1]), t); });
    run("scale", {rng.tensor(s3)},
        [t](G& g, const auto& v) { return mse_to(g, ad::scale(g, v[0], 1.7), t); });
    std::vector<double> gain{0.5, -1.25, 2.0}, offset{0.1, 0.0, -0.3};
    run("channel_affine", {rng.tensor(s3)}, [=](G& g, const auto& v) {
      return mse_to(g, ad::channel_affine<double>(g, v[0], gain, offset), t);
    });
    run("relu", {rng.away_from_zero(s3, 0.05)},
        [t](G& g, const auto& v) { return mse_to(g, ad::relu(g, v[0]), t); });
    run("mse", {rng.tensor(s3), rng.tensor(s3)},
        [](G& g, const auto& v) { return ad::mse(g, v[0], v[1]); });
  }
  {
    auto t = rng.tensor({4, 7, 6});
    run("conv2d pad1", {rng.tensor({3, 7, 6}), rng.tensor({4, 3, 3, 3}), rng.tensor({4})},
        [t](G& g, const auto& v) { return mse_to(g, ad::conv2d(g, v[0], v[1], v[2], 1), t); });
    auto t2 = rng.tensor({3, 4, 4});
    run("conv2d stride2", {rng.tensor({2, 9, 9}), rng.tensor({3, 2, 3, 3}), rng.tensor({3})},
        [t2](G& g, const auto& v) { return mse_to(g, ad::conv2d(g, v[0], v[1], v[2], 0, 2), t2); });
  }
  {
    // Coordinates kept ≥ 0.05 px from integers; a few fall outside the source.
    TensorD coords({2, 2, 4, 4});
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const double base = std::floor(rng.uniform(-1.0, 6.0));
      coords.data()[i] = base + rng.uniform(0.05, 0.95);
    }
    auto t = rng.tensor({2, 4, 4});
    run("bilinear_sample", {rng.tensor({2, 6, 7}), coords},
        [t](G& g, const auto& v) { return mse_to(g, ad::bilinear_sample(g, v[0], v[1]), t); });
  }
  {
    auto t = rng.tensor({4, 2, 4, 4}, 0.0, 8.0);
    run("affine_coords", {rng.tensor({6, 2, 2})},
        [t](G& g, const auto& v) { return mse_to(g, ad::affine_coords(g, v[0], 8, 4), t); });
    auto t2 = rng.tensor({1, 6, 6});
    run("overlap_average", {rng.tensor({4, 4, 4})},
        [t2](G& g, const auto& v) { return mse_to(g, ad::overlap_average(g, v[0], 2, 2, 2, 2, 6, 6), t2); });
  }
  {
    auto t = rng.tensor({6, 3, 3});
    run("concat", {rng.tensor({1, 3, 3}), rng.tensor({2, 3, 3}), rng.tensor({3, 3, 3})},
        [t](G& g, const auto& v) { return mse_to(g, ad::concat<double>(g, v), t); });
    auto t2 = rng.tensor({4});
    run("global_avg_pool", {rng.tensor({4, 3, 5})},
        [t2](G& g, const auto& v) { return mse_to(g, ad::global_avg_pool(g, v[0]), t2); });
    auto t3 = rng.tensor({3});
    run("linear", {rng.tensor({5}), rng.tensor({3, 5}), rng.tensor({3})},
        [t3](G& g, const auto& v) { return mse_to(g, ad::linear(g, v[0], v[1], v[2]), t3); });
    run("softmax_xent", {rng.tensor({8}, -3.0, 3.0)},
        [](G& g, const auto& v) { return ad::softmax_xent(g, v[0], 5); });
  }
  {
    // Patch warp: identity-ish affine params with jitter; both the params
    // and the source patches are differentiated.
    TensorD params({6, 2, 2});
    const double ident[6] = {1, 0, 0, 0, 1, 0};
    for (int q = 0; q < 6; ++q)
      for (int c = 0; c < 4; ++c) params.data()[q * 4 + c] = ident[q] + rng.uniform(-0.08, 0.08) + (q % 3 == 2 ? rng.uniform(-0.7, 0.7) : 0.0);
    auto t = rng.tensor({1, 8, 8});
    run("patch warp chain", {params, rng.tensor({4, 8, 8})}, [t](G& g, const auto& v) {
      ad::Var coords = ad::affine_coords(g, v[0], 8, 4);
      ad::Var warped = ad::bilinear_sample(g, v[1], coords);
      return mse_to(g, ad::overlap_average(g, warped, 2, 2, 4, 4, 8, 8), t);
    });
  }
  {
    // Two-step unrolled predictor, loss averaged over both steps.
    const std::vector<int> ch{18, 8, 8, 6};
    std::vector<TensorD> leaves;
    for (std::size_t l = 0; l + 1 < ch.size(); ++l) {
      const double b = std::sqrt(1.0 / (ch[l] * 9.0));
      leaves.push_back(rng.tensor({ch[l + 1], ch[l], 3, 3}, -b, b));
      leaves.push_back(rng.tensor({ch[l + 1]}, -0.1, 0.1));
    }
    std::vector<TensorD> inputs, targets;
    for (int i = 0; i < 3; ++i) inputs.push_back(rng.tensor({6, 5, 5}, -0.5, 0.5));
    for (int i = 0; i < 2; ++i) targets.push_back(rng.tensor({6, 5, 5}, -0.5, 0.5));
    run("unrolled chain (2 steps)", leaves, [=](G& g, const auto& v) {
      ModelVars<double> mv;
      for (std::size_t i = 0; i < v.size(); i += 2) {
        mv.weights.push_back(v[i]);
        mv.biases.push_back(v[i + 1]);
      }
      std::vector<ad::Var> enc;
      for (const auto& t : inputs) enc.push_back(g.constant(t));
      const auto preds = unroll_graph<double>(g, mv, enc, 2);
      ad::Var sum = ad::add(g, mse_to(g, preds[0], targets[0]), mse_to(g, preds[1], targets[1]));
      return ad::scale(g, sum, 0.5);
    });
  }
  {
    run("classifier chain", {rng.tensor({4, 9, 9}), rng.tensor({5, 4, 3, 3}, -0.3, 0.3), rng.tensor({5}, -0.1, 0.1),
                             rng.tensor({8, 5}), rng.tensor({8})},
        [](G& g, const auto& v) {
          ad::Var h = ad::relu(g, ad::conv2d(g, v[0], v[1], v[2], 1, 2));
          return ad::softmax_xent(g, ad::linear(g, ad::global_avg_pool(g, h), v[3], v[4]), 2);
        });
  }
  return out;
}

}  // namespace afp
