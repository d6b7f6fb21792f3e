#include <doctest.h>

#include <cmath>

#include "cotasr/adapter.hpp"
#include "cotasr/errors.hpp"
#include "cotasr/gradcheck.hpp"

using namespace cotasr;
using namespace cotasr::adapter;

namespace {

// Adapter whose outputs come only from the second-layer biases, so the
// non-blank logits, residual and gate are set directly.
CtcAdapterParams biased_adapter(std::size_t d_enc, std::size_t vocab, std::size_t d_model,
                                const std::vector<double>& logits,
                                const std::vector<double>& res = {}) {
  auto p = CtcAdapterParams::zeros(d_enc, 4, vocab, d_model);
  for (std::size_t v = 0; v < logits.size(); ++v) p.out_proj.second.bias(0, v) = logits[v];
  for (std::size_t d = 0; d < res.size(); ++d) p.res_proj.second.bias(0, d) = res[d];
  return p;
}

double max_abs(const Matrix& m) {
  double worst = 0.0;
  for (double v : m.values()) worst = std::max(worst, std::abs(v));
  return worst;
}

}  // namespace

TEST_CASE("one-hot weights select an embedding row exactly") {
  Rng rng(1);
  const std::size_t V = 5, D = 6;
  const Matrix emb = random_normal(V, D, 1.0, rng);
  for (std::size_t k = 0; k < V; ++k) {
    std::vector<double> logits(V + 1, 0.0);
    logits[k] = 1000.0;
    const auto params = biased_adapter(3, V, D, logits);
    CtcAdapterCache cache;
    const auto out = ctc_adapter_forward(random_normal(2, 3, 1.0, rng), emb, params, {}, &cache);
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t d = 0; d < D; ++d) CHECK(std::abs(out.prompt(t, d) - emb(k, d)) <= 1e-12);
  }
}

TEST_CASE("weights below tau are zeroed, not renormalized") {
  const Matrix emb(3, 2, 1.0);
  const auto params = biased_adapter(
      2, 3, 2, {std::log(0.90), std::log(0.06), std::log(0.04), 0.0});
  CtcAdapterCache cache;
  ctc_adapter_forward(Matrix(1, 2), emb, params, {}, &cache);
  CHECK(std::abs(cache.weights(0, 0) - 0.90) <= 1e-12);
  CHECK(std::abs(cache.weights(0, 1) - 0.06) <= 1e-12);
  CHECK(cache.weights(0, 2) == 0.0);
  CHECK(cache.mask(0, 2) == 0.0);

  CtcAdapterCache renorm;
  ctc_adapter_forward(Matrix(1, 2), emb, params, {0.05, true}, &renorm);
  CHECK(std::abs(renorm.weights(0, 0) - 0.90 / 0.96) <= 1e-12);
  CHECK(std::abs(renorm.weights(0, 1) - 0.06 / 0.96) <= 1e-12);
  CHECK(renorm.weights(0, 2) == 0.0);
}

TEST_CASE("zero gate logit halves the residual") {
  // 30 equal logits give p = 1/30 < tau everywhere, so u = 0.
  const std::size_t V = 30;
  std::vector<double> res{0.5, -2.0, 3.0, 0.0};
  const auto params = biased_adapter(2, V, 3, std::vector<double>(V + 1, 0.0), res);
  Rng rng(2);
  const auto out = ctc_adapter_forward(random_normal(3, 2, 1.0, rng),
                                       random_normal(V, 3, 1.0, rng), params, {});
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t d = 0; d < 3; ++d) CHECK(out.prompt(t, d) == 0.5 * res[d]);
}

TEST_CASE("blank logit is the last output column") {
  std::vector<double> logits{0.0, 0.0, std::log(3.0)};
  const auto params = biased_adapter(2, 2, 2, logits);
  const auto out = ctc_adapter_forward(Matrix(1, 2), Matrix(2, 2), params, {});
  CHECK(out.blank_logits[0] == std::log(3.0));
  CHECK(std::abs(out.posteriors.blank[0] - 0.75) <= 1e-15);
  const auto scaled = out.posteriors.scaled_nonblank(0);
  CHECK(std::abs(scaled[0] - 0.125) <= 1e-15);
}

TEST_CASE("adapter properties on random instances") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t L = 1 + rng.below(200), V = 2 + rng.below(6), D = 2 + rng.below(5);
    const std::size_t d_enc = 1 + rng.below(4);
    const auto params = CtcAdapterParams::random(d_enc, 5, V, D, rng);
    const Matrix frames = random_normal(L, d_enc, 2.0, rng);
    const Matrix emb = random_normal(V, D, 1.0, rng);
    CtcAdapterCache cache;
    const auto out = ctc_adapter_forward(frames, emb, params, {}, &cache);
    CHECK(out.prompt.rows() == L);
    CHECK(out.prompt.all_finite());
    out.posteriors.validate();
    for (double g : cache.gate) {
      CHECK(g > 0.0);
      CHECK(g < 1.0);
    }
    // Raising tau never adds nonzero weights.
    std::size_t previous = L * V + 1;
    for (double tau : {0.0, 0.01, 0.05, 0.1, 0.3, 0.6, 0.99}) {
      CtcAdapterCache c;
      ctc_adapter_forward(frames, emb, params, {tau, false}, &c);
      std::size_t nonzero = 0;
      for (double w : c.weights.values()) nonzero += w != 0.0;
      CHECK(nonzero <= previous);
      previous = nonzero;
    }
    const Matrix linear = linear_adapter_forward(
        frames, LinearAdapterParams::random(d_enc, 5, D, rng));
    CHECK(linear.rows() == L);
  }
}

TEST_CASE("tau zero without residual stays in the convex hull of embeddings") {
  Rng rng(4);
  const std::size_t V = 4, D = 3;
  auto params = CtcAdapterParams::random(2, 5, V, D, rng);
  params.res_proj = FeedForward::zeros(2, 5, D + 1);
  const Matrix emb = random_normal(V, D, 1.0, rng);
  CtcAdapterCache cache;
  const auto out = ctc_adapter_forward(random_normal(20, 2, 1.0, rng), emb, params, {0.0, false},
                                       &cache);
  for (std::size_t t = 0; t < 20; ++t) {
    double sum = 0.0;
    for (double w : cache.weights.row(t)) {
      CHECK(w > 0.0);
      sum += w;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    for (std::size_t d = 0; d < D; ++d) {
      double lo = emb(0, d), hi = emb(0, d), direct = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        lo = std::min(lo, emb(v, d));
        hi = std::max(hi, emb(v, d));
        direct += cache.weights(t, v) * emb(v, d);
      }
      // Gate is 0.5 on a zero residual, so A = u.
      CHECK(out.prompt(t, d) >= lo - 1e-12);
      CHECK(out.prompt(t, d) <= hi + 1e-12);
      CHECK(std::abs(out.prompt(t, d) - direct) <= 1e-12);
    }
  }
}

TEST_CASE("tau zero gradients match the closed form") {
  Rng rng(5);
  const std::size_t L = 3, V = 3, D = 4;
  const auto params = CtcAdapterParams::random(2, 4, V, D, rng);
  const Matrix emb = random_normal(V, D, 1.0, rng);
  const Matrix frames = random_normal(L, 2, 1.0, rng);
  const Matrix dA = random_normal(L, D, 1.0, rng);
  CtcAdapterCache cache;
  ctc_adapter_forward(frames, emb, params, {0.0, false}, &cache);
  auto grads = CtcAdapterParams::zeros(2, 4, V, D);
  Matrix g_emb(V, D);
  ctc_adapter_backward(cache, emb, params, dA, {}, Matrix(), grads, g_emb);

  // Loss sum(dA * A). With p the plain softmax:
  //   dL/dW[v]   = sum_t p_t[v] dA_t
  //   dL/dz_t[v] = p_t[v] (<W_v, dA_t> - sum_u p_t[u] <W_u, dA_t>)
  //   dL/dgate_t = g (1 - g) <dA_t, r_t>,  dL/dr_t = g dA_t
  Matrix want_emb(V, D);
  std::vector<double> want_out_bias(V + 1, 0.0), want_res_bias(D + 1, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    std::vector<double> proj(V, 0.0);
    double mean = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      for (std::size_t d = 0; d < D; ++d) {
        want_emb(v, d) += cache.nonblank(t, v) * dA(t, d);
        proj[v] += emb(v, d) * dA(t, d);
      }
      mean += cache.nonblank(t, v) * proj[v];
    }
    for (std::size_t v = 0; v < V; ++v) want_out_bias[v] += cache.nonblank(t, v) * (proj[v] - mean);
    const double g = cache.gate[t];
    double dot = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      dot += dA(t, d) * cache.residual(t, d);
      want_res_bias[d] += g * dA(t, d);
    }
    want_res_bias[D] += g * (1.0 - g) * dot;
  }
  for (std::size_t i = 0; i < want_emb.size(); ++i)
    CHECK(std::abs(g_emb.data()[i] - want_emb.data()[i]) <= 1e-10);
  for (std::size_t v = 0; v <= V; ++v)
    CHECK(std::abs(grads.out_proj.second.bias(0, v) - want_out_bias[v]) <= 1e-10);
  for (std::size_t d = 0; d <= D; ++d)
    CHECK(std::abs(grads.res_proj.second.bias(0, d) - want_res_bias[d]) <= 1e-10);
}

TEST_CASE("a fully masked frame sends no gradient into the embedding") {
  const std::size_t V = 30, D = 3;
  const auto params = biased_adapter(2, V, D, std::vector<double>(V + 1, 0.0), {1.0, 1.0, 1.0});
  Rng rng(6);
  const Matrix emb = random_normal(V, D, 1.0, rng);
  CtcAdapterCache cache;
  ctc_adapter_forward(random_normal(2, 2, 1.0, rng), emb, params, {}, &cache);
  auto grads = CtcAdapterParams::zeros(2, 4, V, D);
  Matrix g_emb(V, D);
  ctc_adapter_backward(cache, emb, params, Matrix(2, D, 1.0), {}, Matrix(), grads, g_emb);
  CHECK(max_abs(g_emb) == 0.0);
}

TEST_CASE("adapter errors") {
  const auto params = CtcAdapterParams::zeros(2, 4, 3, 4);
  auto grads = params;
  Matrix g_emb(3, 4);
  CHECK_THROWS_AS(ctc_adapter_backward(CtcAdapterCache{}, Matrix(3, 4), params, Matrix(1, 4), {},
                                       Matrix(), grads, g_emb),
                  StateError);
  CHECK_THROWS_AS(ctc_adapter_forward(Matrix(1, 3), Matrix(3, 4), params, {}), DimensionError);
  CHECK_THROWS_AS(ctc_adapter_forward(Matrix(1, 2), Matrix(4, 4), params, {}), DimensionError);
  CHECK_THROWS_AS(ctc_adapter_forward(Matrix(0, 2), Matrix(3, 4), params, {}), DimensionError);
  CHECK_THROWS_AS(ctc_adapter_forward(Matrix(1, 2), Matrix(3, 4), params, {1.0, false}),
                  ConfigError);
  CHECK_THROWS_AS(linear_adapter_forward(Matrix(1, 3), LinearAdapterParams{FeedForward::zeros(2, 4, 4)}),
                  DimensionError);
}

TEST_CASE("linear adapter") {
  Rng rng(7);
  const Matrix frames = random_normal(5, 3, 0.1, rng);
  CHECK(max_abs(linear_adapter_forward(frames, {FeedForward::zeros(3, 3, 3)})) == 0.0);

  // Identity layers with a large first bias sit on GELU's linear asymptote.
  LinearAdapterParams p{FeedForward::zeros(3, 3, 3)};
  for (std::size_t i = 0; i < 3; ++i) {
    p.proj.first.weight(i, i) = 1.0;
    p.proj.second.weight(i, i) = 1.0;
    p.proj.first.bias(0, i) = 10.0;
  }
  const Matrix out = linear_adapter_forward(frames, p);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t d = 0; d < 3; ++d) CHECK(std::abs(out(t, d) - (frames(t, d) + 10.0)) <= 1e-6);
}

TEST_CASE("adapter gradients pass finite differences") {
  gradcheck::SuiteOptions opts;
  opts.instances = 50;
  for (const char* name : {"adapter", "linear_adapter"}) {
    const auto r = gradcheck::check_component(name, opts);
    CHECK(r.instances == 50);
    CHECK(r.max_rel_error <= 1e-4);
    CHECK(r.passed);
  }
}
