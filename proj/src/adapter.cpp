#include "cotasr/adapter.hpp"

#include <algorithm>
#include <string>

#include "cotasr/errors.hpp"

namespace cotasr::adapter {

CtcAdapterParams CtcAdapterParams::random(std::size_t d_enc, std::size_t hidden,
                                          std::size_t vocab, std::size_t d_model, Rng& rng) {
  return {FeedForward::random(d_enc, hidden, vocab + 1, rng),
          FeedForward::random(d_enc, hidden, d_model + 1, rng)};
}

CtcAdapterParams CtcAdapterParams::zeros(std::size_t d_enc, std::size_t hidden,
                                         std::size_t vocab, std::size_t d_model) {
  return {FeedForward::zeros(d_enc, hidden, vocab + 1),
          FeedForward::zeros(d_enc, hidden, d_model + 1)};
}

LinearAdapterParams LinearAdapterParams::random(std::size_t d_enc, std::size_t hidden,
                                                std::size_t d_model, Rng& rng) {
  return {FeedForward::random(d_enc, hidden, d_model, rng)};
}

CtcAdapterOutput ctc_adapter_forward(const Matrix& frames, const Matrix& embedding,
                                     const CtcAdapterParams& params,
                                     const CtcAdapterOptions& options, CtcAdapterCache* cache) {
  const std::size_t L = frames.rows();
  const std::size_t V = params.vocab();
  const std::size_t D = params.d_model();
  if (L == 0) throw DimensionError("ctc adapter: empty frame sequence");
  if (frames.cols() != params.out_proj.in() || frames.cols() != params.res_proj.in()) {
    throw DimensionError("ctc adapter: frame width " + std::to_string(frames.cols()) +
                         " does not match projection input " +
                         std::to_string(params.out_proj.in()));
  }
  if (embedding.rows() != V || embedding.cols() != D) {
    throw DimensionError("ctc adapter: embedding table is " + std::to_string(embedding.rows()) +
                         "x" + std::to_string(embedding.cols()) + ", expected " +
                         std::to_string(V) + "x" + std::to_string(D));
  }
  if (!(options.tau >= 0.0 && options.tau < 1.0)) {
    throw ConfigError("ctc adapter: tau must lie in [0, 1)");
  }

  FeedForwardCache out_cache, res_cache;
  const Matrix logits = params.out_proj.forward(frames, &out_cache);
  const Matrix res_full = params.res_proj.forward(frames, &res_cache);

  CtcAdapterOutput out;
  out.blank_logits.resize(L);
  out.nonblank_logits = Matrix(L, V);
  Matrix nonblank(L, V);
  Matrix weights(L, V);
  Matrix mask(L, V);
  std::vector<double> mask_sum(L, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    out.blank_logits[t] = logits(t, V);
    auto z = out.nonblank_logits.row(t);
    for (std::size_t v = 0; v < V; ++v) z[v] = logits(t, v);
    auto p = nonblank.row(t);
    std::copy(z.begin(), z.end(), p.begin());
    softmax_inplace(p);
    for (std::size_t v = 0; v < V; ++v) {
      if (p[v] >= options.tau) {
        mask(t, v) = 1.0;
        weights(t, v) = p[v];
        mask_sum[t] += p[v];
      }
    }
    if (options.renormalize && mask_sum[t] > 0.0) {
      for (std::size_t v = 0; v < V; ++v) weights(t, v) /= mask_sum[t];
    }
  }

  out.prompt = matmul(weights, embedding);
  Matrix residual(L, D);
  std::vector<double> gate(L);
  for (std::size_t t = 0; t < L; ++t) {
    gate[t] = sigmoid(res_full(t, D));
    for (std::size_t d = 0; d < D; ++d) {
      residual(t, d) = res_full(t, d);
      out.prompt(t, d) += gate[t] * residual(t, d);
    }
  }

  out.posteriors.blank.resize(L);
  for (std::size_t t = 0; t < L; ++t) out.posteriors.blank[t] = sigmoid(out.blank_logits[t]);
  out.posteriors.nonblank = nonblank;

  if (cache != nullptr) {
    cache->out = std::move(out_cache);
    cache->res = std::move(res_cache);
    cache->nonblank = std::move(nonblank);
    cache->weights = std::move(weights);
    cache->mask = std::move(mask);
    cache->mask_sum = std::move(mask_sum);
    cache->renormalize = options.renormalize;
    cache->residual = std::move(residual);
    cache->gate = std::move(gate);
    cache->valid = true;
  }
  return out;
}

Matrix ctc_adapter_backward(const CtcAdapterCache& cache, const Matrix& embedding,
                            const CtcAdapterParams& params, const Matrix& d_prompt,
                            std::span<const double> ctc_grad_blank,
                            const Matrix& ctc_grad_nonblank, CtcAdapterParams& grad_params,
                            Matrix& grad_embedding) {
  if (!cache.valid) throw StateError("ctc adapter backward called without a forward cache");
  const std::size_t L = cache.nonblank.rows();
  const std::size_t V = params.vocab();
  const std::size_t D = params.d_model();
  if (d_prompt.rows() != L || d_prompt.cols() != D) {
    throw DimensionError("ctc adapter backward: prompt gradient shape mismatch");
  }
  const bool with_ctc = !ctc_grad_blank.empty();
  if (with_ctc && (ctc_grad_blank.size() != L || ctc_grad_nonblank.rows() != L ||
                   ctc_grad_nonblank.cols() != V)) {
    throw DimensionError("ctc adapter backward: CTC gradient shape mismatch");
  }

  // u = w * W_emb
  matmul_tn_acc(cache.weights, d_prompt, grad_embedding);
  const Matrix d_weights = matmul_nt(d_prompt, embedding);

  Matrix d_logits(L, V + 1);
  Matrix d_res_full(L, D + 1);
  std::vector<double> d_p(V);
  for (std::size_t t = 0; t < L; ++t) {
    const auto p = cache.nonblank.row(t);
    const auto w = cache.weights.row(t);
    const auto dw = d_weights.row(t);
    // d(masked p) from dw, through the optional renormalization.
    const double s = cache.mask_sum[t];
    const bool renormalized = cache.renormalize && s > 0.0;
    double dot = 0.0;
    if (renormalized) {
      for (std::size_t v = 0; v < V; ++v) dot += dw[v] * w[v];
    }
    for (std::size_t v = 0; v < V; ++v) {
      const double dm = renormalized ? (dw[v] - dot) / s : dw[v];
      d_p[v] = cache.mask(t, v) * dm;
    }
    // softmax backward: dz = p * (dp - <dp, p>)
    double inner = 0.0;
    for (std::size_t v = 0; v < V; ++v) inner += d_p[v] * p[v];
    for (std::size_t v = 0; v < V; ++v) {
      d_logits(t, v) = p[v] * (d_p[v] - inner);
      if (with_ctc) d_logits(t, v) += ctc_grad_nonblank(t, v);
    }
    d_logits(t, V) = with_ctc ? ctc_grad_blank[t] : 0.0;

    const double g = cache.gate[t];
    double d_gate = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      d_gate += d_prompt(t, d) * cache.residual(t, d);
      d_res_full(t, d) = g * d_prompt(t, d);
    }
    d_res_full(t, D) = d_gate * g * (1.0 - g);
  }

  Matrix d_frames = params.out_proj.backward(cache.out, d_logits, grad_params.out_proj);
  add_inplace(d_frames, params.res_proj.backward(cache.res, d_res_full, grad_params.res_proj));
  return d_frames;
}

Matrix linear_adapter_forward(const Matrix& frames, const LinearAdapterParams& params,
                              FeedForwardCache* cache) {
  if (frames.rows() == 0) throw DimensionError("linear adapter: empty frame sequence");
  if (frames.cols() != params.proj.in()) {
    throw DimensionError("linear adapter: frame width " + std::to_string(frames.cols()) +
                         " does not match projection input " + std::to_string(params.proj.in()));
  }
  return params.proj.forward(frames, cache);
}

Matrix linear_adapter_backward(const FeedForwardCache& cache, const LinearAdapterParams& params,
                               const Matrix& d_prompt, LinearAdapterParams& grad_params) {
  return params.proj.backward(cache, d_prompt, grad_params.proj);
}

}  // namespace cotasr::adapter
