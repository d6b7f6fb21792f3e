#include "cotasr/encoder.hpp"

#include <algorithm>
#include <string>

#include "cotasr/errors.hpp"

namespace cotasr::model {

EncoderParams EncoderParams::random(std::size_t d_feat, std::size_t d_enc, std::size_t window,
                                    std::size_t stride, std::size_t num_blocks, Rng& rng) {
  if (window == 0 || stride == 0) throw ConfigError("encoder window and stride must be >= 1");
  EncoderParams p;
  p.window = window;
  p.stride = stride;
  p.frame_proj = Dense::random(window * d_feat, d_enc, rng);
  for (std::size_t b = 0; b < num_blocks; ++b) {
    FeedForward ff = FeedForward::random(d_enc, 2 * d_enc, d_enc, rng);
    // Start each residual branch small so the stack begins near the
    // windowed projection.
    scale_inplace(ff.second.weight, 0.1);
    p.blocks.push_back(std::move(ff));
  }
  return p;
}

std::size_t encoded_length(std::size_t input_frames, std::size_t stride) {
  return (input_frames + stride - 1) / stride;
}

Matrix encode(const Matrix& features, const EncoderParams& params, EncoderCache* cache) {
  const std::size_t d_feat = params.d_feat();
  if (features.cols() != d_feat) {
    throw DimensionError("encoder: feature width " + std::to_string(features.cols()) +
                         ", expected " + std::to_string(d_feat));
  }
  if (features.rows() < params.window) {
    throw InputTooShortError("encoder: " + std::to_string(features.rows()) +
                             " frames, window needs at least " + std::to_string(params.window));
  }
  const std::size_t n_in = features.rows();
  const std::size_t n_out = encoded_length(n_in, params.stride);
  Matrix windows(n_out, params.window * d_feat);
  for (std::size_t t = 0; t < n_out; ++t) {
    for (std::size_t k = 0; k < params.window; ++k) {
      const std::size_t src = t * params.stride + k;
      if (src >= n_in) break;
      const auto in = features.row(src);
      std::copy(in.begin(), in.end(), windows.row(t).begin() + static_cast<long>(k * d_feat));
    }
  }
  Matrix h = params.frame_proj.forward(windows);
  std::vector<FeedForwardCache> block_caches(params.blocks.size());
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    add_inplace(h, params.blocks[b].forward(h, cache ? &block_caches[b] : nullptr));
  }
  if (cache != nullptr) {
    cache->windows = std::move(windows);
    cache->input_frames = n_in;
    cache->blocks = std::move(block_caches);
  }
  return h;
}

Matrix encode_backward(const EncoderCache& cache, const EncoderParams& params,
                       const Matrix& d_frames, EncoderParams& grad) {
  if (cache.blocks.size() != params.blocks.size()) {
    throw StateError("encoder backward called without a forward cache");
  }
  Matrix dh = d_frames;
  for (std::size_t b = params.blocks.size(); b-- > 0;) {
    add_inplace(dh, params.blocks[b].backward(cache.blocks[b], dh, grad.blocks[b]));
  }
  const Matrix d_windows = params.frame_proj.backward(cache.windows, dh, grad.frame_proj);
  const std::size_t d_feat = params.d_feat();
  const std::size_t n_out = d_windows.rows();
  const std::size_t n_in = cache.input_frames;
  Matrix d_features(n_in, d_feat);
  for (std::size_t t = 0; t < n_out; ++t) {
    for (std::size_t k = 0; k < params.window; ++k) {
      const std::size_t dst = t * params.stride + k;
      if (dst >= n_in) break;
      for (std::size_t j = 0; j < d_feat; ++j) d_features(dst, j) += d_windows(t, k * d_feat + j);
    }
  }
  return d_features;
}

}  // namespace cotasr::model
