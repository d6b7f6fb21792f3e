#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "cotasr/layers.hpp"

namespace cotasr::model {

// Toy speech encoder: a strided windowed projection (window frames
// concatenated, zero-padded past the end) followed by residual
// linear-GELU-linear blocks. Output length is ceil(frames / stride).
struct EncoderParams {
  std::size_t window = 3;
  std::size_t stride = 2;
  Dense frame_proj;                 // window * d_feat -> d_enc
  std::vector<FeedForward> blocks;  // d_enc -> hidden -> d_enc

  static EncoderParams random(std::size_t d_feat, std::size_t d_enc, std::size_t window,
                              std::size_t stride, std::size_t num_blocks, Rng& rng);
  std::size_t d_feat() const { return frame_proj.in() / window; }
  std::size_t d_enc() const { return frame_proj.out(); }
};

struct EncoderCache {
  std::size_t input_frames = 0;
  Matrix windows;
  std::vector<FeedForwardCache> blocks;
};

std::size_t encoded_length(std::size_t input_frames, std::size_t stride);

// Throws InputTooShortError when features has fewer rows than the window.
Matrix encode(const Matrix& features, const EncoderParams& params, EncoderCache* cache = nullptr);
// Accumulates parameter gradients; returns dL/d(features).
Matrix encode_backward(const EncoderCache& cache, const EncoderParams& params,
                       const Matrix& d_frames, EncoderParams& grad);

template <class P, class F>
  requires SameParam<P, EncoderParams>
void visit_params(P& p, std::string_view prefix, F&& f) {
  visit_params(p.frame_proj, std::string(prefix) + ".frame_proj", f);
  for (std::size_t i = 0; i < p.blocks.size(); ++i)
    visit_params(p.blocks[i], std::string(prefix) + ".block" + std::to_string(i), f);
}

}  // namespace cotasr::model
