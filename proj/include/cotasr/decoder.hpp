#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "cotasr/layers.hpp"

namespace cotasr::model {

struct LayerNormParams {
  Matrix gain;  // 1 x D
  Matrix bias;  // 1 x D

  static LayerNormParams identity(std::size_t d);
};

struct DecoderBlock {
  LayerNormParams norm_attn;
  Dense query, key, value, output;  // D -> D each
  LayerNormParams norm_ff;
  FeedForward ff;                   // D -> 4D -> D
};

// Causal pre-norm transformer decoder with rotary position encoding on
// queries and keys. The output head is tied to the embedding table:
// logits = hidden * embedding^T. There is no final norm, so with zeroed
// blocks the logits are exactly embedding * input.
struct DecoderParams {
  std::size_t heads = 4;
  Matrix embedding;  // V x D
  std::vector<DecoderBlock> blocks;

  static DecoderParams random(std::size_t vocab, std::size_t d_model, std::size_t num_blocks,
                              std::size_t heads, Rng& rng);
  std::size_t vocab() const { return embedding.rows(); }
  std::size_t d_model() const { return embedding.cols(); }
};

struct LayerNormCache {
  Matrix normalized;
  std::vector<double> inv_std;
};

struct DecoderBlockCache {
  Matrix input;
  LayerNormCache norm_attn;
  Matrix attn_in;
  Matrix q, k, v;           // after rotary encoding for q and k
  std::vector<Matrix> probs;  // per head, n x n (lower triangle used)
  Matrix attn_concat;
  Matrix mid;
  LayerNormCache norm_ff;
  FeedForwardCache ff;
};

struct DecoderCache {
  std::vector<DecoderBlockCache> blocks;
  Matrix hidden;
};

// Runs the decoder over a full sequence of input vectors (n x D) and
// returns the final hidden states (n x D).
Matrix decoder_forward(const Matrix& inputs, const DecoderParams& params,
                       DecoderCache* cache = nullptr);
// Tied-head logits for rows [first, hidden.rows()).
Matrix tied_logits(const Matrix& hidden, const DecoderParams& params, std::size_t first = 0);
// Backward from dL/d(hidden) to dL/d(inputs); accumulates parameter grads.
Matrix decoder_backward(const DecoderCache& cache, const DecoderParams& params,
                        const Matrix& d_hidden, DecoderParams& grad);

// Incremental evaluation with cached keys and values. Feeding a sequence
// in any number of chunks yields hidden states bitwise identical to one
// decoder_forward over the whole sequence.
class DecoderState {
 public:
  explicit DecoderState(const DecoderParams& params);
  // Appends rows (m x D) and returns their hidden states (m x D).
  Matrix append(const Matrix& inputs);
  std::size_t length() const { return length_; }

 private:
  const DecoderParams* params_;
  std::size_t length_ = 0;
  std::vector<std::vector<double>> keys_;    // per block, row-major length x D
  std::vector<std::vector<double>> values_;
};

// Logits for every position of `inputs`.
Matrix lm_next_token_logits(const Matrix& inputs, const DecoderParams& params);

template <class P, class F>
  requires SameParam<P, LayerNormParams>
void visit_params(P& p, std::string_view prefix, F&& f) {
  f(std::string(prefix) + ".gain", p.gain);
  f(std::string(prefix) + ".bias", p.bias);
}

template <class P, class F>
  requires SameParam<P, DecoderBlock>
void visit_params(P& p, std::string_view prefix, F&& f) {
  const std::string pre(prefix);
  visit_params(p.norm_attn, pre + ".norm_attn", f);
  visit_params(p.query, pre + ".query", f);
  visit_params(p.key, pre + ".key", f);
  visit_params(p.value, pre + ".value", f);
  visit_params(p.output, pre + ".output", f);
  visit_params(p.norm_ff, pre + ".norm_ff", f);
  visit_params(p.ff, pre + ".ff", f);
}

template <class P, class F>
  requires SameParam<P, DecoderParams>
void visit_params(P& p, std::string_view prefix, F&& f) {
  f(std::string(prefix) + ".embedding", p.embedding);
  for (std::size_t i = 0; i < p.blocks.size(); ++i)
    visit_params(p.blocks[i], std::string(prefix) + ".block" + std::to_string(i), f);
}

}  // namespace cotasr::model
