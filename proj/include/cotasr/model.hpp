#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "cotasr/adapter.hpp"
#include "cotasr/decoder.hpp"
#include "cotasr/encoder.hpp"
#include "cotasr/vocab.hpp"

namespace cotasr::model {

struct ModelConfig {
  // 0 selects the full character+tag vocabulary; smaller values are only
  // meaningful for micro instances in tests.
  std::size_t vocab = 0;
  std::size_t d_feat = 16;
  std::size_t d_enc = 32;
  std::size_t d_model = 64;
  std::size_t decoder_blocks = 2;
  std::size_t heads = 4;
  std::size_t encoder_window = 3;
  std::size_t encoder_stride = 2;
  std::size_t encoder_blocks = 2;
  // 0 selects 2 * max(d_enc, d_model).
  std::size_t adapter_hidden = 0;
  adapter::Kind adapter_kind = adapter::Kind::CtcGuided;
  adapter::CtcAdapterOptions ctc_options;

  std::size_t resolved_vocab() const { return vocab != 0 ? vocab : Vocabulary::size(); }
  std::size_t resolved_adapter_hidden() const {
    return adapter_hidden != 0 ? adapter_hidden : 2 * std::max(d_enc, d_model);
  }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct CotAsrModel {
  ModelConfig config;
  EncoderParams encoder;
  adapter::CtcAdapterParams ctc_adapter;       // used when adapter_kind == CtcGuided
  adapter::LinearAdapterParams linear_adapter;  // used when adapter_kind == Linear
  DecoderParams decoder;

  static CotAsrModel create(const ModelConfig& config, std::uint64_t seed);
  // Same shapes, every value zero (gradient and optimizer-moment buffers).
  CotAsrModel zeros_like() const;
  std::size_t vocab() const { return decoder.vocab(); }
};

// Visits every trainable tensor as (name, matrix). Names start with
// "encoder.", "adapter." or "decoder."; only the active adapter is visited.
template <class M, class F>
  requires SameParam<M, CotAsrModel>
void visit_params(M& m, F&& f) {
  visit_params(m.encoder, "encoder", f);
  if (m.config.adapter_kind == adapter::Kind::CtcGuided) {
    visit_params(m.ctc_adapter, "adapter.ctc", f);
  } else {
    visit_params(m.linear_adapter, "adapter.linear", f);
  }
  visit_params(m.decoder, "decoder", f);
}

std::size_t parameter_count(const CotAsrModel& m);

struct SpeechCache {
  EncoderCache encoder;
  adapter::CtcAdapterCache ctc;
  FeedForwardCache linear;
};

struct SpeechPrompt {
  Matrix prompt;                        // A, L x D
  bool has_ctc = false;
  std::vector<double> blank_logits;     // CTC-guided adapter only
  Matrix nonblank_logits;
  ctc::Posteriors posteriors;
};

// features -> encoder -> adapter.
SpeechPrompt speech_prompt(const CotAsrModel& m, const Matrix& features,
                           SpeechCache* cache = nullptr);
// Backward through adapter and encoder. ctc_grad_* may be empty.
void speech_prompt_backward(const CotAsrModel& m, const SpeechCache& cache,
                            const Matrix& d_prompt, std::span<const double> ctc_grad_blank,
                            const Matrix& ctc_grad_nonblank, CotAsrModel& grad);

// Rows of the embedding table for the given tokens.
Matrix embed(const DecoderParams& decoder, const TokenSequence& tokens);
void embed_backward(const TokenSequence& tokens, const Matrix& d_rows, std::size_t first_row,
                    Matrix& grad_embedding);

// Sum over masked positions of -log softmax(logits row)[target].
// Throws EmptyTargetError when no position is selected.
double ce_loss(const Matrix& logits, std::span<const TokenId> targets,
               std::span<const unsigned char> mask);
// Same, also writing dL/dlogits (softmax - onehot on masked rows, 0 elsewhere).
double ce_loss_and_grad(const Matrix& logits, std::span<const TokenId> targets,
                        std::span<const unsigned char> mask, Matrix& grad);

inline double joint_loss(double ce, double ctc, double lambda) { return ce + lambda * ctc; }

}  // namespace cotasr::model
