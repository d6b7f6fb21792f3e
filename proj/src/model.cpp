#include "cotasr/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cotasr/errors.hpp"

namespace cotasr::model {

CotAsrModel CotAsrModel::create(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  CotAsrModel m;
  m.config = config;
  const std::size_t V = config.resolved_vocab();
  m.encoder = EncoderParams::random(config.d_feat, config.d_enc, config.encoder_window,
                                    config.encoder_stride, config.encoder_blocks, rng);
  const std::size_t hidden = config.resolved_adapter_hidden();
  if (config.adapter_kind == adapter::Kind::CtcGuided) {
    m.ctc_adapter =
        adapter::CtcAdapterParams::random(config.d_enc, hidden, V, config.d_model, rng);
  } else {
    m.linear_adapter =
        adapter::LinearAdapterParams::random(config.d_enc, hidden, config.d_model, rng);
  }
  m.decoder = DecoderParams::random(V, config.d_model, config.decoder_blocks, config.heads, rng);
  return m;
}

CotAsrModel CotAsrModel::zeros_like() const {
  CotAsrModel z = *this;
  visit_params(z, [](const std::string&, Matrix& t) { t.fill(0.0); });
  return z;
}

std::size_t parameter_count(const CotAsrModel& m) {
  std::size_t n = 0;
  visit_params(m, [&](const std::string&, const Matrix& t) { n += t.size(); });
  return n;
}

SpeechPrompt speech_prompt(const CotAsrModel& m, const Matrix& features, SpeechCache* cache) {
  const Matrix frames = encode(features, m.encoder, cache ? &cache->encoder : nullptr);
  SpeechPrompt out;
  if (m.config.adapter_kind == adapter::Kind::CtcGuided) {
    auto res = adapter::ctc_adapter_forward(frames, m.decoder.embedding, m.ctc_adapter,
                                            m.config.ctc_options, cache ? &cache->ctc : nullptr);
    out.prompt = std::move(res.prompt);
    out.has_ctc = true;
    out.blank_logits = std::move(res.blank_logits);
    out.nonblank_logits = std::move(res.nonblank_logits);
    out.posteriors = std::move(res.posteriors);
  } else {
    out.prompt =
        adapter::linear_adapter_forward(frames, m.linear_adapter, cache ? &cache->linear : nullptr);
  }
  return out;
}

void speech_prompt_backward(const CotAsrModel& m, const SpeechCache& cache,
                            const Matrix& d_prompt, std::span<const double> ctc_grad_blank,
                            const Matrix& ctc_grad_nonblank, CotAsrModel& grad) {
  Matrix d_frames;
  if (m.config.adapter_kind == adapter::Kind::CtcGuided) {
    d_frames = adapter::ctc_adapter_backward(cache.ctc, m.decoder.embedding, m.ctc_adapter,
                                             d_prompt, ctc_grad_blank, ctc_grad_nonblank,
                                             grad.ctc_adapter, grad.decoder.embedding);
  } else {
    d_frames =
        adapter::linear_adapter_backward(cache.linear, m.linear_adapter, d_prompt,
                                         grad.linear_adapter);
  }
  encode_backward(cache.encoder, m.encoder, d_frames, grad.encoder);
}

Matrix embed(const DecoderParams& decoder, const TokenSequence& tokens) {
  const std::size_t D = decoder.d_model();
  Matrix rows(tokens.size(), D);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const TokenId id = tokens[i];
    if (id < 0 || static_cast<std::size_t>(id) >= decoder.vocab()) {
      throw VocabError("token id " + std::to_string(id) + " outside embedding table");
    }
    const auto src = decoder.embedding.row(static_cast<std::size_t>(id));
    std::copy(src.begin(), src.end(), rows.row(i).begin());
  }
  return rows;
}

void embed_backward(const TokenSequence& tokens, const Matrix& d_rows, std::size_t first_row,
                    Matrix& grad_embedding) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto dst = grad_embedding.row(static_cast<std::size_t>(tokens[i]));
    const auto src = d_rows.row(first_row + i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

namespace {

double ce_impl(const Matrix& logits, std::span<const TokenId> targets, std::span<const unsigned char> mask,
               Matrix* grad) {
  if (targets.size() != logits.rows() || mask.size() != logits.rows()) {
    throw DimensionError("ce_loss: logits, targets and mask must have equal length");
  }
  if (grad != nullptr) *grad = Matrix(logits.rows(), logits.cols());
  double loss = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (!mask[i]) continue;
    const TokenId y = targets[i];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
      throw VocabError("ce_loss: target id " + std::to_string(y) + " out of range");
    }
    const auto row = logits.row(i);
    loss -= row[static_cast<std::size_t>(y)] - log_sum_exp(row);
    ++count;
    if (grad != nullptr) {
      auto g = grad->row(i);
      std::copy(row.begin(), row.end(), g.begin());
      softmax_inplace(g);
      g[static_cast<std::size_t>(y)] -= 1.0;
    }
  }
  if (count == 0) throw EmptyTargetError("ce_loss: mask selects no positions");
  return loss;
}

}  // namespace

double ce_loss(const Matrix& logits, std::span<const TokenId> targets,
               std::span<const unsigned char> mask) {
  return ce_impl(logits, targets, mask, nullptr);
}

double ce_loss_and_grad(const Matrix& logits, std::span<const TokenId> targets,
                        std::span<const unsigned char> mask, Matrix& grad) {
  return ce_impl(logits, targets, mask, &grad);
}

}  // namespace cotasr::model
