#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "cotasr/ctc.hpp"
#include "cotasr/layers.hpp"

namespace cotasr::adapter {

enum class Kind { CtcGuided, Linear };

struct CtcAdapterOptions {
  // Entries of the non-blank distribution below tau are zeroed before the
  // embedding lookup. Must satisfy 0 <= tau < 1.
  double tau = 0.05;
  // Rescale the surviving weights to sum to one. Off by default.
  bool renormalize = false;
  friend bool operator==(const CtcAdapterOptions&, const CtcAdapterOptions&) = default;
};

// out_proj: d_enc -> hidden -> V + 1 logits. Columns [0, V) are the
// non-blank logits, column V is the blank logit.
// res_proj: d_enc -> hidden -> D + 1. Columns [0, D) are the residual,
// column D is the gate logit.
struct CtcAdapterParams {
  FeedForward out_proj;
  FeedForward res_proj;

  static CtcAdapterParams random(std::size_t d_enc, std::size_t hidden, std::size_t vocab,
                                 std::size_t d_model, Rng& rng);
  static CtcAdapterParams zeros(std::size_t d_enc, std::size_t hidden, std::size_t vocab,
                                std::size_t d_model);
  std::size_t vocab() const { return out_proj.out() - 1; }
  std::size_t d_model() const { return res_proj.out() - 1; }
};

struct LinearAdapterParams {
  FeedForward proj;

  static LinearAdapterParams random(std::size_t d_enc, std::size_t hidden, std::size_t d_model,
                                    Rng& rng);
};

struct CtcAdapterCache {
  FeedForwardCache out;
  FeedForwardCache res;
  Matrix nonblank;       // p_nb, L x V (unthresholded)
  Matrix weights;        // w after threshold (and optional renormalization)
  Matrix mask;           // 1 where p_nb >= tau
  std::vector<double> mask_sum;  // sum of masked p_nb per frame, used when renormalizing
  Matrix residual;       // r, L x D
  std::vector<double> gate;
  bool renormalize = false;
  bool valid = false;
};

struct CtcAdapterOutput {
  Matrix prompt;                // A, L x D
  std::vector<double> blank_logits;
  Matrix nonblank_logits;       // L x V
  ctc::Posteriors posteriors;   // p_b and unscaled p_nb
};

// Frames E (L x d_enc) -> speech prompt A (L x D) plus CTC posteriors.
// `embedding` is the V x D token embedding table shared with the decoder.
CtcAdapterOutput ctc_adapter_forward(const Matrix& frames, const Matrix& embedding,
                                     const CtcAdapterParams& params,
                                     const CtcAdapterOptions& options,
                                     CtcAdapterCache* cache = nullptr);

// Backward pass. d_prompt is dL/dA; ctc_grad_blank / ctc_grad_nonblank are
// dL/d(logits) from the CTC term, already scaled by its loss weight (pass
// empty to skip). Accumulates into grad_params and grad_embedding and
// returns dL/dE. Throws StateError when the cache was not filled.
Matrix ctc_adapter_backward(const CtcAdapterCache& cache, const Matrix& embedding,
                            const CtcAdapterParams& params, const Matrix& d_prompt,
                            std::span<const double> ctc_grad_blank,
                            const Matrix& ctc_grad_nonblank, CtcAdapterParams& grad_params,
                            Matrix& grad_embedding);

Matrix linear_adapter_forward(const Matrix& frames, const LinearAdapterParams& params,
                              FeedForwardCache* cache = nullptr);
Matrix linear_adapter_backward(const FeedForwardCache& cache, const LinearAdapterParams& params,
                               const Matrix& d_prompt, LinearAdapterParams& grad_params);

template <class P, class F>
  requires SameParam<P, CtcAdapterParams>
void visit_params(P& p, std::string_view prefix, F&& f) {
  visit_params(p.out_proj, std::string(prefix) + ".out_proj", f);
  visit_params(p.res_proj, std::string(prefix) + ".res_proj", f);
}

template <class P, class F>
  requires SameParam<P, LinearAdapterParams>
void visit_params(P& p, std::string_view prefix, F&& f) {
  visit_params(p.proj, std::string(prefix) + ".proj", f);
}

}  // namespace cotasr::adapter
