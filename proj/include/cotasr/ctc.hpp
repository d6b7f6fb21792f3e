#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cotasr/numerics.hpp"

namespace cotasr::ctc {

// Per-frame CTC emission model with an independent blank probability.
//
// blank[t] is the blank probability p_b, nonblank row t is a normalized
// distribution over the V non-blank tokens. The emission probability of
// token v at frame t is (1 - blank[t]) * nonblank(t, v), so blank and the
// scaled non-blank entries sum to one per frame.
struct Posteriors {
  std::vector<double> blank;
  Matrix nonblank;

  std::size_t frames() const { return blank.size(); }
  std::size_t vocab() const { return nonblank.cols(); }

  // Throws InvariantError unless every row is a valid distribution (1e-9).
  void validate() const;
  // (1 - p_b) * p_nb for frame t.
  std::vector<double> scaled_nonblank(std::size_t t) const;
};

// Posteriors from raw logits: blank_logits has one entry per frame,
// nonblank_logits is T x V.
Posteriors posteriors_from_logits(std::span<const double> blank_logits,
                                  const Matrix& nonblank_logits);

using Target = std::vector<int>;

// Minimum number of frames that can emit `target`: one per label plus one
// separating blank per adjacent repeat.
std::size_t min_frames(const Target& target);

// log P(target | posteriors) by the forward recursion over the
// blank-extended label sequence. Infeasible targets give -infinity.
double log_likelihood(const Posteriors& post, const Target& target);

// Exhaustive enumeration of all (V+1)^T emission strings, in probability
// space. Requires T <= 8 and V <= 4 (BoundsError otherwise).
double brute_force_log_likelihood(const Posteriors& post, const Target& target);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad_blank;  // dL/d(blank logit), per frame
  Matrix grad_nonblank;            // dL/d(non-blank logits), T x V
};

// Negative log-likelihood of `target` with emissions built from logits
// (sigmoid blank, softmax non-blank scaled by the non-blank mass) and its
// exact gradient from forward-backward occupancies. Throws
// InfeasibleTargetError when T < min_frames(target).
LossAndGrad loss_and_grad(std::span<const double> blank_logits, const Matrix& nonblank_logits,
                          const Target& target);

}  // namespace cotasr::ctc
