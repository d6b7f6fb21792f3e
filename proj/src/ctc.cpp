#include "cotasr/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cotasr/errors.hpp"

namespace cotasr::ctc {

namespace {

constexpr int kBlank = -1;

struct LogEmissions {
  std::vector<double> blank;  // T
  Matrix token;               // T x V

  double at(std::size_t t, int label) const {
    return label == kBlank ? blank[t] : token(t, static_cast<std::size_t>(label));
  }
};

std::vector<int> extend(const Target& target) {
  std::vector<int> ext;
  ext.reserve(2 * target.size() + 1);
  ext.push_back(kBlank);
  for (int v : target) {
    ext.push_back(v);
    ext.push_back(kBlank);
  }
  return ext;
}

bool can_skip(const std::vector<int>& ext, std::size_t s) {
  return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
}

void check_target(const Target& target, std::size_t vocab) {
  for (int v : target) {
    if (v < 0 || static_cast<std::size_t>(v) >= vocab) {
      throw InvariantError("CTC target token " + std::to_string(v) + " outside [0, " +
                           std::to_string(vocab) + ")");
    }
  }
}

// alpha(t, s): log prob of all prefixes ending in extended state s at t.
Matrix forward(const LogEmissions& em, const std::vector<int>& ext) {
  const std::size_t T = em.blank.size(), S = ext.size();
  Matrix alpha(T, S, kLogZero);
  alpha(0, 0) = em.at(0, ext[0]);
  if (S > 1) alpha(0, 1) = em.at(0, ext[1]);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = alpha(t - 1, s);
      if (s >= 1) acc = log_add(acc, alpha(t - 1, s - 1));
      if (can_skip(ext, s)) acc = log_add(acc, alpha(t - 1, s - 2));
      alpha(t, s) = acc == kLogZero ? kLogZero : acc + em.at(t, ext[s]);
    }
  }
  return alpha;
}

// beta(t, s): log prob of all suffixes starting in state s at t, emission at
// t included.
Matrix backward(const LogEmissions& em, const std::vector<int>& ext) {
  const std::size_t T = em.blank.size(), S = ext.size();
  Matrix beta(T, S, kLogZero);
  beta(T - 1, S - 1) = em.at(T - 1, ext[S - 1]);
  if (S > 1) beta(T - 1, S - 2) = em.at(T - 1, ext[S - 2]);
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = beta(t + 1, s);
      if (s + 1 < S) acc = log_add(acc, beta(t + 1, s + 1));
      if (s + 2 < S && can_skip(ext, s + 2)) acc = log_add(acc, beta(t + 1, s + 2));
      beta(t, s) = acc == kLogZero ? kLogZero : acc + em.at(t, ext[s]);
    }
  }
  return beta;
}

double total(const Matrix& alpha) {
  const std::size_t T = alpha.rows(), S = alpha.cols();
  double p = alpha(T - 1, S - 1);
  if (S > 1) p = log_add(p, alpha(T - 1, S - 2));
  return p;
}

LogEmissions log_emissions(const Posteriors& post) {
  LogEmissions em;
  const std::size_t T = post.frames(), V = post.vocab();
  em.blank.resize(T);
  em.token = Matrix(T, V);
  for (std::size_t t = 0; t < T; ++t) {
    const double pb = post.blank[t];
    em.blank[t] = pb > 0.0 ? std::log(pb) : kLogZero;
    const double log_mass = pb < 1.0 ? std::log1p(-pb) : kLogZero;
    for (std::size_t v = 0; v < V; ++v) {
      const double p = post.nonblank(t, v);
      em.token(t, v) = (p > 0.0 && log_mass != kLogZero) ? log_mass + std::log(p) : kLogZero;
    }
  }
  return em;
}

// log sigmoid(z) = -softplus(-z)
double log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

}  // namespace

void Posteriors::validate() const {
  if (nonblank.rows() != blank.size()) {
    throw InvariantError("posteriors: " + std::to_string(blank.size()) + " blank entries vs " +
                         std::to_string(nonblank.rows()) + " non-blank rows");
  }
  if (blank.empty()) throw InvariantError("posteriors: no frames");
  if (nonblank.cols() == 0) throw InvariantError("posteriors: empty non-blank vocabulary");
  for (std::size_t t = 0; t < blank.size(); ++t) {
    if (!(blank[t] >= 0.0 && blank[t] <= 1.0)) {
      throw InvariantError("posteriors: blank probability outside [0,1] at frame " +
                           std::to_string(t));
    }
    double sum = 0.0;
    for (double p : nonblank.row(t)) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw InvariantError("posteriors: non-blank entry outside [0,1] at frame " +
                             std::to_string(t));
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw InvariantError("posteriors: non-blank row " + std::to_string(t) + " sums to " +
                           std::to_string(sum));
    }
  }
}

std::vector<double> Posteriors::scaled_nonblank(std::size_t t) const {
  std::vector<double> out(nonblank.row(t).begin(), nonblank.row(t).end());
  for (double& p : out) p *= 1.0 - blank[t];
  return out;
}

Posteriors posteriors_from_logits(std::span<const double> blank_logits,
                                  const Matrix& nonblank_logits) {
  if (blank_logits.size() != nonblank_logits.rows()) {
    throw DimensionError("posteriors_from_logits: frame count mismatch");
  }
  Posteriors post;
  post.blank.resize(blank_logits.size());
  post.nonblank = nonblank_logits;
  for (std::size_t t = 0; t < blank_logits.size(); ++t) {
    post.blank[t] = sigmoid(blank_logits[t]);
    softmax_inplace(post.nonblank.row(t));
  }
  return post;
}

std::size_t min_frames(const Target& target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

double log_likelihood(const Posteriors& post, const Target& target) {
  post.validate();
  check_target(target, post.vocab());
  if (post.frames() < min_frames(target)) return kLogZero;
  const auto ext = extend(target);
  return total(forward(log_emissions(post), ext));
}

double brute_force_log_likelihood(const Posteriors& post, const Target& target) {
  post.validate();
  check_target(target, post.vocab());
  const std::size_t T = post.frames(), V = post.vocab();
  if (T > 8 || V > 4) {
    throw BoundsError("brute-force CTC limited to T <= 8 and V <= 4 (got T=" +
                      std::to_string(T) + ", V=" + std::to_string(V) + ")");
  }
  // Symbol V stands for blank in the enumeration.
  const std::size_t symbols = V + 1;
  std::size_t count = 1;
  for (std::size_t t = 0; t < T; ++t) count *= symbols;

  std::vector<std::size_t> digits(T, 0);
  std::vector<int> collapsed;
  double sum = 0.0;
  for (std::size_t n = 0; n < count; ++n) {
    std::size_t rest = n;
    for (std::size_t t = 0; t < T; ++t) {
      digits[t] = rest % symbols;
      rest /= symbols;
    }
    collapsed.clear();
    std::size_t prev = symbols;
    double prob = 1.0;
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t d = digits[t];
      prob *= d == V ? post.blank[t] : (1.0 - post.blank[t]) * post.nonblank(t, d);
      if (d != V && d != prev) collapsed.push_back(static_cast<int>(d));
      prev = d;
    }
    if (collapsed == target) sum += prob;
  }
  return sum > 0.0 ? std::log(sum) : kLogZero;
}

LossAndGrad loss_and_grad(std::span<const double> blank_logits, const Matrix& nonblank_logits,
                          const Target& target) {
  const std::size_t T = blank_logits.size(), V = nonblank_logits.cols();
  if (nonblank_logits.rows() != T) throw DimensionError("ctc loss: frame count mismatch");
  if (T == 0) throw DimensionError("ctc loss: no frames");
  check_target(target, V);
  if (T < min_frames(target)) throw InfeasibleTargetError(T, min_frames(target));

  // Emissions straight from logits keep everything in log space.
  LogEmissions em;
  em.blank.resize(T);
  em.token = Matrix(T, V);
  std::vector<double> p_blank(T);
  Matrix p_nonblank = nonblank_logits;
  for (std::size_t t = 0; t < T; ++t) {
    const double zb = blank_logits[t];
    if (!std::isfinite(zb)) throw NumericalError("ctc loss: non-finite blank logit");
    p_blank[t] = sigmoid(zb);
    em.blank[t] = log_sigmoid(zb);
    const double log_mass = log_sigmoid(-zb);
    const double lse = log_sum_exp(nonblank_logits.row(t));
    for (std::size_t v = 0; v < V; ++v) em.token(t, v) = log_mass + nonblank_logits(t, v) - lse;
    softmax_inplace(p_nonblank.row(t));
  }

  const auto ext = extend(target);
  const Matrix alpha = forward(em, ext);
  const Matrix beta = backward(em, ext);
  const double log_p = total(alpha);
  if (!std::isfinite(log_p)) throw NumericalError("ctc loss: non-finite log-likelihood");

  LossAndGrad out;
  out.loss = -log_p;
  out.grad_blank.assign(T, 0.0);
  out.grad_nonblank = Matrix(T, V);
  std::vector<double> occ_token(V);
  for (std::size_t t = 0; t < T; ++t) {
    double occ_blank = 0.0;
    std::fill(occ_token.begin(), occ_token.end(), 0.0);
    for (std::size_t s = 0; s < ext.size(); ++s) {
      const double a = alpha(t, s), b = beta(t, s);
      if (a == kLogZero || b == kLogZero) continue;
      const double occ = std::exp(a + b - em.at(t, ext[s]) - log_p);
      if (ext[s] == kBlank) {
        occ_blank += occ;
      } else {
        occ_token[static_cast<std::size_t>(ext[s])] += occ;
      }
    }
    // Occupancies sum to one per frame, so with O_nb = sum_v O_v:
    // d(-log P)/dz_b = p_b - O_b, d(-log P)/dz_v = O_nb p_nb[v] - O_v.
    double occ_nonblank = 0.0;
    for (double o : occ_token) occ_nonblank += o;
    out.grad_blank[t] = p_blank[t] - occ_blank;
    for (std::size_t v = 0; v < V; ++v)
      out.grad_nonblank(t, v) = occ_nonblank * p_nonblank(t, v) - occ_token[v];
  }
  return out;
}

}  // namespace cotasr::ctc
