#include "cotasr/layers.hpp"

#include <cmath>

namespace cotasr {

Dense Dense::random(std::size_t in, std::size_t out, Rng& rng) {
  return {random_normal(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng), Matrix(1, out)};
}

Matrix Dense::forward(const Matrix& x) const {
  Matrix y = matmul(x, weight);
  add_row_bias(y, bias);
  return y;
}

Matrix Dense::backward(const Matrix& x, const Matrix& dy, Dense& grad) const {
  matmul_tn_acc(x, dy, grad.weight);
  add_column_sums(dy, grad.bias);
  return matmul_nt(dy, weight);
}

FeedForward FeedForward::random(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  FeedForward ff;
  ff.first = Dense::random(in, hidden, rng);
  ff.second = Dense::random(hidden, out, rng);
  return ff;
}

Matrix FeedForward::forward(const Matrix& x, FeedForwardCache* cache) const {
  Matrix pre = first.forward(x);
  Matrix act = gelu(pre);
  Matrix y = second.forward(act);
  if (cache != nullptr) {
    cache->input = x;
    cache->hidden_pre = std::move(pre);
    cache->hidden = std::move(act);
  }
  return y;
}

Matrix FeedForward::backward(const FeedForwardCache& cache, const Matrix& dy,
                             FeedForward& grad) const {
  Matrix dact = second.backward(cache.hidden, dy, grad.second);
  Matrix dpre = gelu_backward(cache.hidden_pre, dact);
  return first.backward(cache.input, dpre, grad.first);
}

}  // namespace cotasr
