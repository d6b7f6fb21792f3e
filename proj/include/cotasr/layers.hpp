#pragma once

#include <string>
#include <string_view>
#include <type_traits>

#include "cotasr/numerics.hpp"

namespace cotasr {

// y = x * weight + bias, weight is in x out, bias is 1 x out.
struct Dense {
  Matrix weight;
  Matrix bias;

  static Dense zeros(std::size_t in, std::size_t out) { return {Matrix(in, out), Matrix(1, out)}; }
  static Dense random(std::size_t in, std::size_t out, Rng& rng);

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }

  Matrix forward(const Matrix& x) const;
  // Accumulates weight/bias gradients into `grad`, returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& dy, Dense& grad) const;
};

struct FeedForwardCache {
  Matrix input;
  Matrix hidden_pre;
  Matrix hidden;
};

// Two dense layers with an exact GELU between them.
struct FeedForward {
  Dense first;
  Dense second;

  static FeedForward zeros(std::size_t in, std::size_t hidden, std::size_t out) {
    return {Dense::zeros(in, hidden), Dense::zeros(hidden, out)};
  }
  static FeedForward random(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);

  std::size_t in() const { return first.in(); }
  std::size_t hidden() const { return first.out(); }
  std::size_t out() const { return second.out(); }

  Matrix forward(const Matrix& x, FeedForwardCache* cache = nullptr) const;
  Matrix backward(const FeedForwardCache& cache, const Matrix& dy, FeedForward& grad) const;
};

template <class T, class U>
concept SameParam = std::is_same_v<std::remove_const_t<T>, U>;

template <class D, class F>
  requires SameParam<D, Dense>
void visit_params(D& d, std::string_view prefix, F&& f) {
  f(std::string(prefix) + ".weight", d.weight);
  f(std::string(prefix) + ".bias", d.bias);
}

template <class FF, class F>
  requires SameParam<FF, FeedForward>
void visit_params(FF& ff, std::string_view prefix, F&& f) {
  visit_params(ff.first, std::string(prefix) + ".0", f);
  visit_params(ff.second, std::string(prefix) + ".1", f);
}

}  // namespace cotasr
