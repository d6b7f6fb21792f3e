#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace cotasr {

// log(0). Log-space code uses -infinity, never a large negative sentinel.
inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// Products. Every output element accumulates its k-terms in ascending k
// order starting from 0.0, so results are reproducible bit for bit and a
// single-row product equals the corresponding row of a batched product.
Matrix matmul(const Matrix& a, const Matrix& b);
// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// out += a^T * b
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out);

void add_inplace(Matrix& dst, const Matrix& src);
void scale_inplace(Matrix& m, double s);
void add_row_bias(Matrix& m, const Matrix& bias);
// out(0, j) += sum_i m(i, j)
void add_column_sums(const Matrix& m, Matrix& out);
Matrix transpose(const Matrix& m);

std::vector<double> softmax_row(std::span<const double> z);
void softmax_inplace(std::span<double> z);
double sigmoid(double z);
double gelu(double z);
double gelu_grad(double z);
double log_sum_exp(std::span<const double> z);
double log_add(double a, double b);

Matrix gelu(const Matrix& m);
// dX for Y = gelu(X): dy * gelu'(x)
Matrix gelu_backward(const Matrix& x, const Matrix& dy);

// Seeded PRNG on top of std::mt19937_64, whose output sequence is fixed by
// the standard. The distributions below are implemented here rather than
// through <random> distributions (whose algorithms vary across standard
// libraries): uniform() uses the top 53 bits, normal() is Box-Muller with
// the second variate cached, below() uses rejection sampling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  // [0, 1)
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  // [0, n)
  std::uint64_t below(std::uint64_t n);
  // [lo, hi] inclusive
  std::int64_t between(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p) { return uniform() < p; }

  // Independent stream derived from this seed and a key (splitmix64 mix).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t key);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Matrix random_normal(std::size_t rows, std::size_t cols, double scale, Rng& rng);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Compares `analytic` to central differences of f around x. Per coordinate
// the error is |analytic - numeric| / max(1, |analytic|, |numeric|).
// Throws NumericalError if f is non-finite at any probe point.
GradCheckResult grad_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> analytic, std::span<const double> x,
                           double eps);

}  // namespace cotasr
