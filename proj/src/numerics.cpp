#include "cotasr/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "cotasr/errors.hpp"

namespace cotasr {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw DimensionError("matrix value count " + std::to_string(values_.size()) +
                         " does not match " + std::to_string(rows) + "x" +
                         std::to_string(cols));
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(v));
}

void Matrix::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Matrix::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
}

namespace {

void require(bool ok, const char* what, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw DimensionError(std::string(what) + ": " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

// out(i, j) += sum over p = 0, 1, ... of A(i, p) * B(p, j) with A row-major
// n x k and B row-major k x m. Each element accumulates in ascending p.
void gemm_acc(std::size_t n, std::size_t m, std::size_t k, const double* a, const double* b,
              double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    double* o = out + i * m;
    const double* ar = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      const double* br = b + p * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul", a, b);
  Matrix out(a.rows(), b.cols());
  gemm_acc(a.rows(), b.cols(), a.cols(), a.data(), b.data(), out.data());
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix out(a.cols(), b.cols());
  matmul_tn_acc(a, b, out);
  return out;
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  require(a.rows() == b.rows(), "matmul_tn", a, b);
  require(out.rows() == a.cols() && out.cols() == b.cols(), "matmul_tn output", out, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t p = 0; p < n; ++p) {
    const double* ar = a.data() + p * k;
    const double* br = b.data() + p * m;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* o = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) o[j] += av * br[j];
    }
  }
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_nt", a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Matrix out(n, m);
  if (n < 4) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* ar = a.data() + i * k;
      for (std::size_t j = 0; j < m; ++j) {
        const double* br = b.data() + j * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
        out(i, j) = acc;
      }
    }
    return out;
  }
  // Same per-element summation order, with the inner loop running over
  // contiguous output columns.
  std::vector<double> bt(k * m);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * m + j] = b.data()[j * k + p];
  gemm_acc(n, m, k, a.data(), bt.data(), out.data());
  return out;
}

void add_inplace(Matrix& dst, const Matrix& src) {
  require(dst.rows() == src.rows() && dst.cols() == src.cols(), "add", dst, src);
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

void scale_inplace(Matrix& m, double s) {
  for (double& v : m.values()) v *= s;
}

void add_row_bias(Matrix& m, const Matrix& bias) {
  require(bias.rows() == 1 && bias.cols() == m.cols(), "bias", m, bias);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) r[j] += bias(0, j);
  }
}

void add_column_sums(const Matrix& m, Matrix& out) {
  require(out.rows() == 1 && out.cols() == m.cols(), "column sums", m, out);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) out(0, j) += r[j];
  }
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

void softmax_inplace(std::span<double> z) {
  if (z.empty()) throw DimensionError("softmax of empty sequence");
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

std::vector<double> softmax_row(std::span<const double> z) {
  std::vector<double> out(z.begin(), z.end());
  softmax_inplace(out);
  return out;
}

double sigmoid(double z) {
  // Branch on sign so exp never overflows and 1 - sigmoid(z) == sigmoid(-z)
  // holds to rounding.
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double gelu(double z) { return 0.5 * z * std::erfc(-z / std::numbers::sqrt2); }

double gelu_grad(double z) {
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + z * pdf;
}

double log_sum_exp(std::span<const double> z) {
  if (z.empty()) throw DimensionError("log_sum_exp of empty sequence");
  const double mx = *std::max_element(z.begin(), z.end());
  if (mx == kLogZero) return kLogZero;
  if (std::isinf(mx)) return mx;
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

double log_add(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  const double mx = std::max(a, b);
  return mx + std::log1p(std::exp(std::min(a, b) - mx));
}

Matrix gelu(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = gelu(m.data()[i]);
  return out;
}

Matrix gelu_backward(const Matrix& x, const Matrix& dy) {
  require(x.rows() == dy.rows() && x.cols() == dy.cols(), "gelu_backward", x, dy);
  Matrix dx(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) dx.data()[i] = dy.data()[i] * gelu_grad(x.data()[i]);
  return dx;
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw InputError("Rng::below(0)");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

std::int64_t Rng::between(std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
}

std::uint64_t Rng::derive(std::uint64_t seed, std::uint64_t key) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (key + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Matrix random_normal(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = scale * rng.normal();
  return m;
}

GradCheckResult grad_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> analytic, std::span<const double> x,
                           double eps) {
  if (!(eps > 0.0)) throw InputError("grad_check: eps must be positive");
  if (analytic.size() != x.size()) throw DimensionError("grad_check: gradient size mismatch");
  std::vector<double> probe(x.begin(), x.end());
  GradCheckResult result;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = f(probe);
    probe[i] = orig - eps;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericalError("grad_check: non-finite function value at coordinate " +
                           std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[i];
    const double rel =
        std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (i == 0 || rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_index = i;
      result.analytic_at_worst = a;
      result.numeric_at_worst = numeric;
    }
  }
  return result;
}

}  // namespace cotasr
