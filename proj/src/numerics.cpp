#include "dblstm/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace dblstm {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::string Matrix::shape() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + a.shape() + " by " + b.shape());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

void matvec_acc(const Matrix& w, std::span<const double> x, std::span<double> out) {
  if (w.cols() != x.size() || w.rows() != out.size()) {
    throw DimensionError("matvec: matrix " + w.shape() + " with input " +
                         std::to_string(x.size()) + " and output " +
                         std::to_string(out.size()));
  }
  const double* row = w.values().data();
  const std::size_t n = w.cols();
  for (std::size_t r = 0; r < w.rows(); ++r, row += n) {
    double acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) acc += row[c] * x[c];
    out[r] += acc;
  }
}

void matvec_t_acc(const Matrix& w, std::span<const double> y, std::span<double> out) {
  if (w.rows() != y.size() || w.cols() != out.size()) {
    throw DimensionError("matvec_t: matrix " + w.shape() + " with input " +
                         std::to_string(y.size()) + " and output " +
                         std::to_string(out.size()));
  }
  const double* row = w.values().data();
  const std::size_t n = w.cols();
  for (std::size_t r = 0; r < w.rows(); ++r, row += n) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    for (std::size_t c = 0; c < n; ++c) out[c] += row[c] * yr;
  }
}

void outer_acc(Matrix& dw, std::span<const double> y, std::span<const double> x) {
  if (dw.rows() != y.size() || dw.cols() != x.size()) {
    throw DimensionError("outer: matrix " + dw.shape() + " with vectors " +
                         std::to_string(y.size()) + " and " + std::to_string(x.size()));
  }
  double* row = dw.values().data();
  const std::size_t n = dw.cols();
  for (std::size_t r = 0; r < dw.rows(); ++r, row += n) {
    const double yr = y[r];
    if (yr == 0.0) continue;
    for (std::size_t c = 0; c < n; ++c) row[c] += yr * x[c];
  }
}

Vector activation(std::span<const double> v, Activation kind) {
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = kind == Activation::logistic ? logistic(v[i]) : std::tanh(v[i]);
  }
  return out;
}

double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == kLogZero) return a;
  return a + std::log1p(std::exp(b - a));
}

double log_sum_exp(std::span<const double> terms) {
  if (terms.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  const double m = *std::max_element(terms.begin(), terms.end());
  if (m == kLogZero) return kLogZero;
  if (std::isinf(m)) return m;
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - m);
  return m + std::log(acc);
}

void log_softmax(std::span<const double> logits, std::span<double> out) {
  const double z = log_sum_exp(logits);
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - z;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t s = seed;
  for (auto& word : state_) word = splitmix64(s);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) {
  if (!(lo < hi)) throw std::invalid_argument("uniform: requires lo < hi");
  return lo + (hi - lo) * uniform01();
}

double Rng::gaussian(double mean, double sigma) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("gaussian: requires sigma >= 0");
  // 1 - u lies in (0, 1], keeping the logarithm finite.
  const double u1 = 1.0 - uniform01();
  const double u2 = uniform01();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  return mean + sigma * radius * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("below: n must be positive");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

Vector sample(Rng& rng, Uniform dist, std::size_t n) {
  if (!(dist.lo < dist.hi)) throw std::invalid_argument("sample: uniform requires lo < hi");
  Vector out(n);
  for (auto& v : out) v = rng.uniform(dist.lo, dist.hi);
  return out;
}

Vector sample(Rng& rng, Gaussian dist, std::size_t n) {
  if (!(dist.sigma >= 0.0)) throw std::invalid_argument("sample: gaussian requires sigma >= 0");
  Vector out(n);
  for (auto& v : out) v = rng.gaussian(dist.mean, dist.sigma);
  return out;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace dblstm
