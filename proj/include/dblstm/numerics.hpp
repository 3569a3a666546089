#pragma once

// Dense linear algebra, activations, log-space arithmetic and the seeded
// generator used by every other module. All reductions run in a fixed
// left-to-right order so results are reproducible bit for bit.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dblstm {

using Vector = std::vector<double>;

inline constexpr double kLogZero = -std::numeric_limits<double>::infinity();

/// Thrown when operand shapes do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical breakdown: every sequence in an epoch failed, non-finite
/// parameters, or a failed gradient check.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  std::string shape() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);

// out += W x
void matvec_acc(const Matrix& w, std::span<const double> x, std::span<double> out);
// out += W^T y
void matvec_t_acc(const Matrix& w, std::span<const double> y, std::span<double> out);
// dw += y x^T
void outer_acc(Matrix& dw, std::span<const double> y, std::span<const double> x);

enum class Activation { logistic, tanh };

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vector activation(std::span<const double> v, Activation kind);

/// log(exp(a) + exp(b)) with -inf handled as log(0).
double log_add(double a, double b);

/// Max-shifted log of the sum of exponentials. Rejects empty input.
double log_sum_exp(std::span<const double> terms);

/// Writes the normalised log-probabilities of `logits` into `out`.
void log_softmax(std::span<const double> logits, std::span<double> out);

/// xoshiro256** seeded by expanding a 64-bit seed through splitmix64.
///
/// uniform01 maps the top 53 bits of the next output onto [0, 1) with a
/// 2^-53 step. gaussian uses the Box-Muller cosine branch and consumes two
/// uniforms per sample, so no hidden cache needs to be checkpointed. The
/// integer stream is identical on every platform; gaussian values depend on
/// the libm implementation of log/cos/sqrt.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  double uniform01();
  double uniform(double lo, double hi);
  double gaussian(double mean, double sigma);
  /// Uniform integer in [0, n) by rejection; n > 0.
  std::uint64_t below(std::uint64_t n);

  const State& state() const { return state_; }
  void set_state(const State& s) { state_ = s; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  State state_{};
};

struct Uniform {
  double lo;
  double hi;
};
struct Gaussian {
  double mean;
  double sigma;
};

Vector sample(Rng& rng, Uniform dist, std::size_t n);
Vector sample(Rng& rng, Gaussian dist, std::size_t n);

/// Fisher-Yates shuffle driven by `rng`.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

bool all_finite(std::span<const double> v);

}  // namespace dblstm
