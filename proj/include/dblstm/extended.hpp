#pragma once

// Long-double re-evaluation of every model's log-likelihood, written
// independently of the double kernels and read straight from the flattened
// parameter vector. Central differences taken here carry about 1e-14 of
// rounding noise instead of the ~1e-10 of the double path, which is what
// the finite-difference oracle in gradient_check() needs.

#include <cstddef>
#include <span>
#include <vector>

#include "dblstm/models.hpp"

namespace dblstm {

using Ext = long double;

struct ExtMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<Ext> data;

  ExtMatrix() = default;
  ExtMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0L) {}
  explicit ExtMatrix(const Matrix& m);

  Ext& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  Ext operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

std::vector<Ext> to_extended(std::span<const double> v);

/// Logits (T x output_dim), or the top hidden sequence for a headless stack.
ExtMatrix extended_forward(const NetworkConfig& cfg, std::span<const Ext> params,
                           const ExtMatrix& x);

/// log Pr(z | x) from unnormalised logits whose last column is the blank.
Ext extended_ctc_log_prob(const ExtMatrix& logits, std::span<const Label> z);

Ext extended_transducer_log_prob(const TransducerConfig& cfg, std::span<const Ext> params,
                                 const ExtMatrix& x, std::span<const Label> z);

/// Same quantity as instantiate(spec)->log_prob(x, z) with parameters `params`.
Ext extended_log_prob(const ModelSpec& spec, std::span<const Ext> params, const ExtMatrix& x,
                      std::span<const Label> z);

}  // namespace dblstm
