#pragma once

// Connectionist temporal classification: per-frame softmax over K labels plus
// blank, the path-collapsing map, the log-space forward-backward likelihood
// and its gradient with respect to the pre-softmax logits.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "dblstm/numerics.hpp"

namespace dblstm {

using Label = int;
using LabelSeq = std::vector<Label>;

/// K phonemes with ids 0..K-1; blank is K, the last softmax entry.
struct LabelAlphabet {
  std::size_t K = 1;
  Label blank() const { return static_cast<Label>(K); }
  std::size_t width() const { return K + 1; }
  void check_target(std::span<const Label> z) const;
};

/// Raised when a target has no valid alignment (Pr(z|x) = 0), so the loss
/// has no gradient. Training skips such sequences.
class ZeroProbabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-wise log-softmax over all K+1 entries of every row of `logits`.
Matrix log_softmax_rows(const Matrix& logits);

/// Merge adjacent repeats, then drop blanks.
LabelSeq collapse_alignment(std::span<const Label> path, Label blank);

/// Blank-interleaved target (blank, z1, blank, z2, ..., blank).
LabelSeq extended_target(std::span<const Label> z, Label blank);

struct CtcLattice {
  /// log alpha and log beta, T x (2U+1). alpha includes the emission at t;
  /// beta covers frames after t, so alpha + beta is the log mass of all
  /// paths occupying state s at time t.
  Matrix log_alpha;
  Matrix log_beta;
  double log_prob = kLogZero;
};

/// log Pr(z | x) from a T x (K+1) log-posterior matrix. Returns -inf when no
/// alignment exists.
CtcLattice ctc_log_prob(const Matrix& log_post, std::span<const Label> z);

/// Gradient of -log Pr(z|x) with respect to the logits that produced
/// `log_post`. Throws ZeroProbabilityError if the lattice is empty.
Matrix ctc_grad(const Matrix& log_post, std::span<const Label> z, const CtcLattice& lattice);

/// Reference likelihood by enumerating every (K+1)^T path. Rejects
/// instances with more than 10^6 paths.
double ctc_brute_force(const Matrix& log_post, std::span<const Label> z);

}  // namespace dblstm
