#include "dblstm/ctc.hpp"

#include <cmath>
#include <string>

namespace dblstm {

void LabelAlphabet::check_target(std::span<const Label> z) const {
  for (std::size_t u = 0; u < z.size(); ++u) {
    if (z[u] < 0 || static_cast<std::size_t>(z[u]) >= K) {
      throw std::invalid_argument("label " + std::to_string(z[u]) + " at position " +
                                  std::to_string(u) + " is outside [0, " + std::to_string(K) +
                                  ")");
    }
  }
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t t = 0; t < logits.rows(); ++t) log_softmax(logits.row(t), out.row(t));
  return out;
}

LabelSeq collapse_alignment(std::span<const Label> path, Label blank) {
  LabelSeq out;
  Label prev = -1;
  for (Label k : path) {
    if (k != prev && k != blank) out.push_back(k);
    prev = k;
  }
  return out;
}

LabelSeq extended_target(std::span<const Label> z, Label blank) {
  LabelSeq ext;
  ext.reserve(2 * z.size() + 1);
  ext.push_back(blank);
  for (Label k : z) {
    ext.push_back(k);
    ext.push_back(blank);
  }
  return ext;
}

namespace {

LabelAlphabet alphabet_of(const Matrix& log_post) {
  if (log_post.cols() < 2) throw DimensionError("ctc: posterior needs at least 2 columns");
  return LabelAlphabet{log_post.cols() - 1};
}

}  // namespace

CtcLattice ctc_log_prob(const Matrix& log_post, std::span<const Label> z) {
  const LabelAlphabet alpha_set = alphabet_of(log_post);
  alpha_set.check_target(z);
  const std::size_t steps = log_post.rows();
  if (steps == 0) throw std::invalid_argument("ctc: empty posterior sequence");
  const LabelSeq ext = extended_target(z, alpha_set.blank());
  const std::size_t S = ext.size();

  CtcLattice lat{Matrix(steps, S, kLogZero), Matrix(steps, S, kLogZero), kLogZero};
  Matrix& a = lat.log_alpha;
  Matrix& b = lat.log_beta;

  // A skip from s-2 to s is allowed when s holds a label differing from s-2.
  auto can_skip = [&](std::size_t s) { return s >= 2 && ext[s] != ext[s - 2]; };

  a(0, 0) = log_post(0, ext[0]);
  if (S > 1) a(0, 1) = log_post(0, ext[1]);
  for (std::size_t t = 1; t < steps; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = a(t - 1, s);
      if (s >= 1) acc = log_add(acc, a(t - 1, s - 1));
      if (can_skip(s)) acc = log_add(acc, a(t - 1, s - 2));
      a(t, s) = acc == kLogZero ? kLogZero : acc + log_post(t, ext[s]);
    }
  }

  b(steps - 1, S - 1) = 0.0;
  if (S > 1) b(steps - 1, S - 2) = 0.0;
  for (std::size_t t = steps - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = b(t + 1, s) + log_post(t + 1, ext[s]);
      if (s + 1 < S) acc = log_add(acc, b(t + 1, s + 1) + log_post(t + 1, ext[s + 1]));
      if (s + 2 < S && can_skip(s + 2)) {
        acc = log_add(acc, b(t + 1, s + 2) + log_post(t + 1, ext[s + 2]));
      }
      b(t, s) = acc;
    }
  }

  double lp = a(steps - 1, S - 1);
  if (S > 1) lp = log_add(lp, a(steps - 1, S - 2));
  lat.log_prob = lp;
  return lat;
}

Matrix ctc_grad(const Matrix& log_post, std::span<const Label> z, const CtcLattice& lattice) {
  const LabelAlphabet alphabet = alphabet_of(log_post);
  const std::size_t steps = log_post.rows();
  const LabelSeq ext = extended_target(z, alphabet.blank());
  if (lattice.log_alpha.rows() != steps || lattice.log_alpha.cols() != ext.size()) {
    throw DimensionError("ctc_grad: lattice does not match posterior/target");
  }
  if (lattice.log_prob == kLogZero) {
    throw ZeroProbabilityError("ctc_grad: target has zero probability under the model");
  }
  // d(-log p)/dy_t[k] = Pr(k|t) - sum_{s: ext[s]=k} exp(alpha + beta - log p)
  Matrix grad(steps, alphabet.width());
  for (std::size_t t = 0; t < steps; ++t) {
    auto row = grad.row(t);
    for (std::size_t k = 0; k < row.size(); ++k) row[k] = std::exp(log_post(t, k));
    for (std::size_t s = 0; s < ext.size(); ++s) {
      const double occ = lattice.log_alpha(t, s) + lattice.log_beta(t, s);
      if (occ == kLogZero) continue;
      row[static_cast<std::size_t>(ext[s])] -= std::exp(occ - lattice.log_prob);
    }
  }
  return grad;
}

double ctc_brute_force(const Matrix& log_post, std::span<const Label> z) {
  const LabelAlphabet alphabet = alphabet_of(log_post);
  alphabet.check_target(z);
  const std::size_t steps = log_post.rows();
  const std::size_t width = alphabet.width();
  double paths = 1.0;
  for (std::size_t t = 0; t < steps; ++t) paths *= static_cast<double>(width);
  if (paths > 1e6) {
    throw std::invalid_argument("ctc_brute_force: " + std::to_string(paths) +
                                " paths exceeds the 10^6 limit");
  }
  const LabelSeq target(z.begin(), z.end());
  std::vector<Label> path(steps, 0);
  std::vector<double> hits;
  for (;;) {
    if (collapse_alignment(path, alphabet.blank()) == target) {
      double lp = 0.0;
      for (std::size_t t = 0; t < steps; ++t) lp += log_post(t, static_cast<std::size_t>(path[t]));
      hits.push_back(lp);
    }
    // odometer increment
    std::size_t t = 0;
    while (t < steps && ++path[t] == static_cast<Label>(width)) path[t++] = 0;
    if (t == steps) break;
  }
  return hits.empty() ? kLogZero : log_sum_exp(hits);
}

}  // namespace dblstm
