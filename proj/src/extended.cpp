#include "dblstm/extended.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace dblstm {

namespace {

constexpr Ext kExtLogZero = -std::numeric_limits<Ext>::infinity();

Ext lse(Ext a, Ext b) {
  if (a == kExtLogZero) return b;
  if (b == kExtLogZero) return a;
  const Ext m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

Ext sigmoid(Ext v) { return 1.0L / (1.0L + std::exp(-v)); }

// Walks the flat vector in storage order.
class Reader {
 public:
  explicit Reader(std::span<const Ext> w) : w_(w) {}
  std::span<const Ext> take(std::size_t n) {
    if (pos_ + n > w_.size()) throw std::invalid_argument("extended: parameter vector too short");
    auto s = w_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t consumed() const { return pos_; }

 private:
  std::span<const Ext> w_;
  std::size_t pos_ = 0;
};

struct Cell {
  std::span<const Ext> wx, wh, pi, pf, po, b;
};

ExtMatrix run_direction(const ExtMatrix& in, const Cell& c, CellKind kind, std::size_t H,
                        bool reverse) {
  const std::size_t T = in.rows, D = in.cols, G = kind == CellKind::lstm ? 4 : 1;
  ExtMatrix out(T, H);
  std::vector<Ext> h(H, 0.0L), s(H, 0.0L), a(G * H);
  for (std::size_t k = 0; k < T; ++k) {
    const std::size_t t = reverse ? T - 1 - k : k;
    for (std::size_t r = 0; r < G * H; ++r) {
      Ext v = c.b[r];
      for (std::size_t j = 0; j < D; ++j) v += c.wx[r * D + j] * in(t, j);
      for (std::size_t j = 0; j < H; ++j) v += c.wh[r * H + j] * h[j];
      a[r] = v;
    }
    for (std::size_t m = 0; m < H; ++m) {
      if (kind == CellKind::lstm) {
        const Ext ig = sigmoid(a[m] + c.pi[m] * s[m]);
        const Ext fg = sigmoid(a[H + m] + c.pf[m] * s[m]);
        const Ext g = std::tanh(a[2 * H + m]);
        s[m] = fg * s[m] + ig * g;
        const Ext og = sigmoid(a[3 * H + m] + c.po[m] * s[m]);
        h[m] = og * std::tanh(s[m]);
      } else {
        h[m] = std::tanh(a[m]);
      }
      out(t, m) = h[m];
    }
  }
  return out;
}

ExtMatrix run_stack(const NetworkConfig& cfg, Reader& r, const ExtMatrix& x) {
  if (x.cols != cfg.input_dim) throw std::invalid_argument("extended: input width mismatch");
  const std::size_t H = cfg.hidden, G = cfg.gate_count(), dirs = cfg.directions();
  ExtMatrix in = x;
  for (std::size_t n = 0; n < cfg.levels; ++n) {
    const std::size_t D = cfg.level_input_dim(n);
    ExtMatrix next(x.rows, dirs * H);
    for (std::size_t d = 0; d < dirs; ++d) {
      Cell c;
      c.wx = r.take(G * H * D);
      c.wh = r.take(G * H * H);
      if (cfg.cell == CellKind::lstm) {
        c.pi = r.take(H);
        c.pf = r.take(H);
        c.po = r.take(H);
      }
      c.b = r.take(G * H);
      const ExtMatrix h = run_direction(in, c, cfg.cell, H, d == 1);
      for (std::size_t t = 0; t < x.rows; ++t) {
        for (std::size_t m = 0; m < H; ++m) next(t, d * H + m) = h(t, m);
      }
    }
    in = std::move(next);
  }
  if (cfg.output_dim == 0) return in;
  std::vector<std::span<const Ext>> w;
  for (std::size_t d = 0; d < dirs; ++d) w.push_back(r.take(cfg.output_dim * H));
  const auto b = r.take(cfg.output_dim);
  ExtMatrix y(x.rows, cfg.output_dim);
  for (std::size_t t = 0; t < x.rows; ++t) {
    for (std::size_t k = 0; k < cfg.output_dim; ++k) {
      Ext v = b[k];
      for (std::size_t d = 0; d < dirs; ++d) {
        for (std::size_t m = 0; m < H; ++m) v += w[d][k * H + m] * in(t, d * H + m);
      }
      y(t, k) = v;
    }
  }
  return y;
}

std::vector<Ext> log_softmax(std::span<const Ext> y) {
  const Ext m = *std::max_element(y.begin(), y.end());
  Ext sum = 0.0L;
  for (Ext v : y) sum += std::exp(v - m);
  const Ext norm = m + std::log(sum);
  std::vector<Ext> out(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) out[k] = y[k] - norm;
  return out;
}

void check_all_read(const Reader& r, std::span<const Ext> params) {
  if (r.consumed() != params.size()) {
    throw std::invalid_argument("extended: " + std::to_string(params.size()) +
                                " parameters given, architecture uses " +
                                std::to_string(r.consumed()));
  }
}

}  // namespace

ExtMatrix::ExtMatrix(const Matrix& m) : rows(m.rows()), cols(m.cols()) {
  data.assign(m.values().begin(), m.values().end());
}

std::vector<Ext> to_extended(std::span<const double> v) { return {v.begin(), v.end()}; }

ExtMatrix extended_forward(const NetworkConfig& cfg, std::span<const Ext> params,
                           const ExtMatrix& x) {
  Reader r(params);
  ExtMatrix y = run_stack(cfg, r, x);
  check_all_read(r, params);
  return y;
}

Ext extended_ctc_log_prob(const ExtMatrix& logits, std::span<const Label> z) {
  const std::size_t T = logits.rows, blank = logits.cols - 1;
  std::vector<std::size_t> ext{blank};
  for (Label l : z) {
    ext.push_back(static_cast<std::size_t>(l));
    ext.push_back(blank);
  }
  const std::size_t S = ext.size();
  std::vector<Ext> alpha(S, kExtLogZero), prev(S);
  for (std::size_t t = 0; t < T; ++t) {
    const auto lp = log_softmax({logits.data.data() + t * logits.cols, logits.cols});
    prev.swap(alpha);
    for (std::size_t s = 0; s < S; ++s) {
      Ext v = kExtLogZero;
      if (t == 0) {
        if (s < 2) v = 0.0L;
      } else {
        v = prev[s];
        if (s >= 1) v = lse(v, prev[s - 1]);
        if (s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]) v = lse(v, prev[s - 2]);
      }
      alpha[s] = v == kExtLogZero ? v : v + lp[ext[s]];
    }
  }
  if (T == 0) return z.empty() ? 0.0L : kExtLogZero;
  return S == 1 ? alpha[0] : lse(alpha[S - 1], alpha[S - 2]);
}

Ext extended_transducer_log_prob(const TransducerConfig& cfg, std::span<const Ext> params,
                                 const ExtMatrix& x, std::span<const Label> z) {
  const std::size_t H = cfg.hidden(), K = cfg.K, W = K + 1, T = x.rows, U = z.size();
  Reader r(params);
  const ExtMatrix top = run_stack(cfg.acoustic, r, x);
  ExtMatrix onehot(U + 1, W);
  onehot(0, K) = 1.0L;
  for (std::size_t u = 0; u < U; ++u) onehot(u + 1, static_cast<std::size_t>(z[u])) = 1.0L;
  const ExtMatrix p = run_stack(cfg.prediction, r, onehot);

  const std::size_t dirs = cfg.acoustic.directions();
  std::vector<std::span<const Ext>> w_l;
  for (std::size_t d = 0; d < dirs; ++d) w_l.push_back(r.take(H * H));
  const auto b_l = r.take(H), w_lh = r.take(H * H), w_pb = r.take(H * H), b_h = r.take(H);
  const auto w_hy = r.take(W * H), b_y = r.take(W);
  check_all_read(r, params);

  ExtMatrix a(T, H);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<Ext> l(H);
    for (std::size_t i = 0; i < H; ++i) {
      Ext v = b_l[i];
      for (std::size_t d = 0; d < dirs; ++d) {
        for (std::size_t j = 0; j < H; ++j) v += w_l[d][i * H + j] * top(t, d * H + j);
      }
      l[i] = v;
    }
    for (std::size_t i = 0; i < H; ++i) {
      Ext v = 0.0L;
      for (std::size_t j = 0; j < H; ++j) v += w_lh[i * H + j] * l[j];
      a(t, i) = v;
    }
  }
  ExtMatrix b(U + 1, H);
  for (std::size_t u = 0; u <= U; ++u) {
    for (std::size_t i = 0; i < H; ++i) {
      Ext v = b_h[i];
      for (std::size_t j = 0; j < H; ++j) v += w_pb[i * H + j] * p(u, j);
      b(u, i) = v;
    }
  }
  auto joint = [&](std::size_t t, std::size_t u) {
    std::vector<Ext> h(H), y(W);
    for (std::size_t i = 0; i < H; ++i) h[i] = std::tanh(a(t, i) + b(u, i));
    for (std::size_t k = 0; k < W; ++k) {
      Ext v = b_y[k];
      for (std::size_t j = 0; j < H; ++j) v += w_hy[k * H + j] * h[j];
      y[k] = v;
    }
    return log_softmax(y);
  };

  if (T == 0) return kExtLogZero;
  ExtMatrix alpha(T, U + 1);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      Ext v = t == 0 && u == 0 ? 0.0L : kExtLogZero;
      if (t > 0) v = lse(v, alpha(t - 1, u) + joint(t - 1, u)[K]);
      if (u > 0) v = lse(v, alpha(t, u - 1) + joint(t, u - 1)[static_cast<std::size_t>(z[u - 1])]);
      alpha(t, u) = v;
    }
  }
  return alpha(T - 1, U) + joint(T - 1, U)[K];
}

Ext extended_log_prob(const ModelSpec& spec, std::span<const Ext> params, const ExtMatrix& x,
                      std::span<const Label> z) {
  switch (spec.kind) {
    case ModelKind::ctc:
      return extended_ctc_log_prob(extended_forward(spec.network, params, x), z);
    case ModelKind::transducer:
      return extended_transducer_log_prob(spec.transducer, params, x, z);
    case ModelKind::prediction: {
      const std::size_t K = spec.network.output_dim - 1;
      ExtMatrix onehot(z.size() + 1, K + 1);
      onehot(0, K) = 1.0L;
      for (std::size_t u = 0; u < z.size(); ++u) onehot(u + 1, static_cast<std::size_t>(z[u])) = 1.0L;
      const ExtMatrix y = extended_forward(spec.network, params, onehot);
      Ext total = 0.0L;
      for (std::size_t u = 0; u <= z.size(); ++u) {
        const auto lp = log_softmax({y.data.data() + u * y.cols, y.cols});
        total += lp[u < z.size() ? static_cast<std::size_t>(z[u]) : K];
      }
      return total;
    }
  }
  throw std::invalid_argument("extended_log_prob: unknown model kind");
}

}  // namespace dblstm
