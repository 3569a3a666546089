#include "dblstm/transducer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dblstm {

void TransducerConfig::validate() const {
  acoustic.validate();
  prediction.validate();
  if (K < 1) throw std::invalid_argument("transducer: K must be >= 1");
  if (acoustic.output_dim != 0 || prediction.output_dim != 0) {
    throw std::invalid_argument("transducer: acoustic and prediction networks must be headless");
  }
  if (prediction.input_dim != K + 1) {
    throw std::invalid_argument("transducer: prediction input width must be K+1 = " +
                                std::to_string(K + 1));
  }
  if (prediction.direction != Direction::unidirectional) {
    throw std::invalid_argument("transducer: prediction network must be unidirectional");
  }
  if (prediction.hidden != acoustic.hidden) {
    throw std::invalid_argument("transducer: prediction width " +
                                std::to_string(prediction.hidden) +
                                " differs from acoustic width " + std::to_string(acoustic.hidden));
  }
}

TransducerConfig make_transducer_config(std::size_t input_dim, std::size_t K, std::size_t hidden,
                                        std::size_t acoustic_levels,
                                        Direction acoustic_direction,
                                        std::size_t prediction_levels) {
  TransducerConfig cfg;
  cfg.K = K;
  cfg.acoustic = NetworkConfig{input_dim, acoustic_levels, hidden, acoustic_direction,
                               CellKind::lstm, 0};
  cfg.prediction = NetworkConfig{K + 1, prediction_levels, hidden, Direction::unidirectional,
                                 CellKind::lstm, 0};
  cfg.validate();
  return cfg;
}

NetworkConfig prediction_pretrain_config(const TransducerConfig& cfg) {
  NetworkConfig p = cfg.prediction;
  p.output_dim = cfg.K + 1;
  return p;
}

// ---------------------------------------------------------------------------
// Model container

TransducerModel::TransducerModel(const TransducerConfig& cfg)
    : config_(cfg), acoustic_(cfg.acoustic), prediction_(cfg.prediction) {
  config_.validate();
  const std::size_t h = cfg.hidden();
  output_.w_l.assign(cfg.acoustic.directions(), Matrix(h, h));
  output_.b_l.assign(h, 0.0);
  output_.w_lh = Matrix(h, h);
  output_.w_pb = Matrix(h, h);
  output_.b_h.assign(h, 0.0);
  output_.w_hy = Matrix(cfg.width(), h);
  output_.b_y.assign(cfg.width(), 0.0);
}

void TransducerModel::for_each_output_tensor(const std::function<void(std::span<double>)>& fn) {
  for (auto& w : output_.w_l) fn(w.values());
  fn(output_.b_l);
  fn(output_.w_lh.values());
  fn(output_.w_pb.values());
  fn(output_.b_h);
  fn(output_.w_hy.values());
  fn(output_.b_y);
}

std::size_t TransducerModel::size() const {
  std::size_t n = acoustic_.size() + prediction_.size();
  const_cast<TransducerModel*>(this)->for_each_output_tensor(
      [&](std::span<double> s) { n += s.size(); });
  return n;
}

Vector TransducerModel::flatten() const {
  Vector out = acoustic_.flatten();
  const Vector pred = prediction_.flatten();
  out.insert(out.end(), pred.begin(), pred.end());
  const_cast<TransducerModel*>(this)->for_each_output_tensor(
      [&](std::span<double> s) { out.insert(out.end(), s.begin(), s.end()); });
  return out;
}

void TransducerModel::unflatten(std::span<const double> flat) {
  if (flat.size() != size()) {
    throw DimensionError("transducer unflatten: expected " + std::to_string(size()) +
                         " values, got " + std::to_string(flat.size()));
  }
  const std::size_t na = acoustic_.size();
  const std::size_t np = prediction_.size();
  acoustic_.unflatten(flat.subspan(0, na));
  prediction_.unflatten(flat.subspan(na, np));
  std::size_t pos = na + np;
  for_each_output_tensor([&](std::span<double> s) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), s.size(), s.begin());
    pos += s.size();
  });
}

void TransducerModel::fill_uniform(Rng& rng, double lo, double hi) {
  acoustic_.fill_uniform(rng, lo, hi);
  prediction_.fill_uniform(rng, lo, hi);
  for_each_output_tensor([&](std::span<double> s) {
    for (auto& v : s) v = rng.uniform(lo, hi);
  });
}

std::size_t transducer_param_count(const TransducerConfig& cfg) {
  cfg.validate();
  const std::size_t h = cfg.hidden();
  const std::size_t output_net = cfg.acoustic.directions() * h * h + h  // linear layer
                                 + 2 * h * h + h                        // tanh layer
                                 + cfg.width() * (h + 1);               // softmax layer
  return param_count(cfg.acoustic) + param_count(cfg.prediction) + output_net;
}

// ---------------------------------------------------------------------------
// Prediction network

Matrix prediction_inputs(std::span<const Label> z, std::size_t K) {
  LabelAlphabet{K}.check_target(z);
  Matrix in(z.size() + 1, K + 1);
  in(0, K) = 1.0;
  for (std::size_t u = 0; u < z.size(); ++u) in(u + 1, static_cast<std::size_t>(z[u])) = 1.0;
  return in;
}

Matrix prediction_forward(std::span<const Label> z, const ParamSet& prediction, std::size_t K) {
  return forward(prediction_inputs(z, K), prediction).cache.top;
}

PredictionState prediction_initial(const ParamSet& prediction) {
  const NetworkConfig& cfg = prediction.config();
  PredictionState st;
  st.h.assign(cfg.levels, Vector(cfg.hidden, 0.0));
  st.c.assign(cfg.levels, cfg.cell == CellKind::lstm ? Vector(cfg.hidden, 0.0) : Vector());
  return st;
}

PredictionState prediction_step(const PredictionState& state, Label symbol,
                                const ParamSet& prediction, std::size_t K) {
  if (symbol < 0 || static_cast<std::size_t>(symbol) > K) {
    throw std::invalid_argument("prediction_step: symbol " + std::to_string(symbol) +
                                " outside [0, " + std::to_string(K) + "]");
  }
  const NetworkConfig& cfg = prediction.config();
  PredictionState next;
  next.h.resize(cfg.levels);
  next.c.resize(cfg.levels);
  Vector in(K + 1, 0.0);
  in[static_cast<std::size_t>(symbol)] = 1.0;
  for (std::size_t n = 0; n < cfg.levels; ++n) {
    const Vector& x = n == 0 ? in : next.h[n - 1];
    if (cfg.cell == CellKind::lstm) {
      LstmStep s = lstm_step(x, state.h[n], state.c[n], prediction.cell(n, 0));
      next.h[n] = std::move(s.h);
      next.c[n] = std::move(s.s);
    } else {
      next.h[n] = tanh_rnn_step(x, state.h[n], prediction.cell(n, 0));
    }
  }
  return next;
}

// ---------------------------------------------------------------------------
// Output network

Matrix acoustic_projection(const Matrix& acoustic_top, const OutputNetParams& out,
                           std::size_t hidden) {
  Matrix l(acoustic_top.rows(), hidden);
  for (std::size_t t = 0; t < acoustic_top.rows(); ++t) {
    auto row = l.row(t);
    std::copy(out.b_l.begin(), out.b_l.end(), row.begin());
    for (std::size_t d = 0; d < out.w_l.size(); ++d) {
      matvec_acc(out.w_l[d], acoustic_top.row(t).subspan(d * hidden, hidden), row);
    }
  }
  return l;
}

namespace {

// a = W_lh l, b = W_pb p + b_h; computed identically for the single-pair and
// tabulated paths so both give the same bits.
Vector lh_term(std::span<const double> l, const OutputNetParams& out) {
  Vector a(out.w_lh.rows(), 0.0);
  matvec_acc(out.w_lh, l, a);
  return a;
}

Vector pb_term(std::span<const double> p, const OutputNetParams& out) {
  Vector b(out.b_h);
  matvec_acc(out.w_pb, p, b);
  return b;
}

void joint_from_terms(std::span<const double> a, std::span<const double> b,
                      const OutputNetParams& out, std::span<double> hidden,
                      std::span<double> log_probs) {
  for (std::size_t m = 0; m < hidden.size(); ++m) hidden[m] = std::tanh(a[m] + b[m]);
  Vector y(out.b_y);
  matvec_acc(out.w_hy, hidden, y);
  log_softmax(y, log_probs);
}

}  // namespace

Vector joint_log_softmax(std::span<const double> l_t, std::span<const double> p_u,
                         const OutputNetParams& out) {
  const Vector a = lh_term(l_t, out);
  const Vector b = pb_term(p_u, out);
  Vector hidden(a.size());
  Vector lp(out.w_hy.rows());
  joint_from_terms(a, b, out, hidden, lp);
  return lp;
}

// ---------------------------------------------------------------------------
// Lattice

namespace {

void check_table(const JointTable& table, std::span<const Label> z) {
  if (table.steps() == 0) throw std::invalid_argument("transducer: empty input sequence");
  if (table.positions() != z.size() + 1) {
    throw DimensionError("transducer: table has " + std::to_string(table.positions()) +
                         " output positions, target needs " + std::to_string(z.size() + 1));
  }
  if (table.width() < 2) throw DimensionError("transducer: table width must be >= 2");
  LabelAlphabet{table.width() - 1}.check_target(z);
}

}  // namespace

TransducerLattice transducer_lattice(const JointTable& table, std::span<const Label> z) {
  check_table(table, z);
  const std::size_t steps = table.steps();
  const std::size_t U = z.size();
  const std::size_t blank = table.width() - 1;
  auto emit = [&](std::size_t t, std::size_t u) {
    return table.at(t, u)[static_cast<std::size_t>(z[u])];
  };
  TransducerLattice lat{Matrix(steps, U + 1, kLogZero), Matrix(steps, U + 1, kLogZero), kLogZero};
  Matrix& a = lat.log_alpha;
  Matrix& b = lat.log_beta;

  a(0, 0) = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t u = 0; u <= U; ++u) {
      if (t == 0 && u == 0) continue;
      double acc = kLogZero;
      if (t > 0) acc = a(t - 1, u) + table.at(t - 1, u)[blank];
      if (u > 0) acc = log_add(acc, a(t, u - 1) + emit(t, u - 1));
      a(t, u) = acc;
    }
  }

  for (std::size_t t = steps; t-- > 0;) {
    for (std::size_t u = U + 1; u-- > 0;) {
      if (t == steps - 1 && u == U) {
        b(t, u) = table.at(t, u)[blank];
        continue;
      }
      double acc = kLogZero;
      if (t + 1 < steps) acc = b(t + 1, u) + table.at(t, u)[blank];
      if (u < U) acc = log_add(acc, b(t, u + 1) + emit(t, u));
      b(t, u) = acc;
    }
  }
  lat.log_prob = a(steps - 1, U) + table.at(steps - 1, U)[blank];
  return lat;
}

double transducer_brute_force(const JointTable& table, std::span<const Label> z) {
  check_table(table, z);
  const std::size_t steps = table.steps();
  const std::size_t U = z.size();
  const std::size_t blank = table.width() - 1;
  // Paths place U emissions among the first T+U-1 moves.
  double paths = 1.0;
  for (std::size_t i = 1; i <= U; ++i) {
    paths = paths * static_cast<double>(steps - 1 + i) / static_cast<double>(i);
  }
  if (paths > 1e6) {
    throw std::invalid_argument("transducer_brute_force: " + std::to_string(paths) +
                                " paths exceeds the 10^6 limit");
  }
  std::vector<double> finished;
  // Explicit stack of (t, u, accumulated log-prob).
  struct Node {
    std::size_t t, u;
    double lp;
  };
  std::vector<Node> stack{{0, 0, 0.0}};
  while (!stack.empty()) {
    const Node n = stack.back();
    stack.pop_back();
    const auto dist = table.at(n.t, n.u);
    if (n.u < U) stack.push_back({n.t, n.u + 1, n.lp + dist[static_cast<std::size_t>(z[n.u])]});
    if (n.t + 1 < steps) {
      stack.push_back({n.t + 1, n.u, n.lp + dist[blank]});
    } else if (n.u == U) {
      finished.push_back(n.lp + dist[blank]);
    }
  }
  return log_sum_exp(finished);
}

// ---------------------------------------------------------------------------
// Full model

TransducerForward transducer_forward(const TransducerModel& model, const Matrix& x,
                                     std::span<const Label> z) {
  const TransducerConfig& cfg = model.config();
  const OutputNetParams& out = model.output();
  const std::size_t h = cfg.hidden();
  TransducerForward f;
  f.acoustic = forward(x, model.acoustic());
  f.prediction = forward(prediction_inputs(z, cfg.K), model.prediction());
  const Matrix& p = f.prediction.cache.top;
  const std::size_t steps = x.rows();
  const std::size_t positions = z.size() + 1;

  f.l = acoustic_projection(f.acoustic.cache.top, out, h);
  f.a = Matrix(steps, h);
  for (std::size_t t = 0; t < steps; ++t) {
    const Vector a = lh_term(f.l.row(t), out);
    std::copy(a.begin(), a.end(), f.a.row(t).begin());
  }
  f.b = Matrix(positions, h);
  for (std::size_t u = 0; u < positions; ++u) {
    const Vector b = pb_term(p.row(u), out);
    std::copy(b.begin(), b.end(), f.b.row(u).begin());
  }
  f.hidden = Matrix(steps * positions, h);
  f.log_probs = JointTable(steps, positions, cfg.width());
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t u = 0; u < positions; ++u) {
      joint_from_terms(f.a.row(t), f.b.row(u), out, f.hidden.row(t * positions + u),
                       f.log_probs.at(t, u));
    }
  }
  return f;
}

TransducerResult transducer_log_prob(const TransducerModel& model, const Matrix& x,
                                     std::span<const Label> z) {
  const TransducerForward f = transducer_forward(model, x, z);
  TransducerResult r;
  r.lattice = transducer_lattice(f.log_probs, z);
  r.log_prob = r.lattice.log_prob;
  return r;
}

TransducerGrad transducer_grad(const TransducerModel& model, const Matrix& x,
                               std::span<const Label> z, bool want_input_grad) {
  const TransducerConfig& cfg = model.config();
  const OutputNetParams& out = model.output();
  const std::size_t h = cfg.hidden();
  const TransducerForward f = transducer_forward(model, x, z);
  const TransducerLattice lat = transducer_lattice(f.log_probs, z);
  if (!std::isfinite(lat.log_prob)) {
    throw ZeroProbabilityError("transducer_grad: target has zero probability under the model");
  }
  const std::size_t steps = x.rows();
  const std::size_t U = z.size();
  const std::size_t positions = U + 1;
  const std::size_t width = cfg.width();
  const std::size_t blank = cfg.K;

  TransducerGrad res{lat.log_prob, TransducerModel(cfg), Matrix()};
  OutputNetParams& g = res.grad.output();
  Matrix d_a(steps, h);
  Matrix d_b(positions, h);
  Vector dy(width);
  Vector dh(h);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t u = 0; u < positions; ++u) {
      const auto lp = f.log_probs.at(t, u);
      // Posterior mass of leaving (t, u) by blank and by emitting z_{u+1}.
      double next_blank = kLogZero;
      if (t + 1 < steps) {
        next_blank = lat.log_beta(t + 1, u);
      } else if (u == U) {
        next_blank = 0.0;
      }
      const double c_blank = std::exp(lat.log_alpha(t, u) + lp[blank] + next_blank - lat.log_prob);
      double c_emit = 0.0;
      if (u < U) {
        c_emit = std::exp(lat.log_alpha(t, u) + lp[static_cast<std::size_t>(z[u])] +
                          lat.log_beta(t, u + 1) - lat.log_prob);
      }
      const double occupancy = c_blank + c_emit;
      if (occupancy == 0.0) continue;
      for (std::size_t k = 0; k < width; ++k) dy[k] = std::exp(lp[k]) * occupancy;
      dy[blank] -= c_blank;
      if (u < U) dy[static_cast<std::size_t>(z[u])] -= c_emit;

      const auto hid = f.hidden.row(t * positions + u);
      for (std::size_t k = 0; k < width; ++k) g.b_y[k] += dy[k];
      outer_acc(g.w_hy, dy, hid);
      std::fill(dh.begin(), dh.end(), 0.0);
      matvec_t_acc(out.w_hy, dy, dh);
      for (std::size_t m = 0; m < h; ++m) {
        const double dpre = dh[m] * (1.0 - hid[m] * hid[m]);
        d_a(t, m) += dpre;
        d_b(u, m) += dpre;
      }
    }
  }

  // tanh layer inputs: a_t = W_lh l_t, b_u = W_pb p_u + b_h
  const Matrix& p = f.prediction.cache.top;
  Matrix d_p(positions, h);
  for (std::size_t u = 0; u < positions; ++u) {
    for (std::size_t m = 0; m < h; ++m) g.b_h[m] += d_b(u, m);
    outer_acc(g.w_pb, d_b.row(u), p.row(u));
    matvec_t_acc(out.w_pb, d_b.row(u), d_p.row(u));
  }
  const Matrix& top = f.acoustic.cache.top;
  Matrix d_top(steps, cfg.acoustic.top_dim());
  Vector dl(h);
  for (std::size_t t = 0; t < steps; ++t) {
    outer_acc(g.w_lh, d_a.row(t), f.l.row(t));
    std::fill(dl.begin(), dl.end(), 0.0);
    matvec_t_acc(out.w_lh, d_a.row(t), dl);
    for (std::size_t m = 0; m < h; ++m) g.b_l[m] += dl[m];
    for (std::size_t d = 0; d < out.w_l.size(); ++d) {
      outer_acc(g.w_l[d], dl, top.row(t).subspan(d * h, h));
      matvec_t_acc(out.w_l[d], dl, d_top.row(t).subspan(d * h, h));
    }
  }
  res.d_input = backward_from_top(f.acoustic.cache, model.acoustic(), d_top,
                                  res.grad.acoustic(), want_input_grad);
  backward_from_top(f.prediction.cache, model.prediction(), d_p, res.grad.prediction(), false);
  return res;
}

TransducerModel assemble_pretrained(const ParamSet& ctc_network, const ParamSet& prediction_net,
                                    std::size_t K, Rng& rng, double init_range) {
  NetworkConfig acfg = ctc_network.config();
  NetworkConfig pcfg = prediction_net.config();
  if (acfg.output_dim != 0 && acfg.output_dim != K + 1) {
    throw std::invalid_argument("assemble_pretrained: CTC network outputs " +
                                std::to_string(acfg.output_dim) + " symbols, expected " +
                                std::to_string(K + 1));
  }
  acfg.output_dim = 0;
  pcfg.output_dim = 0;
  TransducerConfig cfg{acfg, pcfg, K};
  cfg.validate();  // width mismatches surface here
  TransducerModel model(cfg);
  for (std::size_t n = 0; n < acfg.levels; ++n) {
    for (std::size_t d = 0; d < acfg.directions(); ++d) {
      model.acoustic().cell(n, d) = ctc_network.cell(n, d);
    }
  }
  for (std::size_t n = 0; n < pcfg.levels; ++n) {
    model.prediction().cell(n, 0) = prediction_net.cell(n, 0);
  }
  OutputNetParams& o = model.output();
  auto fill = [&](std::span<double> s) {
    for (auto& v : s) v = rng.uniform(-init_range, init_range);
  };
  for (auto& w : o.w_l) fill(w.values());
  fill(o.b_l);
  fill(o.w_lh.values());
  fill(o.w_pb.values());
  fill(o.b_h);
  fill(o.w_hy.values());
  fill(o.b_y);
  return model;
}

}  // namespace dblstm
