#include "dblstm/network.hpp"

#include <cmath>
#include <stdexcept>

namespace dblstm {

std::string to_string(CellKind kind) { return kind == CellKind::lstm ? "lstm" : "tanh"; }

std::string to_string(Direction dir) {
  return dir == Direction::bidirectional ? "bidirectional" : "unidirectional";
}

CellKind parse_cell_kind(const std::string& s) {
  if (s == "lstm") return CellKind::lstm;
  if (s == "tanh") return CellKind::tanh;
  throw std::invalid_argument("unknown cell kind '" + s + "' (expected lstm or tanh)");
}

Direction parse_direction(const std::string& s) {
  if (s == "bidirectional") return Direction::bidirectional;
  if (s == "unidirectional") return Direction::unidirectional;
  throw std::invalid_argument("unknown direction '" + s +
                              "' (expected bidirectional or unidirectional)");
}

void NetworkConfig::validate() const {
  if (input_dim < 1) throw std::invalid_argument("network: input_dim must be >= 1");
  if (levels < 1) throw std::invalid_argument("network: levels must be >= 1");
  if (hidden < 1) throw std::invalid_argument("network: hidden must be >= 1");
}

// ---------------------------------------------------------------------------
// ParamSet

ParamSet::ParamSet(const NetworkConfig& config) : config_(config) {
  config_.validate();
  const std::size_t h = config_.hidden;
  const std::size_t rows = config_.gate_count() * h;
  levels_.resize(config_.levels);
  for (std::size_t n = 0; n < config_.levels; ++n) {
    levels_[n].resize(config_.directions());
    for (auto& c : levels_[n]) {
      c.wx = Matrix(rows, config_.level_input_dim(n));
      c.wh = Matrix(rows, h);
      if (config_.cell == CellKind::lstm) {
        c.peep_i.assign(h, 0.0);
        c.peep_f.assign(h, 0.0);
        c.peep_o.assign(h, 0.0);
      }
      c.bias.assign(rows, 0.0);
    }
  }
  if (config_.output_dim > 0) {
    head_.w.assign(config_.directions(), Matrix(config_.output_dim, h));
    head_.b.assign(config_.output_dim, 0.0);
  }
}

void ParamSet::for_each_tensor(const std::function<void(std::span<double>)>& fn) {
  for (auto& level : levels_) {
    for (auto& c : level) {
      fn(c.wx.values());
      fn(c.wh.values());
      fn(c.peep_i);
      fn(c.peep_f);
      fn(c.peep_o);
      fn(c.bias);
    }
  }
  for (auto& w : head_.w) fn(w.values());
  fn(head_.b);
}

void ParamSet::for_each_tensor(const std::function<void(std::span<const double>)>& fn) const {
  const_cast<ParamSet*>(this)->for_each_tensor(
      [&](std::span<double> s) { fn(std::span<const double>(s)); });
}

std::size_t ParamSet::size() const {
  std::size_t n = 0;
  for_each_tensor([&](std::span<const double> s) { n += s.size(); });
  return n;
}

Vector ParamSet::flatten() const {
  Vector out;
  out.reserve(size());
  for_each_tensor([&](std::span<const double> s) { out.insert(out.end(), s.begin(), s.end()); });
  return out;
}

void ParamSet::unflatten(std::span<const double> flat) {
  const std::size_t expected = size();
  if (flat.size() != expected) {
    throw DimensionError("unflatten: expected " + std::to_string(expected) +
                         " values, got " + std::to_string(flat.size()));
  }
  std::size_t pos = 0;
  for_each_tensor([&](std::span<double> s) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), s.size(), s.begin());
    pos += s.size();
  });
}

void ParamSet::fill_uniform(Rng& rng, double lo, double hi) {
  for_each_tensor([&](std::span<double> s) {
    for (auto& v : s) v = rng.uniform(lo, hi);
  });
}

void ParamSet::set_zero() {
  for_each_tensor([](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
}

std::size_t param_count(const NetworkConfig& config) {
  config.validate();
  const std::size_t h = config.hidden;
  const std::size_t rows = config.gate_count() * h;
  const std::size_t peepholes = config.cell == CellKind::lstm ? 3 * h : 0;
  std::size_t total = 0;
  for (std::size_t n = 0; n < config.levels; ++n) {
    const std::size_t per_dir = rows * (config.level_input_dim(n) + h) + peepholes + rows;
    total += config.directions() * per_dir;
  }
  if (config.output_dim > 0) total += config.output_dim * (config.top_dim() + 1);
  return total;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

struct StepOut {
  std::span<double> i, f, g, s, o, h, tanh_s;
};

// Shared by lstm_step() and forward() so incremental and batch evaluation
// agree bit for bit.
void lstm_step_into(std::span<const double> x, std::span<const double> h_prev,
                    std::span<const double> c_prev, const CellParams& p, StepOut out) {
  const std::size_t hd = p.wh.cols();
  if (h_prev.size() != hd || c_prev.size() != hd || p.wx.cols() != x.size()) {
    throw DimensionError("lstm_step: input " + std::to_string(x.size()) + ", state " +
                         std::to_string(h_prev.size()) + "/" + std::to_string(c_prev.size()) +
                         " incompatible with wx " + p.wx.shape() + ", wh " + p.wh.shape());
  }
  Vector a(p.bias);
  matvec_acc(p.wx, x, a);
  matvec_acc(p.wh, h_prev, a);
  for (std::size_t m = 0; m < hd; ++m) {
    out.i[m] = logistic(a[kInputGate * hd + m] + p.peep_i[m] * c_prev[m]);
    out.f[m] = logistic(a[kForgetGate * hd + m] + p.peep_f[m] * c_prev[m]);
    out.g[m] = std::tanh(a[kCellInput * hd + m]);
    out.s[m] = out.f[m] * c_prev[m] + out.i[m] * out.g[m];
    out.o[m] = logistic(a[kOutputGate * hd + m] + p.peep_o[m] * out.s[m]);
    out.tanh_s[m] = std::tanh(out.s[m]);
    out.h[m] = out.o[m] * out.tanh_s[m];
  }
}

void tanh_step_into(std::span<const double> x, std::span<const double> h_prev,
                    const CellParams& p, std::span<double> h) {
  if (h_prev.size() != p.wh.cols() || p.wx.cols() != x.size()) {
    throw DimensionError("tanh_rnn_step: input " + std::to_string(x.size()) + ", state " +
                         std::to_string(h_prev.size()) + " incompatible with wx " +
                         p.wx.shape() + ", wh " + p.wh.shape());
  }
  Vector a(p.bias);
  matvec_acc(p.wx, x, a);
  matvec_acc(p.wh, h_prev, a);
  for (std::size_t m = 0; m < a.size(); ++m) h[m] = std::tanh(a[m]);
}

// Time index visited at position k of the recursion for direction d.
inline std::size_t time_at(std::size_t k, std::size_t steps, std::size_t dir) {
  return dir == 0 ? k : steps - 1 - k;
}

LayerTrace run_direction(const Matrix& in, const CellParams& p, CellKind kind, std::size_t dir) {
  const std::size_t steps = in.rows();
  const std::size_t hd = p.wh.cols();
  LayerTrace tr;
  tr.h = Matrix(steps, hd);
  const Vector zero(hd, 0.0);
  if (kind == CellKind::lstm) {
    tr.i = tr.f = tr.g = tr.s = tr.o = tr.tanh_s = Matrix(steps, hd);
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t t = time_at(k, steps, dir);
      std::span<const double> h_prev = zero, c_prev = zero;
      if (k > 0) {
        const std::size_t tp = time_at(k - 1, steps, dir);
        h_prev = tr.h.row(tp);
        c_prev = tr.s.row(tp);
      }
      lstm_step_into(in.row(t), h_prev, c_prev, p,
                     {tr.i.row(t), tr.f.row(t), tr.g.row(t), tr.s.row(t), tr.o.row(t),
                      tr.h.row(t), tr.tanh_s.row(t)});
    }
  } else {
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t t = time_at(k, steps, dir);
      std::span<const double> h_prev = zero;
      if (k > 0) h_prev = tr.h.row(time_at(k - 1, steps, dir));
      tanh_step_into(in.row(t), h_prev, p, tr.h.row(t));
    }
  }
  return tr;
}

}  // namespace

LstmStep lstm_step(std::span<const double> x, std::span<const double> h_prev,
                   std::span<const double> c_prev, const CellParams& p) {
  const std::size_t hd = p.wh.cols();
  LstmStep r{Vector(hd), Vector(hd), Vector(hd), Vector(hd), Vector(hd), Vector(hd)};
  Vector tanh_s(hd);
  lstm_step_into(x, h_prev, c_prev, p, {r.i, r.f, r.g, r.s, r.o, r.h, tanh_s});
  return r;
}

Vector tanh_rnn_step(std::span<const double> x, std::span<const double> h_prev,
                     const CellParams& p) {
  Vector h(p.wh.rows());
  tanh_step_into(x, h_prev, p, h);
  return h;
}

ForwardResult forward(const Matrix& x, const ParamSet& params) {
  const NetworkConfig& cfg = params.config();
  if (x.rows() == 0) throw std::invalid_argument("forward: empty input sequence (T = 0)");
  if (x.cols() != cfg.input_dim) {
    throw DimensionError("forward: input has " + std::to_string(x.cols()) +
                         " features, network expects " + std::to_string(cfg.input_dim));
  }
  const std::size_t steps = x.rows();
  const std::size_t hd = cfg.hidden;
  ForwardResult res;
  ActivationCache& cache = res.cache;
  cache.config = cfg;
  cache.steps = steps;
  cache.inputs.push_back(x);
  cache.traces.resize(cfg.levels);
  for (std::size_t n = 0; n < cfg.levels; ++n) {
    const Matrix& in = cache.inputs[n];
    for (std::size_t d = 0; d < cfg.directions(); ++d) {
      cache.traces[n].push_back(run_direction(in, params.cell(n, d), cfg.cell, d));
    }
    // Concatenate [forward; backward] hidden states as the next level's input.
    Matrix out(steps, cfg.top_dim());
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t d = 0; d < cfg.directions(); ++d) {
        const auto src = cache.traces[n][d].h.row(t);
        std::copy(src.begin(), src.end(), out.row(t).begin() + static_cast<std::ptrdiff_t>(d * hd));
      }
    }
    if (n + 1 < cfg.levels) {
      cache.inputs.push_back(std::move(out));
    } else {
      cache.top = std::move(out);
    }
  }
  if (cfg.output_dim > 0) {
    const OutputProjection& head = params.head();
    res.logits = Matrix(steps, cfg.output_dim);
    for (std::size_t t = 0; t < steps; ++t) {
      auto y = res.logits.row(t);
      std::copy(head.b.begin(), head.b.end(), y.begin());
      for (std::size_t d = 0; d < cfg.directions(); ++d) {
        matvec_acc(head.w[d], cache.top.row(t).subspan(d * hd, hd), y);
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Backward

namespace {

void check_cache(const ActivationCache& cache, const ParamSet& params) {
  if (!(cache.config == params.config()) || cache.traces.size() != cache.config.levels ||
      cache.steps == 0) {
    throw std::invalid_argument("backward: activation cache does not match parameters");
  }
}

// BPTT through one direction. d_out is T x H (gradient w.r.t. this
// direction's hidden outputs), d_in (T x in) receives the input gradient.
void bptt_direction(const Matrix& in, const LayerTrace& tr, const CellParams& p, CellKind kind,
                    std::size_t dir, const Matrix& d_out, CellParams& g, Matrix* d_in) {
  const std::size_t steps = in.rows();
  const std::size_t hd = p.wh.cols();
  const std::size_t rows = p.wh.rows();
  Vector dh_rec(hd, 0.0);
  Vector ds_rec(hd, 0.0);
  Vector da(rows);
  for (std::size_t kk = steps; kk-- > 0;) {
    const std::size_t t = time_at(kk, steps, dir);
    const bool has_prev = kk > 0;
    const std::size_t tp = has_prev ? time_at(kk - 1, steps, dir) : 0;
    if (kind == CellKind::lstm) {
      for (std::size_t m = 0; m < hd; ++m) {
        const double dh = d_out(t, m) + dh_rec[m];
        const double i = tr.i(t, m), f = tr.f(t, m), gg = tr.g(t, m), o = tr.o(t, m);
        const double ts = tr.tanh_s(t, m);
        const double s_prev = has_prev ? tr.s(tp, m) : 0.0;
        // h = o tanh(s); the output gate peephole reads s_t, so its
        // pre-activation gradient feeds back into ds at the same step.
        const double da_o = dh * ts * o * (1.0 - o);
        double ds = ds_rec[m] + dh * o * (1.0 - ts * ts) + da_o * p.peep_o[m];
        // s = f s_prev + i g
        const double da_i = ds * gg * i * (1.0 - i);
        const double da_g = ds * i * (1.0 - gg * gg);
        const double da_f = ds * s_prev * f * (1.0 - f);
        // s_prev reaches s directly through f and the i/f gates via peepholes.
        ds_rec[m] = ds * f + da_i * p.peep_i[m] + da_f * p.peep_f[m];
        da[kInputGate * hd + m] = da_i;
        da[kForgetGate * hd + m] = da_f;
        da[kCellInput * hd + m] = da_g;
        da[kOutputGate * hd + m] = da_o;
        g.peep_i[m] += da_i * s_prev;
        g.peep_f[m] += da_f * s_prev;
        g.peep_o[m] += da_o * tr.s(t, m);
      }
    } else {
      for (std::size_t m = 0; m < hd; ++m) {
        const double h = tr.h(t, m);
        da[m] = (d_out(t, m) + dh_rec[m]) * (1.0 - h * h);
      }
    }
    for (std::size_t r = 0; r < rows; ++r) g.bias[r] += da[r];
    outer_acc(g.wx, da, in.row(t));
    std::fill(dh_rec.begin(), dh_rec.end(), 0.0);
    if (has_prev) {
      outer_acc(g.wh, da, tr.h.row(tp));
      matvec_t_acc(p.wh, da, dh_rec);
    }
    if (d_in != nullptr) matvec_t_acc(p.wx, da, d_in->row(t));
  }
}

}  // namespace

Matrix backward_from_top(const ActivationCache& cache, const ParamSet& params,
                         const Matrix& dtop, ParamSet& grad, bool want_input_grad) {
  check_cache(cache, params);
  const NetworkConfig& cfg = cache.config;
  const std::size_t steps = cache.steps;
  const std::size_t hd = cfg.hidden;
  if (dtop.rows() != steps || dtop.cols() != cfg.top_dim()) {
    throw DimensionError("backward: top gradient " + dtop.shape() + " does not match " +
                         std::to_string(steps) + "x" + std::to_string(cfg.top_dim()));
  }
  Matrix d_level_out = dtop;
  Matrix d_input;
  for (std::size_t n = cfg.levels; n-- > 0;) {
    const bool need_in = n > 0 || want_input_grad;
    Matrix d_in = need_in ? Matrix(steps, cfg.level_input_dim(n)) : Matrix();
    for (std::size_t d = 0; d < cfg.directions(); ++d) {
      Matrix d_out(steps, hd);
      for (std::size_t t = 0; t < steps; ++t) {
        const auto src = d_level_out.row(t).subspan(d * hd, hd);
        std::copy(src.begin(), src.end(), d_out.row(t).begin());
      }
      bptt_direction(cache.inputs[n], cache.traces[n][d], params.cell(n, d), cfg.cell, d,
                     d_out, grad.cell(n, d), need_in ? &d_in : nullptr);
    }
    if (n > 0) {
      d_level_out = std::move(d_in);
    } else {
      d_input = std::move(d_in);
    }
  }
  return d_input;
}

BackwardResult backward(const ActivationCache& cache, const ParamSet& params,
                        const Matrix& dlogits, bool want_input_grad) {
  check_cache(cache, params);
  const NetworkConfig& cfg = cache.config;
  if (cfg.output_dim == 0) throw std::invalid_argument("backward: network has no output head");
  if (dlogits.rows() != cache.steps || dlogits.cols() != cfg.output_dim) {
    throw DimensionError("backward: dlogits " + dlogits.shape() + " does not match " +
                         std::to_string(cache.steps) + "x" + std::to_string(cfg.output_dim));
  }
  const std::size_t hd = cfg.hidden;
  BackwardResult res{ParamSet(cfg), Matrix()};
  OutputProjection& gh = res.grad.head();
  Matrix dtop(cache.steps, cfg.top_dim());
  for (std::size_t t = 0; t < cache.steps; ++t) {
    const auto dy = dlogits.row(t);
    for (std::size_t k = 0; k < dy.size(); ++k) gh.b[k] += dy[k];
    for (std::size_t d = 0; d < cfg.directions(); ++d) {
      outer_acc(gh.w[d], dy, cache.top.row(t).subspan(d * hd, hd));
      matvec_t_acc(params.head().w[d], dy, dtop.row(t).subspan(d * hd, hd));
    }
  }
  res.d_input = backward_from_top(cache, params, dtop, res.grad, want_input_grad);
  return res;
}

}  // namespace dblstm
