#include <gtest/gtest.h>

#include <cmath>

#include "dblstm/network.hpp"
#include "dblstm/training.hpp"
#include "test_util.hpp"

using namespace dblstm;
using dblstm::testutil::random_matrix;
using dblstm::testutil::random_params;
using dblstm::testutil::describe;
using dblstm::testutil::ext_matrix;
using dblstm::testutil::extended_check;

namespace {

NetworkConfig lstm_config(std::size_t D, std::size_t N, std::size_t H, Direction dir,
                          std::size_t out) {
  return NetworkConfig{D, N, H, dir, CellKind::lstm, out};
}

CellParams zero_cell(std::size_t in, std::size_t H) {
  ParamSet p(lstm_config(in, 1, H, Direction::unidirectional, 0));
  return p.cell(0, 0);
}

// Scalar re-derivation of one peephole LSTM step, written independently of
// the library's stacked-matrix layout helpers.
struct ScalarStep {
  std::vector<double> i, f, s, o, h;
};

ScalarStep scalar_lstm(const std::vector<double>& x, const std::vector<double>& hp,
                       const std::vector<double>& cp, const CellParams& p) {
  const std::size_t H = hp.size();
  auto pre = [&](std::size_t gate, std::size_t m) {
    const std::size_t r = gate * H + m;
    double a = p.bias[r];
    for (std::size_t j = 0; j < x.size(); ++j) a += p.wx(r, j) * x[j];
    for (std::size_t j = 0; j < H; ++j) a += p.wh(r, j) * hp[j];
    return a;
  };
  auto sig = [](double a) { return 1.0 / (1.0 + std::exp(-a)); };
  ScalarStep st;
  for (std::size_t m = 0; m < H; ++m) {
    const double i = sig(pre(0, m) + p.peep_i[m] * cp[m]);
    const double f = sig(pre(1, m) + p.peep_f[m] * cp[m]);
    const double s = f * cp[m] + i * std::tanh(pre(2, m));
    const double o = sig(pre(3, m) + p.peep_o[m] * s);
    st.i.push_back(i);
    st.f.push_back(f);
    st.s.push_back(s);
    st.o.push_back(o);
    st.h.push_back(o * std::tanh(s));
  }
  return st;
}

// Reverses time in x.
Matrix reversed(const Matrix& x) {
  Matrix r(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    for (std::size_t d = 0; d < x.cols(); ++d) r(t, d) = x(x.rows() - 1 - t, d);
  }
  return r;
}

// Swaps the two column blocks [a | b] -> [b | a] of a matrix whose input is
// a concatenated bidirectional sequence.
Matrix swap_column_halves(const Matrix& w) {
  const std::size_t half = w.cols() / 2;
  Matrix r(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) r(i, j) = w(i, (j + half) % w.cols());
  }
  return r;
}

}  // namespace

TEST(LstmStep, ZeroParamsZeroState) {
  const CellParams p = zero_cell(2, 3);
  const LstmStep st = lstm_step(Vector{0.7, -1.1}, Vector(3, 0.0), Vector(3, 0.0), p);
  for (std::size_t m = 0; m < 3; ++m) {
    EXPECT_EQ(st.i[m], 0.5);
    EXPECT_EQ(st.f[m], 0.5);
    EXPECT_EQ(st.o[m], 0.5);
    EXPECT_EQ(st.s[m], 0.0);
    EXPECT_EQ(st.h[m], 0.0);
  }
}

TEST(LstmStep, ZeroParamsHalvesCell) {
  const CellParams p = zero_cell(2, 3);
  const Vector c{0.8, -2.0, 5.0};
  const LstmStep st = lstm_step(Vector{1.0, 1.0}, Vector{0.1, 0.2, 0.3}, c, p);
  for (std::size_t m = 0; m < 3; ++m) {
    EXPECT_EQ(st.s[m], 0.5 * c[m]);
    EXPECT_EQ(st.h[m], 0.5 * std::tanh(0.5 * c[m]));
  }
}

TEST(LstmStep, SaturatedGatesPreserveMemoryExactly) {
  CellParams p = zero_cell(2, 3);
  for (std::size_t m = 0; m < 3; ++m) {
    p.bias[kForgetGate * 3 + m] = 500.0;
    p.bias[kInputGate * 3 + m] = -500.0;
  }
  const Vector c{0.8, -2.0, 1e-3};
  const LstmStep st = lstm_step(Vector{0.3, -0.4}, Vector{0.1, 0.2, 0.3}, c, p);
  for (std::size_t m = 0; m < 3; ++m) {
    EXPECT_EQ(st.f[m], 1.0);
    EXPECT_LT(st.i[m], 1e-200);
    EXPECT_EQ(st.s[m], c[m]);
  }
}

TEST(LstmStep, MatchesScalarRecomputation) {
  Rng rng(21);
  for (int rep = 0; rep < 10; ++rep) {
    ParamSet ps = random_params(lstm_config(3, 1, 4, Direction::unidirectional, 0), rng, 1.0);
    const CellParams& p = ps.cell(0, 0);
    const Vector x = sample(rng, Uniform{-1, 1}, 3);
    const Vector hp = sample(rng, Uniform{-1, 1}, 4);
    const Vector cp = sample(rng, Uniform{-2, 2}, 4);
    const LstmStep st = lstm_step(x, hp, cp, p);
    const ScalarStep ref = scalar_lstm(x, hp, cp, p);
    for (std::size_t m = 0; m < 4; ++m) {
      EXPECT_NEAR(st.i[m], ref.i[m], 1e-15);
      EXPECT_NEAR(st.f[m], ref.f[m], 1e-15);
      EXPECT_NEAR(st.s[m], ref.s[m], 1e-14);
      EXPECT_NEAR(st.o[m], ref.o[m], 1e-15);
      EXPECT_NEAR(st.h[m], ref.h[m], 1e-14);
    }
  }
}

TEST(LstmStep, OutputPeepholeReadsCurrentCell) {
  // Only w_co is nonzero: the output gate must see s_t, not c_prev.
  CellParams p = zero_cell(1, 1);
  p.peep_o[0] = 2.0;
  const LstmStep st = lstm_step(Vector{0.0}, Vector{0.0}, Vector{1.0}, p);
  EXPECT_EQ(st.s[0], 0.5);
  EXPECT_DOUBLE_EQ(st.o[0], logistic(2.0 * 0.5));
}

TEST(LstmStep, DimensionMismatchRejected) {
  const CellParams p = zero_cell(2, 3);
  EXPECT_THROW(lstm_step(Vector{1.0}, Vector(3, 0.0), Vector(3, 0.0), p), DimensionError);
  EXPECT_THROW(lstm_step(Vector{1.0, 2.0}, Vector(2, 0.0), Vector(3, 0.0), p), DimensionError);
}

TEST(TanhStep, ZeroAndBiasOnly) {
  ParamSet ps(NetworkConfig{2, 1, 3, Direction::unidirectional, CellKind::tanh, 0});
  CellParams& p = ps.cell(0, 0);
  for (double v : tanh_rnn_step(Vector{1, 2}, Vector{0.5, 0.5, 0.5}, p)) EXPECT_EQ(v, 0.0);
  p.bias = {0.3, -0.2, 1.5};
  const Vector h = tanh_rnn_step(Vector{1, 2}, Vector{0.5, 0.5, 0.5}, p);
  for (std::size_t m = 0; m < 3; ++m) EXPECT_EQ(h[m], std::tanh(p.bias[m]));
}

TEST(TanhStep, MatchesScalarRecomputation) {
  Rng rng(22);
  ParamSet ps = random_params(NetworkConfig{3, 1, 4, Direction::unidirectional, CellKind::tanh, 0},
                              rng, 1.0);
  const CellParams& p = ps.cell(0, 0);
  const Vector x = sample(rng, Uniform{-1, 1}, 3);
  const Vector hp = sample(rng, Uniform{-1, 1}, 4);
  const Vector h = tanh_rnn_step(x, hp, p);
  for (std::size_t m = 0; m < 4; ++m) {
    double a = p.bias[m];
    for (std::size_t j = 0; j < 3; ++j) a += p.wx(m, j) * x[j];
    for (std::size_t j = 0; j < 4; ++j) a += p.wh(m, j) * hp[j];
    EXPECT_NEAR(h[m], std::tanh(a), 1e-15);
  }
}

TEST(Forward, ZeroParamsGiveZeroLogits) {
  ParamSet p(lstm_config(3, 1, 4, Direction::bidirectional, 5));
  Rng rng(23);
  const ForwardResult fr = forward(random_matrix(rng, 6, 3), p);
  EXPECT_EQ(fr.logits, Matrix(6, 5));
}

TEST(Forward, RejectsEmptyAndMismatchedInput) {
  ParamSet p(lstm_config(3, 1, 4, Direction::bidirectional, 5));
  EXPECT_THROW(forward(Matrix(0, 3), p), std::invalid_argument);
  EXPECT_THROW(forward(Matrix(4, 2), p), DimensionError);
}

TEST(Forward, UnidirectionalIsCausal) {
  Rng rng(24);
  for (CellKind cell : {CellKind::lstm, CellKind::tanh}) {
    const ParamSet p = random_params(NetworkConfig{3, 2, 4, Direction::unidirectional, cell, 3}, rng);
    Matrix x = random_matrix(rng, 8, 3);
    const Matrix before = forward(x, p).logits;
    const std::size_t t = 4;
    for (std::size_t s = t + 1; s < 8; ++s) {
      for (std::size_t d = 0; d < 3; ++d) x(s, d) += rng.uniform(-3, 3);
    }
    const Matrix after = forward(x, p).logits;
    for (std::size_t s = 0; s <= t; ++s) {
      for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(before(s, k), after(s, k));
    }
    EXPECT_NE(before(7, 0), after(7, 0));
  }
}

TEST(Forward, BidirectionalTimeReversalSymmetry) {
  Rng rng(25);
  for (std::size_t levels : {1, 2, 3}) {
    const NetworkConfig cfg = lstm_config(3, levels, 4, Direction::bidirectional, 5);
    const ParamSet p = random_params(cfg, rng);
    ParamSet swapped(cfg);
    for (std::size_t n = 0; n < levels; ++n) {
      for (std::size_t d = 0; d < 2; ++d) {
        CellParams c = p.cell(n, 1 - d);
        if (n > 0) c.wx = swap_column_halves(c.wx);
        swapped.cell(n, d) = c;
      }
    }
    swapped.head().w = {p.head().w[1], p.head().w[0]};
    swapped.head().b = p.head().b;

    const Matrix x = random_matrix(rng, 7, 3);
    const Matrix y = forward(x, p).logits;
    const Matrix yr = forward(reversed(x), swapped).logits;
    EXPECT_LT(testutil::max_abs_diff(reversed(yr), y), 1e-12) << "levels " << levels;
  }
}

TEST(Forward, GatesInsideOpenUnitIntervalAndCellsFiniteOverLongSequences) {
  Rng rng(26);
  const ParamSet p = random_params(lstm_config(2, 2, 3, Direction::bidirectional, 2), rng, 1.0);
  const ForwardResult fr = forward(random_matrix(rng, 1000, 2, 3.0), p);
  for (const auto& level : fr.cache.traces) {
    for (const LayerTrace& tr : level) {
      for (const Matrix* g : {&tr.i, &tr.f, &tr.o}) {
        for (double v : g->values()) {
          EXPECT_GT(v, 0.0);
          EXPECT_LT(v, 1.0);
        }
      }
      EXPECT_TRUE(all_finite(tr.s.values()));
    }
  }
}

TEST(ParamSet, FlattenUnflattenRoundTrip) {
  Rng rng(27);
  for (const NetworkConfig& cfg :
       {lstm_config(3, 2, 4, Direction::bidirectional, 5),
        lstm_config(2, 1, 3, Direction::unidirectional, 0),
        NetworkConfig{4, 3, 2, Direction::bidirectional, CellKind::tanh, 3}}) {
    const ParamSet p = random_params(cfg, rng);
    const Vector flat = p.flatten();
    EXPECT_EQ(flat.size(), param_count(cfg));
    ParamSet q(cfg);
    q.unflatten(flat);
    EXPECT_EQ(q, p);
    EXPECT_EQ(q.flatten(), flat);
    EXPECT_THROW(q.unflatten(Vector(flat.size() + 1)), DimensionError);
  }
}

TEST(ParamSet, FlatteningOrderIsFrozen) {
  // D=1, H=1, unidirectional: wx (4), wh (4), peep i/f/o, bias (4), head w, b.
  ParamSet p(lstm_config(1, 1, 1, Direction::unidirectional, 1));
  p.cell(0, 0).wx(kForgetGate, 0) = 1.0;
  p.cell(0, 0).wh(kOutputGate, 0) = 2.0;
  p.cell(0, 0).peep_f[0] = 3.0;
  p.cell(0, 0).bias[kCellInput] = 4.0;
  p.head().w[0](0, 0) = 5.0;
  p.head().b[0] = 6.0;
  const Vector expected{0, 1, 0, 0, 0, 0, 0, 2, 0, 3, 0, 0, 0, 4, 0, 5, 6};
  EXPECT_EQ(p.flatten(), expected);
}

TEST(ParamCount, EnumeratedTensorSizes) {
  // D=2, H=3, unidirectional LSTM, output 2:
  //   wx 12x2, wh 12x3, three peepholes of 3, bias 12, head 2x3 + 2.
  const std::size_t enumerated = 12 * 2 + 12 * 3 + 3 * 3 + 12 + 2 * 3 + 2;
  EXPECT_EQ(param_count(lstm_config(2, 1, 3, Direction::unidirectional, 2)), enumerated);
  EXPECT_EQ(enumerated, 89u);
}

TEST(ParamCount, TimitConfigurationsRoundToPublished) {
  const std::size_t one = param_count(lstm_config(123, 1, 250, Direction::bidirectional, 62));
  const std::size_t three = param_count(lstm_config(123, 3, 250, Direction::bidirectional, 62));
  const std::size_t wide = param_count(lstm_config(123, 1, 622, Direction::bidirectional, 62));
  EXPECT_EQ(one, 780562u);
  EXPECT_EQ(three, 3787562u);
  EXPECT_EQ(wide, 3793018u);
  EXPECT_NEAR(static_cast<double>(one) / 1e6, 0.8, 0.05);
  EXPECT_NEAR(static_cast<double>(three) / 1e6, 3.8, 0.05);
  EXPECT_NEAR(static_cast<double>(wide) / 1e6, 3.8, 0.05);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(28);
  const ParamSet p = random_params(lstm_config(3, 2, 4, Direction::bidirectional, 5), rng);
  const Matrix x = random_matrix(rng, 5, 3);
  const ForwardResult fr = forward(x, p);
  const BackwardResult br = backward(fr.cache, p, Matrix(5, 5), true);
  for (double g : br.grad.flatten()) EXPECT_EQ(g, 0.0);
  for (double g : br.d_input.values()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, MatchesFiniteDifferencesOnRandomSmallNets) {
  Rng rng(29);
  for (int rep = 0; rep < 6; ++rep) {
    const std::size_t D = 1 + rng.below(4), H = 1 + rng.below(5), N = 1 + rng.below(3);
    const std::size_t T = 1 + rng.below(6), out = 1 + rng.below(4);
    const Direction dir = rng.below(2) ? Direction::bidirectional : Direction::unidirectional;
    const CellKind cell = rep % 3 == 2 ? CellKind::tanh : CellKind::lstm;
    const NetworkConfig cfg{D, N, H, dir, cell, out};
    const ParamSet p = random_params(cfg, rng);
    const Matrix x = random_matrix(rng, T, D);
    const Matrix dl = random_matrix(rng, T, out);
    const ExtMatrix xe(x);
    auto loss = [&](std::span<const Ext> w) {
      const ExtMatrix y = extended_forward(cfg, w, xe);
      Ext s = 0.0L;
      for (std::size_t i = 0; i < y.data.size(); ++i) s += dl.values()[i] * y.data[i];
      return s;
    };
    const ForwardResult fr = forward(x, p);
    const Vector analytic = backward(fr.cache, p, dl).grad.flatten();
    const GradCheckReport r = extended_check(p.flatten(), analytic, loss);
    EXPECT_LT(r.max_rel_error, 1e-4)
        << "D=" << D << " H=" << H << " N=" << N << " T=" << T << " " << describe(r);
  }
}

TEST(Backward, InputGradientMatchesFiniteDifferences) {
  Rng rng(30);
  const NetworkConfig cfg = lstm_config(2, 2, 3, Direction::bidirectional, 3);
  const ParamSet p = random_params(cfg, rng);
  const Matrix x = random_matrix(rng, 3, 2);
  const Matrix dl = random_matrix(rng, 3, 3);
  const ForwardResult fr = forward(x, p);
  const Matrix dx = backward(fr.cache, p, dl, true).d_input;
  const std::vector<Ext> w = to_extended(p.flatten());
  const GradCheckReport r = extended_check(x.values(), dx.values(), [&](auto xv) {
    const ExtMatrix y = extended_forward(cfg, w, ext_matrix(3, 2, xv));
    Ext s = 0.0L;
    for (std::size_t i = 0; i < y.data.size(); ++i) s += dl.values()[i] * y.data[i];
    return s;
  });
  EXPECT_LT(r.max_rel_error, 1e-4) << describe(r);
}
