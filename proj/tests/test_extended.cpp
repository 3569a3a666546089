#include <gtest/gtest.h>

#include <cmath>

#include "dblstm/extended.hpp"
#include "test_util.hpp"

using namespace dblstm;
using dblstm::testutil::random_matrix;
using dblstm::testutil::random_params;

namespace {

void expect_same(const SequenceModel& m, const Matrix& x, const LabelSeq& z) {
  const double d = m.log_prob(x, z);
  const Ext e = extended_log_prob(spec_of(m), to_extended(m.flatten()), ExtMatrix(x), z);
  EXPECT_NEAR(static_cast<double>(e), d, 1e-12 * (1.0 + std::abs(d)));
}

}  // namespace

TEST(Extended, AgreesWithDoubleKernels) {
  Rng rng(160);
  for (int rep = 0; rep < 8; ++rep) {
    const std::size_t K = 1 + rng.below(3), T = 2 + rng.below(5), D = 1 + rng.below(3);
    const Direction dir = rep % 2 ? Direction::bidirectional : Direction::unidirectional;
    const CellKind cell = rep % 4 == 3 ? CellKind::tanh : CellKind::lstm;
    LabelSeq z;
    for (std::size_t u = 0; u < 1 + rng.below(2); ++u) z.push_back(static_cast<Label>(rng.below(K)));
    const Matrix x = random_matrix(rng, T, D);

    expect_same(CtcModel(random_params(NetworkConfig{D, 1 + rng.below(3), 3, dir, cell, K + 1}, rng)),
                x, z);

    TransducerModel tm(make_transducer_config(D, K, 3, 1 + rng.below(2), dir));
    tm.fill_uniform(rng, -0.5, 0.5);
    expect_same(TransducerNet(tm), x, z);

    ParamSet pp(prediction_pretrain_config(tm.config()));
    pp.fill_uniform(rng, -0.5, 0.5);
    expect_same(PredictionPretrainNet(pp), Matrix(), z);
  }
}

TEST(Extended, CtcMatchesDoubleOnUnreachableTargets) {
  const Matrix logits(1, 3, {0.1, 0.2, 0.3});
  const LabelSeq z{0, 1};
  EXPECT_TRUE(std::isinf(extended_ctc_log_prob(ExtMatrix(logits), z)));
  EXPECT_NEAR(static_cast<double>(extended_ctc_log_prob(ExtMatrix(logits), LabelSeq{})),
              ctc_log_prob(log_softmax_rows(logits), LabelSeq{}).log_prob, 1e-15);
}

TEST(Extended, ParameterCountMismatchRejected) {
  const NetworkConfig cfg{2, 1, 2, Direction::bidirectional, CellKind::lstm, 3};
  std::vector<Ext> w(param_count(cfg) + 1, 0.0L);
  EXPECT_THROW(extended_forward(cfg, w, ExtMatrix(Matrix(2, 2))), std::invalid_argument);
  w.resize(param_count(cfg) - 1);
  EXPECT_THROW(extended_forward(cfg, w, ExtMatrix(Matrix(2, 2))), std::invalid_argument);
}
