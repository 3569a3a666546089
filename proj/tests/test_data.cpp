#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "dblstm/data.hpp"
#include "test_util.hpp"

using namespace dblstm;

namespace {

const std::string kFixtures = DBLSTM_FIXTURES;

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

std::vector<double> column_mean(const Dataset& d, std::size_t dim) {
  std::vector<double> mean(dim, 0.0);
  std::size_t frames = 0;
  for (const Utterance& u : d) {
    for (std::size_t t = 0; t < u.features.rows(); ++t) {
      for (std::size_t j = 0; j < dim; ++j) mean[j] += u.features(t, j);
      ++frames;
    }
  }
  for (auto& m : mean) m /= static_cast<double>(frames);
  return mean;
}

}  // namespace

TEST(LoadDataset, TwoUtteranceFixture) {
  const Dataset d = load_dataset(kFixtures + "/two.manifest", 3);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].id, "utt_a");
  EXPECT_EQ(d[0].features, Matrix(3, 3, {0.5, -1.25, 2, 1, 0, -0.5, 0.25, 0.75, 1.5}));
  EXPECT_EQ(d[0].targets, (LabelSeq{0, 2}));
  EXPECT_EQ(d[1].id, "utt_b");
  EXPECT_EQ(d[1].features.rows(), 2u);
  EXPECT_EQ(d[1].features.cols(), 3u);
  EXPECT_EQ(d[1].targets, LabelSeq{1});
}

TEST(LoadDataset, EmptyManifestIsEmptyDataset) {
  const auto dir = testutil::scratch_dir("empty_manifest");
  write_file(dir / "m", "");
  EXPECT_TRUE(load_dataset((dir / "m").string()).empty());
}

TEST(LoadDataset, ErrorsNameFileAndLine) {
  const auto dir = testutil::scratch_dir("bad_data");
  write_file(dir / "ragged.feat", "1 2 3\n4 5\n");
  write_file(dir / "ok.feat", "1 2 3\n4 5 6\n");
  write_file(dir / "word.feat", "1 2 3\n4 x 6\n");
  write_file(dir / "ok.lab", "0 1\n");
  write_file(dir / "big.lab", "0 7\n");

  write_file(dir / "a.manifest", "u ragged.feat ok.lab\n");
  std::string msg = error_of([&] { load_dataset((dir / "a.manifest").string()); });
  EXPECT_NE(msg.find("ragged.feat"), std::string::npos) << msg;
  EXPECT_NE(msg.find(":2"), std::string::npos) << msg;

  write_file(dir / "b.manifest", "u word.feat ok.lab\n");
  msg = error_of([&] { load_dataset((dir / "b.manifest").string()); });
  EXPECT_NE(msg.find("word.feat"), std::string::npos) << msg;

  write_file(dir / "c.manifest", "u ok.feat big.lab\n");
  msg = error_of([&] { load_dataset((dir / "c.manifest").string(), 5); });
  EXPECT_NE(msg.find("big.lab"), std::string::npos) << msg;
  EXPECT_NO_THROW(load_dataset((dir / "c.manifest").string(), 8));

  write_file(dir / "d.manifest", "u ok.feat\n");
  msg = error_of([&] { load_dataset((dir / "d.manifest").string()); });
  EXPECT_NE(msg.find("d.manifest:1"), std::string::npos) << msg;

  write_file(dir / "e.manifest", "u missing.feat ok.lab\n");
  EXPECT_FALSE(error_of([&] { load_dataset((dir / "e.manifest").string()); }).empty());
  EXPECT_FALSE(error_of([&] { load_dataset((dir / "nope.manifest").string()); }).empty());
}

TEST(LoadDataset, WriteThenLoadRoundTripsExactly) {
  SynthSpec spec;
  spec.train_count = 4;
  spec.dev_count = spec.test_count = 1;
  const SynthData d = synthesize(spec);
  const auto dir = testutil::scratch_dir("round_trip");
  const std::string manifest = write_dataset(dir.string(), "train", d.train);
  EXPECT_EQ(load_dataset(manifest, spec.K), d.train);
}

TEST(Normalizer, TrainStatisticsBecomeZeroMeanUnitVariance) {
  Rng rng(120);
  Dataset d;
  for (int i = 0; i < 3; ++i) {
    Matrix f(10 + i, 4);
    for (std::size_t t = 0; t < f.rows(); ++t) {
      for (std::size_t j = 0; j < 4; ++j) f(t, j) = rng.gaussian(3.0 * j, 1.0 + j);
    }
    d.push_back({"u" + std::to_string(i), f, {}});
  }
  const NormStats s = fit_normalizer(d);
  apply_normalizer(d, s);
  const NormStats again = fit_normalizer(d);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_NEAR(again.mean[j], 0.0, 1e-10);
    EXPECT_NEAR(again.stddev[j] * again.stddev[j], 1.0, 1e-10);
  }
  const Dataset before = d;
  apply_normalizer(d, again);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_LT(testutil::max_abs_diff(d[i].features, before[i].features), 1e-10);
  }
}

TEST(Normalizer, ConstantDimensionIsAnError) {
  Dataset d{{"u", Matrix(3, 2, {1, 5, 2, 5, 3, 5}), {}}};
  try {
    fit_normalizer(d);
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(fit_normalizer(Dataset{}), std::exception);
}

TEST(Normalizer, ShiftedDevSetKeepsNonZeroMean) {
  Rng rng(121);
  Dataset train, dev;
  for (int i = 0; i < 4; ++i) {
    Matrix a(20, 2), b(20, 2);
    for (auto& v : a.values()) v = rng.gaussian(0.0, 1.0);
    for (auto& v : b.values()) v = rng.gaussian(1.0, 1.0);
    train.push_back({"t", a, {}});
    dev.push_back({"d", b, {}});
  }
  const NormStats s = fit_normalizer(train);
  apply_normalizer(dev, s);
  for (double m : column_mean(dev, 2)) EXPECT_GT(m, 0.1);
}

TEST(Synth, SameSeedIdenticalDatasets) {
  SynthSpec spec;
  spec.random_polarity = true;
  spec.label_predictability = 0.5;
  const SynthData a = synthesize(spec), b = synthesize(spec);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.dev, b.dev);
  EXPECT_EQ(a.test, b.test);
  spec.seed = 2;
  EXPECT_NE(synthesize(spec).train, a.train);
}

TEST(Synth, ShapesAndCtcFeasibility) {
  SynthSpec spec;
  spec.train_count = 1000;
  spec.dev_count = spec.test_count = 0;
  const SynthData d = synthesize(spec);
  ASSERT_EQ(d.train.size(), 1000u);
  for (const Utterance& u : d.train) {
    const std::size_t T = u.features.rows();
    EXPECT_GE(T, spec.t_min);
    EXPECT_LE(T, spec.t_max);
    EXPECT_EQ(u.features.cols(), spec.dim);
    EXPECT_GE(u.targets.size(), spec.events_min);
    EXPECT_LE(u.targets.size(), spec.events_max);
    std::size_t repeats = 0;
    for (std::size_t i = 1; i < u.targets.size(); ++i) repeats += u.targets[i] == u.targets[i - 1];
    EXPECT_LE(u.targets.size() + repeats, T);
    for (Label l : u.targets) EXPECT_LT(static_cast<std::size_t>(l), spec.K);
  }
}

TEST(Synth, NoiselessSingleEventAppearsVerbatim) {
  SynthSpec spec;
  spec.noise = 0.0;
  spec.events_min = spec.events_max = 1;
  spec.train_count = 20;
  spec.dev_count = spec.test_count = 0;
  const SynthPrototypes protos = synth_prototypes(spec);
  for (const Utterance& u : synthesize(spec).train) {
    ASSERT_EQ(u.targets.size(), 1u);
    std::size_t first = u.features.rows(), last = 0;
    for (std::size_t t = 0; t < u.features.rows(); ++t) {
      bool zero = true;
      for (double v : u.features.row(t)) zero = zero && v == 0.0;
      if (!zero) {
        first = std::min(first, t);
        last = t;
      }
    }
    ASSERT_LT(first, u.features.rows());
    const std::size_t duration = last - first + 1;
    EXPECT_GE(duration, spec.duration_min);
    EXPECT_LE(duration, spec.duration_max);
    const Matrix pattern = synth_event_pattern(protos, u.targets[0], duration);
    for (std::size_t j = 0; j < duration; ++j) {
      for (std::size_t d = 0; d < spec.dim; ++d) {
        EXPECT_EQ(u.features(first + j, d), pattern(j, d));
      }
    }
  }
}

TEST(Synth, PolarityFlipsWholeFrames) {
  SynthSpec spec;
  spec.noise = 0.0;
  spec.events_min = spec.events_max = 1;
  spec.random_polarity = true;
  spec.train_count = 20;
  spec.dev_count = spec.test_count = 0;
  const SynthPrototypes protos = synth_prototypes(spec);
  // 0: no match, 1: equals a prototype row, -1: equals its negation.
  auto signed_match = [&](std::span<const double> row) {
    for (const Matrix* m : {&protos.onset, &protos.body}) {
      for (std::size_t r = 0; r < m->rows(); ++r) {
        for (double sign : {1.0, -1.0}) {
          bool all = true;
          for (std::size_t d = 0; d < spec.dim; ++d) all = all && row[d] == sign * (*m)(r, d);
          if (all) return static_cast<int>(sign);
        }
      }
    }
    return 0;
  };
  std::size_t positive = 0, negative = 0;
  for (const Utterance& u : synthesize(spec).train) {
    for (std::size_t t = 0; t < u.features.rows(); ++t) {
      const auto row = u.features.row(t);
      if (std::all_of(row.begin(), row.end(), [](double v) { return v == 0.0; })) continue;
      const int m = signed_match(row);
      EXPECT_NE(m, 0);
      (m > 0 ? positive : negative) += 1;
    }
  }
  EXPECT_GT(positive, 0u);
  EXPECT_GT(negative, 0u);
}

TEST(Synth, PredictableLabelsFollowSuccessor) {
  SynthSpec spec;
  spec.label_predictability = 1.0;
  spec.train_count = 50;
  const SynthPrototypes protos = synth_prototypes(spec);
  for (const Utterance& u : synthesize(spec).train) {
    for (std::size_t i = 1; i < u.targets.size(); ++i) {
      EXPECT_EQ(u.targets[i], protos.successor[static_cast<std::size_t>(u.targets[i - 1])]);
    }
  }
}

TEST(Synth, SuccessorIsOneCycle) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    SynthSpec spec;
    spec.seed = seed;
    const SynthPrototypes protos = synth_prototypes(spec);
    Label c = 0;
    std::set<Label> seen;
    for (std::size_t i = 0; i < spec.K; ++i) {
      const Label next = protos.successor[static_cast<std::size_t>(c)];
      EXPECT_NE(next, c);
      seen.insert(c);
      c = next;
    }
    EXPECT_EQ(c, 0);
    EXPECT_EQ(seen.size(), spec.K);
  }
}

TEST(Synth, InvalidSpecsRejected) {
  SynthSpec spec;
  spec.K = 1;
  EXPECT_THROW(synthesize(spec), std::invalid_argument);
  spec = SynthSpec{};
  spec.t_min = 90;
  EXPECT_THROW(synthesize(spec), std::invalid_argument);
  spec = SynthSpec{};
  spec.events_min = 20;
  spec.events_max = 20;
  EXPECT_THROW(synthesize(spec), std::invalid_argument);
  spec = SynthSpec{};
  spec.label_predictability = 1.5;
  EXPECT_THROW(synthesize(spec), std::invalid_argument);
}
