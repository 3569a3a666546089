#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "dblstm/checkpoint.hpp"
#include "dblstm/cli.hpp"
#include "dblstm/run_config.hpp"
#include "test_util.hpp"

using namespace dblstm;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = DBLSTM_FIXTURES;
const std::string kConfigs = DBLSTM_CONFIGS;

struct Result {
  int code;
  std::string out, err;
};

Result dblstm_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dblstm");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// A small task on disk: <dir>/data/{train,dev,test}.manifest.
fs::path small_task(const std::string& name) {
  const fs::path dir = testutil::scratch_dir(name);
  const Result r = dblstm_cli({"synth", "--out", (dir / "data").string(), "--seed", "4", "--K", "3",
                               "--train", "6", "--dev", "3", "--test", "3", "--t-min", "10",
                               "--t-max", "14", "--events-min", "1", "--events-max", "2",
                               "--duration-min", "2", "--duration-max", "3", "--dim", "3"});
  EXPECT_EQ(r.code, 0) << r.err;
  return dir;
}

std::string tiny_config(const std::string& extra = "") {
  return R"({
  "seed": 7,
  "loss": "ctc",
  "network": {"input_dim": 3, "num_labels": 3, "levels": 1, "hidden": 3},
  "optimizer": {"learning_rate": 0.01, "momentum": 0.9},
  "schedule": {"noise_phase": false, "patience": 2, "max_epochs": 3},
  "decode": {"beam_width": 3},
  "data": {"train": "data/train.manifest", "dev": "data/dev.manifest"},
  "output_dir": "run")" + extra + "\n}\n";
}

std::string save_ctc(const fs::path& path, const ParamSet& p) {
  const CtcModel m(p);
  Checkpoint c;
  c.model = spec_of(m);
  c.params = m.flatten();
  checkpoint_save(path.string(), c);
  return path.string();
}

}  // namespace

TEST(CliUsage, BadInvocationsExitWithUsageCode) {
  EXPECT_EQ(dblstm_cli({}).code, cli::kExitUsage);
  EXPECT_EQ(dblstm_cli({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(dblstm_cli({"synth"}).code, cli::kExitUsage);
  EXPECT_EQ(dblstm_cli({"params", kConfigs + "/tiny.json", "--bogus"}).code, cli::kExitUsage);
  const Result help = dblstm_cli({"--help"});
  EXPECT_EQ(help.code, cli::kExitOk);
  EXPECT_NE(help.out.find("synth"), std::string::npos);
}

TEST(CliSynth, SameSeedWritesByteIdenticalFiles) {
  const fs::path dir = testutil::scratch_dir("cli_synth");
  for (const char* sub : {"a", "b"}) {
    const Result r = dblstm_cli({"synth", "--out", (dir / sub).string(), "--seed", "11", "--train",
                                 "5", "--dev", "2", "--test", "2", "--random-polarity",
                                 "--predictability", "0.5"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("train: 5 utterances"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("dev: 2 utterances"), std::string::npos) << r.out;
  }
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const fs::path other = dir / "b" / fs::relative(e.path(), dir / "a");
    ASSERT_TRUE(fs::exists(other)) << other;
    EXPECT_EQ(slurp(e.path()), slurp(other)) << e.path();
    ++files;
  }
  EXPECT_EQ(files, 3u + 2u * (5u + 2u + 2u));
}

TEST(CliSynth, OverPackedTaskIsAConfigError) {
  const fs::path dir = testutil::scratch_dir("cli_synth_bad");
  const Result r = dblstm_cli({"synth", "--out", dir.string(), "--t-min", "20", "--t-max", "20",
                               "--events-min", "6", "--events-max", "6"});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_FALSE(r.err.empty());
}

TEST(CliParams, ShippedConfigurations) {
  const std::pair<const char*, const char*> cases[] = {
      {"timit_ctc_1l_250h.json", "total 780562 (0.8M)"},
      {"timit_ctc_3l_250h.json", "total 3787562 (3.8M)"},
      {"timit_ctc_1l_622h.json", "total 3793018 (3.8M)"},
      {"timit_pretrans_3l_250h.json", "total 4336312 (4.3M)"},
      {"synth_ctc_1l.json", "total 9906"},
      {"synth_ctc_2l.json", "total 9862"},
      {"synth_pretrans_2l.json", "total 12342"},
  };
  for (const auto& [file, want] : cases) {
    const Result r = dblstm_cli({"params", kConfigs + "/" + file});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find(want), std::string::npos) << file << ": " << r.out;
  }
}

TEST(CliConfig, ErrorsExitWithConfigCode) {
  const fs::path dir = testutil::scratch_dir("cli_config");
  write_file(dir / "unknown.json", tiny_config(R"(,
  "learning_rat": 0.1)"));
  Result r = dblstm_cli({"params", (dir / "unknown.json").string()});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("learning_rat"), std::string::npos) << r.err;

  write_file(dir / "syntax.json", "{ \"seed\": ");
  EXPECT_EQ(dblstm_cli({"params", (dir / "syntax.json").string()}).code, cli::kExitConfig);
  EXPECT_EQ(dblstm_cli({"params", (dir / "missing.json").string()}).code, cli::kExitConfig);

  write_file(dir / "loss.json", R"({"loss": "hinge", "network": {"input_dim": 2, "num_labels": 2, "hidden": 2}})");
  EXPECT_EQ(dblstm_cli({"params", (dir / "loss.json").string()}).code, cli::kExitConfig);
}

TEST(RunConfig, PretrainStagesTakeOptionalLearningRates) {
  const std::string head = R"({"loss": "transducer_pretrained",
    "network": {"input_dim": 2, "num_labels": 3, "hidden": 2},
    "optimizer": {"learning_rate": 0.001},
    "schedule": {"patience": 7})";
  RunConfig c = parse_run_config(head + "}");
  EXPECT_EQ(c.ctc_pretrain_learning_rate, 0.001);
  EXPECT_EQ(c.prediction_pretrain_learning_rate, 0.001);
  EXPECT_EQ(c.ctc_pretrain_schedule.patience, 7u);
  EXPECT_EQ(c.ctc_pretrain_schedule.noise_phase_metric, StopMetric::log_prob);

  c = parse_run_config(head + R"(, "pretrain": {
    "ctc": {"learning_rate": 0.002, "noise_phase_metric": "per"},
    "prediction": {"patience": 3}}})");
  EXPECT_EQ(c.learning_rate, 0.001);
  EXPECT_EQ(c.ctc_pretrain_learning_rate, 0.002);
  EXPECT_EQ(c.ctc_pretrain_schedule.noise_phase_metric, StopMetric::per);
  EXPECT_EQ(c.prediction_pretrain_learning_rate, 0.001);
  EXPECT_EQ(c.prediction_pretrain_schedule.patience, 3u);

  EXPECT_THROW(parse_run_config(head + R"(, "pretrain": {"ctc": {"learning_rate": -1}}})"),
               ConfigError);
  EXPECT_THROW(parse_run_config(head + R"(, "pretrain": {"ctc": {"learning_rate": "fast"}}})"),
               ConfigError);
  EXPECT_THROW(parse_run_config(head + R"(, "pretrain": {"ctc": {"lr": 0.1}}})"), ConfigError);
}

TEST(CliTrain, TinyRunWritesOneBestCheckpointAndReproducibleMetrics) {
  const fs::path dir = small_task("cli_train");
  write_file(dir / "tiny.json", tiny_config());
  const std::string config = (dir / "tiny.json").string();

  const Result a = dblstm_cli({"train", config});
  ASSERT_EQ(a.code, 0) << a.err;
  const std::string metrics = slurp(dir / "run" / "metrics.jsonl");
  EXPECT_EQ(count_lines(metrics), 3u);
  std::size_t best = 0;
  for (const auto& e : fs::directory_iterator(dir / "run")) {
    best += e.path().filename().string().starts_with("best_");
  }
  EXPECT_EQ(best, 1u);
  EXPECT_TRUE(fs::exists(dir / "run" / "best_noise_free.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "run" / "final.ckpt"));

  const Result b = dblstm_cli({"train", config, "--out", (dir / "again").string()});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(slurp(dir / "again" / "metrics.jsonl"), metrics);
  EXPECT_EQ(slurp(dir / "again" / "final.ckpt"), slurp(dir / "run" / "final.ckpt"));

  const Result c = dblstm_cli({"train", config, "--resume"});
  EXPECT_EQ(c.code, 0) << c.err;
  EXPECT_NE(c.out.find("already finished"), std::string::npos) << c.out;
  EXPECT_EQ(slurp(dir / "run" / "metrics.jsonl"), metrics);
}

TEST(CliTrain, MissingDataExitsWithDataCode) {
  const fs::path dir = testutil::scratch_dir("cli_train_nodata");
  write_file(dir / "tiny.json", tiny_config());
  const Result r = dblstm_cli({"train", (dir / "tiny.json").string()});
  EXPECT_EQ(r.code, cli::kExitData);
  EXPECT_NE(r.err.find("train.manifest"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "run" / "metrics.jsonl"));
}

TEST(CliTrain, DivergenceExitsWithNumericCode) {
  const fs::path dir = small_task("cli_train_diverge");
  std::string text = tiny_config();
  text.replace(text.find("0.01"), 4, "1e308");
  write_file(dir / "bad.json", text);
  const Result r = dblstm_cli({"train", (dir / "bad.json").string()});
  EXPECT_EQ(r.code, cli::kExitNumeric) << r.out << r.err;
}

TEST(CliDecode, NBestBlocksParseAndAreSorted) {
  const fs::path dir = small_task("cli_decode");
  write_file(dir / "tiny.json", tiny_config());
  ASSERT_EQ(dblstm_cli({"train", (dir / "tiny.json").string()}).code, 0);
  const std::string hyps = (dir / "test.hyps").string();
  const Result r = dblstm_cli({"decode", "--checkpoint", (dir / "run" / "final.ckpt").string(),
                               "--data", (dir / "data" / "test.manifest").string(), "--nbest",
                               "4", "--out", hyps});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto blocks = cli::read_transcriptions(hyps);
  const Dataset test = load_dataset((dir / "data" / "test.manifest").string());
  ASSERT_EQ(blocks.size(), test.size());
  for (std::size_t n = 0; n < blocks.size(); ++n) {
    EXPECT_EQ(blocks[n].id, test[n].id);
    ASSERT_FALSE(blocks[n].hypotheses.empty());
    EXPECT_LE(blocks[n].hypotheses.size(), 4u);
    for (std::size_t i = 1; i < blocks[n].hypotheses.size(); ++i) {
      EXPECT_GE(blocks[n].hypotheses[i - 1].log_prob, blocks[n].hypotheses[i].log_prob);
    }
  }
  const Result e = dblstm_cli({"eval", "--refs", (dir / "data" / "test.manifest").string(),
                               "--hyps", hyps});
  EXPECT_EQ(e.code, 0) << e.err;
  EXPECT_NE(e.out.find("PER "), std::string::npos);
}

TEST(CliDecode, BlankDominantModelGivesEmptyHypotheses) {
  const fs::path dir = small_task("cli_decode_blank");
  ParamSet p(NetworkConfig{3, 1, 2, Direction::bidirectional, CellKind::lstm, 4});
  p.head().b[3] = 50.0;
  const std::string ckpt = save_ctc(dir / "blank.ckpt", p);
  const Result r = dblstm_cli({"decode", "--checkpoint", ckpt, "--data",
                               (dir / "data" / "dev.manifest").string(), "--beam-width", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto tab1 = line.find('\t');
    const auto tab2 = line.find('\t', tab1 + 1);
    EXPECT_EQ(tab2, tab1 + 1) << line;
    ++n;
  }
  EXPECT_EQ(n, 3u);
}

TEST(CliDecode, BadInputsExitWithDataOrConfigCode) {
  const fs::path dir = small_task("cli_decode_bad");
  ParamSet p(NetworkConfig{3, 1, 2, Direction::bidirectional, CellKind::lstm, 4});
  const std::string ckpt = save_ctc(dir / "m.ckpt", p);
  const std::string data = (dir / "data" / "dev.manifest").string();
  EXPECT_EQ(dblstm_cli({"decode", "--checkpoint", (dir / "nope.ckpt").string(), "--data", data}).code,
            cli::kExitData);
  const std::string wide = save_ctc(
      dir / "wide.ckpt", ParamSet(NetworkConfig{4, 1, 2, Direction::bidirectional, CellKind::lstm, 4}));
  EXPECT_EQ(dblstm_cli({"decode", "--checkpoint", wide, "--data", data}).code, cli::kExitData);
  EXPECT_EQ(dblstm_cli({"decode", "--checkpoint", ckpt, "--data", data, "--beam-width", "0"}).code,
            cli::kExitConfig);
}

TEST(CliEval, FixturePerWithAndWithoutMapping) {
  const std::string refs = kFixtures + "/two.manifest";
  const std::string hyps = kFixtures + "/two.hyps";
  Result r = dblstm_cli({"eval", "--refs", refs, "--hyps", hyps});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("utt_a\t1\t2\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("utt_b\t1\t1\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("2 errors / 3 reference labels"), std::string::npos) << r.out;

  r = dblstm_cli({"eval", "--refs", refs, "--hyps", hyps, "--map", kFixtures + "/fold3to2.map"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("2 errors / 3 reference labels"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("mapped"), std::string::npos) << r.out;
}

TEST(CliEval, ReferencesScoredAgainstThemselvesGiveZero) {
  const fs::path dir = testutil::scratch_dir("cli_eval_self");
  const Dataset refs = load_dataset(kFixtures + "/two.manifest");
  std::string text;
  for (const Utterance& u : refs) text += cli::format_transcription(u.id, {u.targets, -1.0}) + "\n";
  write_file(dir / "self.hyps", text);
  const Result r = dblstm_cli({"eval", "--refs", kFixtures + "/two.manifest", "--hyps",
                               (dir / "self.hyps").string(), "--map",
                               kFixtures + "/fold3to2.map"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("PER 0 (0 errors"), std::string::npos) << r.out;
}

TEST(CliEval, MappingMissingALabelIsADataError) {
  const fs::path dir = testutil::scratch_dir("cli_eval_map");
  write_file(dir / "partial.map", "0 0\n1 0\n");
  const Result r = dblstm_cli({"eval", "--refs", kFixtures + "/two.manifest", "--hyps",
                               kFixtures + "/two.hyps", "--map", (dir / "partial.map").string()});
  EXPECT_EQ(r.code, cli::kExitData);
  EXPECT_NE(r.err.find("2"), std::string::npos) << r.err;

  write_file(dir / "one.hyps", "utt_a\t0 2\t-1\n");
  EXPECT_EQ(dblstm_cli({"eval", "--refs", kFixtures + "/two.manifest", "--hyps",
                        (dir / "one.hyps").string()}).code,
            cli::kExitData);
}

TEST(CliGradcheck, TinyConfigPasses) {
  for (const char* loss : {"ctc", "transducer"}) {
    const fs::path dir = testutil::scratch_dir(std::string("cli_gradcheck_") + loss);
    std::string text = slurp(kConfigs + "/tiny.json");
    text.replace(text.find("\"ctc\""), 5, std::string("\"") + loss + "\"");
    write_file(dir / "g.json", text);
    const Result r = dblstm_cli({"gradcheck", (dir / "g.json").string()});
    EXPECT_EQ(r.code, 0) << r.out << r.err;
    EXPECT_NE(r.out.find("PASS"), std::string::npos) << r.out;
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
  }
}

TEST(CliSensitivity, UnidirectionalMapIsZeroAfterT) {
  const fs::path dir = small_task("cli_sens");
  Rng rng(150);
  const ParamSet p = testutil::random_params(
      NetworkConfig{3, 2, 3, Direction::unidirectional, CellKind::lstm, 4}, rng);
  const std::string ckpt = save_ctc(dir / "fwd.ckpt", p);
  const std::string data = (dir / "data" / "dev.manifest").string();
  const Dataset dev = load_dataset(data);
  const std::string id = dev[0].id;
  const std::size_t T = dev[0].features.rows();
  const std::size_t t = T / 2;
  const std::string heat = (dir / "heat.feat").string();
  const Result r = dblstm_cli({"sensitivity", "--checkpoint", ckpt, "--data", data, "--utt", id,
                               "--t", std::to_string(t), "--k", "1", "--out", heat});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find(std::to_string(T) + "x3"), std::string::npos) << r.out;

  std::ifstream in(heat);
  std::string line;
  std::size_t row = 0;
  bool any_before = false;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    double v = 0.0;
    while (ss >> v) {
      if (row > t) {
        EXPECT_EQ(v, 0.0) << "row " << row;
      } else if (v != 0.0) {
        any_before = true;
      }
    }
    ++row;
  }
  EXPECT_EQ(row, T);
  EXPECT_TRUE(any_before);

  EXPECT_EQ(dblstm_cli({"sensitivity", "--checkpoint", ckpt, "--data", data, "--utt", id, "--t",
                        std::to_string(T), "--k", "0", "--out", heat}).code,
            cli::kExitConfig);
  EXPECT_EQ(dblstm_cli({"sensitivity", "--checkpoint", ckpt, "--data", data, "--utt", "nobody",
                        "--t", "0", "--k", "0", "--out", heat}).code,
            cli::kExitData);
}

TEST(Transcriptions, FormatReadRoundTrip) {
  const fs::path dir = testutil::scratch_dir("transcriptions");
  const Hypothesis a{{0, 4, 4}, -1.2345678901234567}, b{{}, -0.1}, c{{2}, -3.5};
  const std::string text = cli::format_transcription("u1", a) + "\n" +
                           cli::format_transcription("u1", c) + "\n\n" +
                           cli::format_transcription("u2", b) + "\n";
  EXPECT_EQ(cli::format_transcription("u2", b), "u2\t\t-0.1");
  write_file(dir / "t.hyps", text);
  const auto blocks = cli::read_transcriptions((dir / "t.hyps").string());
  ASSERT_EQ(blocks.size(), 2u);
  ASSERT_EQ(blocks[0].hypotheses.size(), 2u);
  EXPECT_EQ(blocks[0].hypotheses[0].labels, a.labels);
  EXPECT_EQ(blocks[0].hypotheses[0].log_prob, a.log_prob);
  EXPECT_EQ(blocks[0].hypotheses[1].labels, c.labels);
  EXPECT_TRUE(blocks[1].hypotheses[0].labels.empty());
}

TEST(Transcriptions, MalformedLineNamesFileAndLine) {
  const fs::path dir = testutil::scratch_dir("transcriptions_bad");
  write_file(dir / "bad.hyps", "u1\t0\t-1\nu2\t0 x\t-1\n");
  try {
    cli::read_transcriptions((dir / "bad.hyps").string());
    FAIL() << "expected a DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.hyps:2"), std::string::npos) << e.what();
  }
  write_file(dir / "fields.hyps", "u1 0 -1\n");
  EXPECT_THROW(cli::read_transcriptions((dir / "fields.hyps").string()), DataError);
}
