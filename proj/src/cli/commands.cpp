#include "dblstm/cli.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "dblstm/checkpoint.hpp"
#include "dblstm/data.hpp"
#include "dblstm/parallel.hpp"
#include "dblstm/run_config.hpp"
#include "dblstm/training.hpp"

namespace dblstm::cli {

namespace fs = std::filesystem;

namespace {

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::string millions(std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1fM", static_cast<double>(n) / 1e6);
  return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw DataError("cannot write " + tmp);
    f << text;
    if (!f) throw DataError("failed writing " + tmp);
  }
  fs::rename(tmp, path);
}

Dataset load_checked(const std::string& path, const std::string& what, std::size_t K,
                     std::size_t dim) {
  if (path.empty()) throw ConfigError("no " + what + " set given (config data." + what + ")");
  Dataset d = load_dataset(path, K);
  for (const Utterance& u : d) {
    if (u.features.cols() != dim) {
      throw DataError(path + ": utterance " + u.id + " has " + std::to_string(u.features.cols()) +
                      "-dimensional features, the model expects " + std::to_string(dim));
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  SynthSpec spec;
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  try {
    a.spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const SynthData data = synthesize(a.spec);
  fs::create_directories(a.out);
  const std::pair<const char*, const Dataset*> parts[] = {
      {"train", &data.train}, {"dev", &data.dev}, {"test", &data.test}};
  for (const auto& [name, set] : parts) {
    const std::string manifest = write_dataset(a.out, name, *set);
    std::size_t frames = 0;
    std::size_t labels = 0;
    for (const Utterance& u : *set) {
      frames += u.features.rows();
      labels += u.targets.size();
    }
    out << name << ": " << set->size() << " utterances, " << frames << " frames, " << labels
        << " labels -> " << manifest << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> train, dev, out;
  std::optional<std::size_t> beam_width;
  bool resume = false;
};

struct Stage {
  std::string name;
  fs::path dir;
  ScheduleOptions schedule;
  std::uint64_t trainer_seed = 0;
  double learning_rate = 0.0;
};

std::string read_file_or_empty(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) return {};
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Keeps the first `lines` lines of an existing metrics stream.
std::string metrics_prefix(const fs::path& p, std::size_t lines) {
  const std::string all = read_file_or_empty(p);
  std::size_t pos = 0;
  for (std::size_t n = 0; n < lines; ++n) {
    const std::size_t nl = all.find('\n', pos);
    if (nl == std::string::npos) {
      throw CheckpointError(p.string() + ": metrics stream is shorter than the checkpoint's " +
                            std::to_string(lines) + " epochs");
    }
    pos = nl + 1;
  }
  return all.substr(0, pos);
}

// Trains `model` through one schedule, writing into stage.dir:
//   metrics.jsonl, best_<phase>.ckpt, last.ckpt (resume point), final.ckpt.
void run_stage(SequenceModel& model, const Stage& stage, const Dataset& train,
               const Dataset& dev, const RunConfig& cfg, const std::optional<NormStats>& norm,
               bool resume, std::ostream& out) {
  const ModelSpec spec = spec_of(model);
  const fs::path final_path = stage.dir / "final.ckpt";
  const fs::path last_path = stage.dir / "last.ckpt";
  const fs::path metrics_path = stage.dir / "metrics.jsonl";

  auto check_spec = [&](const Checkpoint& c, const fs::path& p) {
    if (instantiate(c.model)->size() != model.size() || c.model.kind != spec.kind) {
      throw CheckpointError(p.string() + ": checkpoint architecture differs from the config");
    }
  };

  if (resume && fs::exists(final_path)) {
    const Checkpoint c = checkpoint_load(final_path.string());
    check_spec(c, final_path);
    model.unflatten(c.params);
    out << "[" << stage.name << "] already finished, loaded " << final_path.string() << "\n";
    return;
  }

  TrainerOptions opts;
  opts.schedule = stage.schedule;
  opts.learning_rate = stage.learning_rate;
  opts.momentum = cfg.momentum;
  opts.dev_eval.beam.width = cfg.beam_width;
  opts.dev_eval.beam.max_emissions_per_step = cfg.max_emissions_per_step;
  Trainer trainer(model, train, dev, opts, stage.trainer_seed);

  fs::create_directories(stage.dir);
  std::string metrics;
  if (resume && fs::exists(last_path)) {
    const Checkpoint c = checkpoint_load(last_path.string());
    check_spec(c, last_path);
    model.unflatten(c.params);
    trainer.state() = c.trainer;
    metrics = metrics_prefix(metrics_path, c.trainer.schedule.epoch);
    out << "[" << stage.name << "] resuming after epoch " << c.trainer.schedule.epoch << "\n";
  }
  write_text_file(metrics_path.string(), metrics);
  std::ofstream metrics_out(metrics_path, std::ios::binary | std::ios::app);

  auto snapshot = [&](const Vector& params) {
    Checkpoint c;
    c.model = spec;
    c.params = params;
    c.trainer = trainer.state();
    c.norm = norm;
    return c;
  };

  while (auto rec = trainer.step()) {
    const std::string line = rec->to_json();
    metrics_out << line << "\n" << std::flush;
    out << "[" << stage.name << "] " << line << "\n";
    const TrainSchedule& s = trainer.state().schedule;
    if (!all_finite(model.flatten())) {
      throw NumericError("parameters became non-finite in epoch " + std::to_string(rec->epoch));
    }
    if (s.best_epoch == s.epoch) {
      checkpoint_save((stage.dir / ("best_" + to_string(rec->phase) + ".ckpt")).string(),
                      snapshot(s.best_params));
    }
    checkpoint_save(last_path.string(), snapshot(model.flatten()));
  }
  checkpoint_save(final_path.string(), snapshot(model.flatten()));
  const TrainSchedule& s = trainer.state().schedule;
  out << "[" << stage.name << "] finished after " << s.epoch << " epochs, best epoch "
      << s.best_epoch << " -> " << final_path.string() << "\n";
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = load_run_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  if (a.train) cfg.train_path = *a.train;
  if (a.dev) cfg.dev_path = *a.dev;
  if (a.out) cfg.output_dir = *a.out;
  if (a.beam_width) {
    if (*a.beam_width == 0) throw ConfigError("--beam-width must be >= 1");
    cfg.beam_width = *a.beam_width;
  }
  if (cfg.output_dir.empty()) throw ConfigError("no output directory (config output_dir or --out)");

  // All data problems surface before any training compute.
  Dataset train = load_checked(cfg.train_path, "train", cfg.num_labels, cfg.input_dim);
  Dataset dev = load_checked(cfg.dev_path, "dev", cfg.num_labels, cfg.input_dim);
  if (train.empty()) throw DataError(cfg.train_path + ": training set is empty");
  if (dev.empty()) throw DataError(cfg.dev_path + ": development set is empty");
  std::optional<NormStats> norm;
  if (cfg.normalize) {
    norm = fit_normalizer(train);
    apply_normalizer(train, *norm);
    apply_normalizer(dev, *norm);
  }

  // Every seed is drawn up front so that skipping finished stages on resume
  // leaves the later stages' seeds unchanged.
  Rng root(cfg.seed);
  std::uint64_t seeds[7];
  for (auto& s : seeds) s = root.next_u64();
  const fs::path out_dir(cfg.output_dir);
  const double r = cfg.init_range;

  if (cfg.loss == LossKind::ctc) {
    ParamSet p(cfg.ctc_network());
    Rng init(seeds[0]);
    p.fill_uniform(init, -r, r);
    CtcModel model(std::move(p));
    run_stage(model, {"ctc", out_dir, cfg.schedule, seeds[1], cfg.learning_rate}, train, dev, cfg,
              norm, a.resume, out);
    return kExitOk;
  }

  const TransducerConfig tcfg = cfg.transducer();
  TransducerModel tm(tcfg);
  if (cfg.loss == LossKind::transducer) {
    Rng init(seeds[0]);
    tm.fill_uniform(init, -r, r);
  } else {
    ParamSet ctc_params(cfg.ctc_network());
    Rng init_ctc(seeds[2]);
    ctc_params.fill_uniform(init_ctc, -r, r);
    CtcModel ctc(std::move(ctc_params));
    run_stage(ctc, {"pretrain_ctc", out_dir / "pretrain_ctc", cfg.ctc_pretrain_schedule, seeds[3],
               cfg.ctc_pretrain_learning_rate},
              train, dev, cfg, norm, a.resume, out);

    ParamSet pred_params(prediction_pretrain_config(tcfg));
    Rng init_pred(seeds[4]);
    pred_params.fill_uniform(init_pred, -r, r);
    PredictionPretrainNet pred(std::move(pred_params));
    run_stage(pred,
              {"pretrain_prediction", out_dir / "pretrain_prediction",
               cfg.prediction_pretrain_schedule, seeds[5],
               cfg.prediction_pretrain_learning_rate},
              train, dev, cfg, std::nullopt, a.resume, out);

    Rng init_out(seeds[6]);
    tm = assemble_pretrained(ctc.params(), pred.params(), cfg.num_labels, init_out, r);
  }
  TransducerNet model(std::move(tm));
  run_stage(model, {"transducer", out_dir, cfg.schedule, seeds[1], cfg.learning_rate}, train, dev,
            cfg, norm, a.resume, out);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// decode

struct DecodeArgs {
  std::string checkpoint;
  std::string data;
  std::optional<std::string> out;
  std::size_t beam_width = 100;
  std::size_t nbest = 1;
  std::size_t max_emissions = 10;
};

Dataset load_for_checkpoint(const Checkpoint& ckpt, const SequenceModel& model,
                            const std::string& manifest) {
  Dataset data = load_checked(manifest, "decode", model.num_labels(), model.input_dim());
  if (ckpt.norm) {
    if (ckpt.norm->dim() != model.input_dim()) {
      throw CheckpointError("checkpoint normalisation covers " + std::to_string(ckpt.norm->dim()) +
                            " dimensions, the model reads " + std::to_string(model.input_dim()));
    }
    apply_normalizer(data, *ckpt.norm);
  }
  return data;
}

int cmd_decode(const DecodeArgs& a, std::ostream& out) {
  if (a.beam_width == 0) throw ConfigError("--beam-width must be >= 1");
  if (a.nbest == 0) throw ConfigError("--nbest must be >= 1");
  const Checkpoint ckpt = checkpoint_load(a.checkpoint);
  const auto model = restore_model(ckpt);
  if (!model->can_decode()) {
    throw ConfigError(a.checkpoint + ": a " + to_string(model->kind()) +
                      " checkpoint cannot transcribe audio");
  }
  const Dataset data = load_for_checkpoint(ckpt, *model, a.data);
  BeamOptions opts;
  opts.width = std::max(a.beam_width, a.nbest);
  opts.max_emissions_per_step = a.max_emissions;
  const std::vector<NBestList> lists = decode_dataset(*model, data, opts);

  std::string text;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const NBestList& list = lists[n];
    const std::size_t shown = std::min(a.nbest, list.size());
    if (a.nbest > 1 && n > 0) text += "\n";
    for (std::size_t i = 0; i < shown; ++i) {
      text += format_transcription(data[n].id, list[i]) + "\n";
    }
    if (shown == 0) text += format_transcription(data[n].id, Hypothesis{}) + "\n";
  }
  if (a.out) {
    write_text_file(*a.out, text);
  } else {
    out << text;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string refs;
  std::string hyps;
  std::optional<std::string> map;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Dataset refs = load_dataset(a.refs);
  const std::vector<TranscriptionBlock> blocks = read_transcriptions(a.hyps);
  std::map<std::string, const Hypothesis*> best;
  for (const TranscriptionBlock& b : blocks) {
    if (!best.emplace(b.id, &b.hypotheses.front()).second) {
      throw DataError(a.hyps + ": utterance " + b.id + " appears in more than one block");
    }
  }
  std::vector<LabelSeq> ref_seqs, hyp_seqs;
  std::set<std::string> ref_ids;
  for (const Utterance& u : refs) {
    auto it = best.find(u.id);
    if (it == best.end()) throw DataError(a.hyps + ": no hypothesis for utterance " + u.id);
    ref_ids.insert(u.id);
    ref_seqs.push_back(u.targets);
    hyp_seqs.push_back(it->second->labels);
  }
  for (const auto& [id, hyp] : best) {
    if (!ref_ids.count(id)) throw DataError(a.hyps + ": utterance " + id + " is not in " + a.refs);
  }

  std::optional<LabelMapping> mapping;
  PerReport rep;
  try {
    if (a.map) mapping = LabelMapping::load(*a.map);
    rep = score_per(ref_seqs, hyp_seqs, mapping ? &*mapping : nullptr);
  } catch (const std::out_of_range& e) {
    throw DataError(std::string(a.map ? *a.map + ": " : "") + e.what());
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
  for (std::size_t n = 0; n < refs.size(); ++n) {
    out << refs[n].id << "\t" << rep.per_utterance[n] << "\t" << refs[n].targets.size() << "\n";
  }
  out << "PER " << shortest(rep.per()) << " (" << rep.errors << " errors / " << rep.ref_length
      << " reference labels, " << refs.size() << " utterances"
      << (mapping ? ", mapped" : "") << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck, params, sensitivity

struct ConfigArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
};

int cmd_gradcheck(const ConfigArgs& a, std::ostream& out) {
  RunConfig cfg = load_run_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  const GradcheckOptions& g = cfg.gradcheck;
  auto model = instantiate(cfg.model_spec());
  Rng rng(cfg.seed);
  Vector w(model->size());
  for (auto& v : w) v = rng.uniform(-cfg.init_range, cfg.init_range);
  model->unflatten(w);

  Utterance utt;
  utt.id = "gradcheck";
  utt.features = Matrix(g.frames, cfg.input_dim);
  for (std::size_t t = 0; t < g.frames; ++t) {
    for (std::size_t d = 0; d < cfg.input_dim; ++d) utt.features(t, d) = rng.gaussian(0.0, 1.0);
  }
  for (std::size_t u = 0; u < g.labels; ++u) {
    utt.targets.push_back(static_cast<Label>(rng.below(cfg.num_labels)));
  }
  if (!std::isfinite(model->log_prob(utt.features, utt.targets))) {
    throw ConfigError("gradcheck: " + std::to_string(g.labels) + " labels cannot be aligned to " +
                      std::to_string(g.frames) + " frames");
  }
  const std::size_t n = g.samples == 0 ? model->size() : g.samples;
  const GradCheckReport rep = gradient_check(*model, utt, g.epsilon, n, rng);
  const bool pass = rep.max_rel_error < g.tolerance;
  out << "gradcheck " << to_string(cfg.loss) << ": " << rep.checked << " of " << model->size()
      << " parameters, eps " << shortest(g.epsilon) << "\n"
      << "max relative error " << shortest(rep.max_rel_error) << " at parameter "
      << rep.worst_index << " (analytic " << shortest(rep.analytic_at_worst) << ", numeric "
      << shortest(rep.numeric_at_worst) << ")\n"
      << "max absolute error " << shortest(rep.max_abs_error) << "\n"
      << (pass ? "PASS" : "FAIL") << " (tolerance " << shortest(g.tolerance) << ")\n";
  return pass ? kExitOk : kExitNumeric;
}

int cmd_params(const ConfigArgs& a, std::ostream& out) {
  const RunConfig cfg = load_run_config(a.config);
  std::size_t total = 0;
  if (cfg.loss == LossKind::ctc) {
    total = param_count(cfg.ctc_network());
    out << "network " << total << "\n";
  } else {
    const TransducerConfig t = cfg.transducer();
    const std::size_t acoustic = param_count(t.acoustic);
    const std::size_t prediction = param_count(t.prediction);
    total = transducer_param_count(t);
    out << "acoustic " << acoustic << "\n"
        << "prediction " << prediction << "\n"
        << "output " << (total - acoustic - prediction) << "\n";
  }
  out << "total " << total << " (" << millions(total) << ")\n";
  return kExitOk;
}

struct SensitivityArgs {
  std::string checkpoint;
  std::string data;
  std::string utterance;
  std::size_t t = 0;
  std::size_t k = 0;
  std::string out;
};

int cmd_sensitivity(const SensitivityArgs& a, std::ostream& out) {
  const Checkpoint ckpt = checkpoint_load(a.checkpoint);
  const auto model = restore_model(ckpt);
  const auto* ctc = dynamic_cast<const CtcModel*>(model.get());
  if (ctc == nullptr) throw ConfigError("sensitivity needs a CTC checkpoint");
  const Dataset data = load_for_checkpoint(ckpt, *model, a.data);
  const Utterance* utt = nullptr;
  for (const Utterance& u : data) {
    if (u.id == a.utterance) utt = &u;
  }
  if (utt == nullptr) throw DataError(a.data + ": no utterance " + a.utterance);
  if (a.t >= utt->features.rows()) {
    throw ConfigError("--t " + std::to_string(a.t) + " is outside utterance " + a.utterance +
                      " (" + std::to_string(utt->features.rows()) + " frames)");
  }
  if (a.k >= ctc->params().config().output_dim) {
    throw ConfigError("--k " + std::to_string(a.k) + " is not an output unit");
  }
  const Matrix heat = input_sensitivity(ctc->params(), utt->features, a.t, a.k);
  write_features(a.out, heat);
  out << "wrote " << heat.rows() << "x" << heat.cols() << " sensitivity map to " << a.out << "\n";
  return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string format_transcription(const std::string& id, const Hypothesis& hyp) {
  std::string line = id + "\t";
  for (std::size_t i = 0; i < hyp.labels.size(); ++i) {
    if (i > 0) line += ' ';
    line += std::to_string(hyp.labels[i]);
  }
  return line + "\t" + shortest(hyp.log_prob);
}

std::vector<TranscriptionBlock> read_transcriptions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open transcription file " + path);
  std::vector<TranscriptionBlock> blocks;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      return DataError(path + ":" + std::to_string(lineno) + ": " + why);
    };
    const std::size_t tab1 = line.find('\t');
    const std::size_t tab2 = tab1 == std::string::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos || line.find('\t', tab2 + 1) != std::string::npos) {
      throw fail("expected three tab-separated fields");
    }
    const std::string id = line.substr(0, tab1);
    if (id.empty()) throw fail("empty utterance id");
    Hypothesis h;
    std::istringstream labels(line.substr(tab1 + 1, tab2 - tab1 - 1));
    std::string tok;
    while (labels >> tok) {
      Label v = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || p != tok.data() + tok.size() || v < 0) {
        throw fail("bad label '" + tok + "'");
      }
      h.labels.push_back(v);
    }
    const std::string lp = line.substr(tab2 + 1);
    auto [p, ec] = std::from_chars(lp.data(), lp.data() + lp.size(), h.log_prob);
    if (ec != std::errc() || p != lp.data() + lp.size()) {
      throw fail("bad log-probability '" + lp + "'");
    }
    if (blocks.empty() || blocks.back().id != id) blocks.push_back({id, {}});
    blocks.back().hypotheses.push_back(std::move(h));
  }
  return blocks;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deep bidirectional LSTM sequence labelling with CTC and transducer losses",
               "dblstm"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a seeded synthetic labelling task");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--seed", synth.spec.seed, "Generator seed");
  c_synth->add_option("--K", synth.spec.K, "Number of label classes");
  c_synth->add_option("--train", synth.spec.train_count, "Training utterances");
  c_synth->add_option("--dev", synth.spec.dev_count, "Development utterances");
  c_synth->add_option("--test", synth.spec.test_count, "Test utterances");
  c_synth->add_option("--t-min", synth.spec.t_min, "Shortest utterance (frames)");
  c_synth->add_option("--t-max", synth.spec.t_max, "Longest utterance (frames)");
  c_synth->add_option("--events-min", synth.spec.events_min, "Fewest events per utterance");
  c_synth->add_option("--events-max", synth.spec.events_max, "Most events per utterance");
  c_synth->add_option("--duration-min", synth.spec.duration_min, "Shortest event (frames)");
  c_synth->add_option("--duration-max", synth.spec.duration_max, "Longest event (frames)");
  c_synth->add_option("--dim", synth.spec.dim, "Feature dimension");
  c_synth->add_option("--noise", synth.spec.noise, "Background noise standard deviation");
  c_synth->add_flag("--random-polarity", synth.spec.random_polarity,
                    "Flip the sign of each event with probability 1/2");
  c_synth->add_option("--predictability", synth.spec.label_predictability,
                      "Probability that a label follows its fixed successor");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model from a run config");
  c_train->add_option("config", train.config, "Run config (JSON)")->required();
  c_train->add_option("--seed", train.seed, "Override the config seed");
  c_train->add_option("--train", train.train, "Override the training manifest");
  c_train->add_option("--dev", train.dev, "Override the development manifest");
  c_train->add_option("--out", train.out, "Override the output directory");
  c_train->add_option("--beam-width", train.beam_width, "Override the dev decoding beam width");
  c_train->add_flag("--resume", train.resume, "Continue from checkpoints in the output directory");

  DecodeArgs decode;
  auto* c_decode = app.add_subcommand("decode", "Transcribe a dataset with beam search");
  c_decode->add_option("--checkpoint", decode.checkpoint, "Model checkpoint")->required();
  c_decode->add_option("--data", decode.data, "Dataset manifest")->required();
  c_decode->add_option("--out", decode.out, "Transcription file (default stdout)");
  c_decode->add_option("--beam-width", decode.beam_width, "Beam width");
  c_decode->add_option("--nbest", decode.nbest, "Hypotheses per utterance");
  c_decode->add_option("--max-emissions", decode.max_emissions,
                       "Transducer emissions allowed per frame");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Score transcriptions against references");
  c_eval->add_option("--refs", eval.refs, "Reference dataset manifest")->required();
  c_eval->add_option("--hyps", eval.hyps, "Transcription file")->required();
  c_eval->add_option("--map", eval.map, "Label mapping applied before scoring");

  ConfigArgs gradcheck;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of the loss gradient");
  c_grad->add_option("config", gradcheck.config, "Run config (JSON)")->required();
  c_grad->add_option("--seed", gradcheck.seed, "Override the config seed");

  ConfigArgs params;
  auto* c_params = app.add_subcommand("params", "Count the weights of a configured model");
  c_params->add_option("config", params.config, "Run config (JSON)")->required();

  SensitivityArgs sens;
  auto* c_sens = app.add_subcommand("sensitivity", "Input sensitivity map of one output");
  c_sens->add_option("--checkpoint", sens.checkpoint, "CTC model checkpoint")->required();
  c_sens->add_option("--data", sens.data, "Dataset manifest")->required();
  c_sens->add_option("--utt", sens.utterance, "Utterance id")->required();
  c_sens->add_option("--t", sens.t, "Output frame")->required();
  c_sens->add_option("--k", sens.k, "Output unit")->required();
  c_sens->add_option("--out", sens.out, "Heatmap file (feature-file format)")->required();

  std::vector<std::string> rest(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth, out);
    if (c_train->parsed()) return cmd_train(train, out);
    if (c_decode->parsed()) return cmd_decode(decode, out);
    if (c_eval->parsed()) return cmd_eval(eval, out);
    if (c_grad->parsed()) return cmd_gradcheck(gradcheck, out);
    if (c_params->parsed()) return cmd_params(params, out);
    if (c_sens->parsed()) return cmd_sensitivity(sens, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "file error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ZeroProbabilityError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace dblstm::cli
