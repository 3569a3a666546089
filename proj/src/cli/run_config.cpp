#include "dblstm/run_config.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dblstm {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::ctc: return "ctc";
    case LossKind::transducer: return "transducer";
    case LossKind::transducer_pretrained: return "transducer_pretrained";
  }
  return "?";
}

namespace {

// Strict view of one JSON object: every key read is remembered and
// finish() rejects whatever is left over.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(label() + "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& at(const std::string& key) {
    if (!has(key)) throw ConfigError(label() + "missing required key '" + key + "'");
    return j_.at(key);
  }

  std::string path(const std::string& key) const {
    return where_.empty() ? key : where_ + "." + key;
  }

  std::size_t count(const std::string& key, std::size_t fallback, bool required, std::size_t min) {
    if (!required && !has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError(path(key) + ": expected a non-negative integer");
    }
    const auto n = v.get<std::size_t>();
    if (n < min) throw ConfigError(path(key) + ": must be >= " + std::to_string(min));
    return n;
  }

  double real(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_number()) throw ConfigError(path(key) + ": expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(path(key) + ": must be finite");
    return d;
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_boolean()) throw ConfigError(path(key) + ": expected true or false");
    return v.get<bool>();
  }

  std::string text(const std::string& key, const std::string& fallback, bool required = false) {
    if (!required && !has(key)) return fallback;
    const json& v = at(key);
    if (!v.is_string()) throw ConfigError(path(key) + ": expected a string");
    return v.get<std::string>();
  }

  template <class Parse>
  auto choice(const std::string& key, decltype(std::declval<Parse>()(std::string())) fallback,
              Parse parse, bool required = false) {
    if (!required && !has(key)) return fallback;
    const std::string s = text(key, "", true);
    try {
      return parse(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(label() + "unknown key '" + it.key() + "'");
    }
  }

 private:
  std::string label() const { return where_.empty() ? "config: " : where_ + ": "; }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

ScheduleOptions read_schedule(const json& j, const std::string& where, ScheduleOptions s) {
  ObjectReader r(j, where);
  s.noise_sigma = r.real("noise_sigma", s.noise_sigma);
  if (s.noise_sigma < 0.0) throw ConfigError(r.path("noise_sigma") + ": must be >= 0");
  s.noise_phase = r.boolean("noise_phase", s.noise_phase);
  s.noise_phase_metric = r.choice("noise_phase_metric", s.noise_phase_metric, parse_stop_metric);
  s.patience = r.count("patience", s.patience, false, 1);
  s.max_epochs = r.count("max_epochs", s.max_epochs, false, 1);
  r.finish();
  return s;
}

LossKind parse_loss(const std::string& s) {
  if (s == "ctc") return LossKind::ctc;
  if (s == "transducer") return LossKind::transducer;
  if (s == "transducer_pretrained") return LossKind::transducer_pretrained;
  throw std::invalid_argument("unknown loss '" + s +
                              "' (expected ctc, transducer or transducer_pretrained)");
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty() || base.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

}  // namespace

NetworkConfig RunConfig::ctc_network() const {
  NetworkConfig c;
  c.input_dim = input_dim;
  c.levels = levels;
  c.hidden = hidden;
  c.direction = direction;
  c.cell = cell;
  c.output_dim = num_labels + 1;
  return c;
}

TransducerConfig RunConfig::transducer() const {
  TransducerConfig t =
      make_transducer_config(input_dim, num_labels, hidden, levels, direction, prediction_levels);
  t.acoustic.cell = cell;
  t.prediction.cell = cell;
  return t;
}

ModelSpec RunConfig::model_spec() const {
  ModelSpec spec;
  if (loss == LossKind::ctc) {
    spec.kind = ModelKind::ctc;
    spec.network = ctc_network();
  } else {
    spec.kind = ModelKind::transducer;
    spec.transducer = transducer();
  }
  return spec;
}

RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  RunConfig c;
  ObjectReader r(root, "");
  c.seed = r.count("seed", c.seed, false, 0);
  c.loss = r.choice("loss", c.loss, parse_loss, true);

  {
    ObjectReader n(r.at("network"), "network");
    c.input_dim = n.count("input_dim", 0, true, 1);
    c.num_labels = n.count("num_labels", 0, true, 1);
    c.levels = n.count("levels", c.levels, false, 1);
    c.hidden = n.count("hidden", 0, true, 1);
    c.direction = n.choice("direction", c.direction, parse_direction);
    c.cell = n.choice("cell", c.cell, parse_cell_kind);
    c.prediction_levels = n.count("prediction_levels", c.prediction_levels, false, 1);
    c.init_range = n.real("init_range", c.init_range);
    if (c.init_range < 0.0) throw ConfigError("network.init_range: must be >= 0");
    n.finish();
  }
  if (r.has("optimizer")) {
    ObjectReader o(r.at("optimizer"), "optimizer");
    c.learning_rate = o.real("learning_rate", c.learning_rate);
    c.momentum = o.real("momentum", c.momentum);
    if (c.learning_rate < 0.0) throw ConfigError("optimizer.learning_rate: must be >= 0");
    if (c.momentum < 0.0 || c.momentum >= 1.0) {
      throw ConfigError("optimizer.momentum: must lie in [0, 1)");
    }
    o.finish();
  }
  if (r.has("schedule")) c.schedule = read_schedule(r.at("schedule"), "schedule", c.schedule);

  // Pretraining stages stop at the best dev log-probability in both phases.
  ScheduleOptions pre = c.schedule;
  pre.noise_phase_metric = StopMetric::log_prob;
  c.ctc_pretrain_schedule = pre;
  c.prediction_pretrain_schedule = pre;
  c.ctc_pretrain_learning_rate = c.learning_rate;
  c.prediction_pretrain_learning_rate = c.learning_rate;
  if (r.has("pretrain")) {
    ObjectReader p(r.at("pretrain"), "pretrain");
    // A stage object is a schedule plus an optional learning_rate override.
    auto stage = [&](const char* key, ScheduleOptions& sched, double& lr) {
      if (!p.has(key)) return;
      const std::string where = std::string("pretrain.") + key;
      json j = p.at(key);
      if (j.is_object() && j.contains("learning_rate")) {
        if (!j["learning_rate"].is_number()) {
          throw ConfigError(where + ".learning_rate: expected a number");
        }
        lr = j["learning_rate"].get<double>();
        if (lr < 0.0) throw ConfigError(where + ".learning_rate: must be >= 0");
        j.erase("learning_rate");
      }
      sched = read_schedule(j, where, pre);
    };
    stage("ctc", c.ctc_pretrain_schedule, c.ctc_pretrain_learning_rate);
    stage("prediction", c.prediction_pretrain_schedule, c.prediction_pretrain_learning_rate);
    p.finish();
  }
  if (r.has("decode")) {
    ObjectReader d(r.at("decode"), "decode");
    c.beam_width = d.count("beam_width", c.beam_width, false, 1);
    c.max_emissions_per_step = d.count("max_emissions_per_step", c.max_emissions_per_step, false, 1);
    d.finish();
  }
  if (r.has("data")) {
    ObjectReader d(r.at("data"), "data");
    c.train_path = resolve(base_dir, d.text("train", ""));
    c.dev_path = resolve(base_dir, d.text("dev", ""));
    c.test_path = resolve(base_dir, d.text("test", ""));
    c.normalize = d.boolean("normalize", c.normalize);
    d.finish();
  }
  c.output_dir = resolve(base_dir, r.text("output_dir", ""));
  if (r.has("gradcheck")) {
    ObjectReader g(r.at("gradcheck"), "gradcheck");
    c.gradcheck.epsilon = g.real("epsilon", c.gradcheck.epsilon);
    c.gradcheck.tolerance = g.real("tolerance", c.gradcheck.tolerance);
    c.gradcheck.samples = g.count("samples", c.gradcheck.samples, false, 0);
    c.gradcheck.frames = g.count("frames", c.gradcheck.frames, false, 1);
    c.gradcheck.labels = g.count("labels", c.gradcheck.labels, false, 0);
    if (!(c.gradcheck.epsilon > 0.0)) throw ConfigError("gradcheck.epsilon: must be > 0");
    if (!(c.gradcheck.tolerance > 0.0)) throw ConfigError("gradcheck.tolerance: must be > 0");
    g.finish();
  }
  r.finish();

  try {
    if (c.loss == LossKind::ctc) {
      c.ctc_network().validate();
    } else {
      c.transducer().validate();
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("network: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str(), fs::path(path).parent_path().string());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace dblstm
