#include "dblstm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace dblstm {

using nlohmann::ordered_json;

namespace {

ordered_json network_to_json(const NetworkConfig& c) {
  return ordered_json{{"input_dim", c.input_dim},     {"levels", c.levels},
                      {"hidden", c.hidden},           {"direction", to_string(c.direction)},
                      {"cell", to_string(c.cell)},    {"output_dim", c.output_dim}};
}

NetworkConfig network_from_json(const ordered_json& j) {
  NetworkConfig c;
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.levels = j.at("levels").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.direction = parse_direction(j.at("direction").get<std::string>());
  c.cell = parse_cell_kind(j.at("cell").get<std::string>());
  c.output_dim = j.at("output_dim").get<std::size_t>();
  return c;
}

ordered_json model_to_json(const ModelSpec& m) {
  ordered_json j{{"kind", to_string(m.kind)}};
  if (m.kind == ModelKind::transducer) {
    j["K"] = m.transducer.K;
    j["acoustic"] = network_to_json(m.transducer.acoustic);
    j["prediction"] = network_to_json(m.transducer.prediction);
  } else {
    j["network"] = network_to_json(m.network);
  }
  return j;
}

ModelSpec model_from_json(const ordered_json& j) {
  ModelSpec m;
  m.kind = parse_model_kind(j.at("kind").get<std::string>());
  if (m.kind == ModelKind::transducer) {
    m.transducer.K = j.at("K").get<std::size_t>();
    m.transducer.acoustic = network_from_json(j.at("acoustic"));
    m.transducer.prediction = network_from_json(j.at("prediction"));
    m.transducer.validate();
  } else {
    m.network = network_from_json(j.at("network"));
    m.network.validate();
  }
  return m;
}

void put_word(std::string& out, std::uint64_t w) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((w >> (8 * b)) & 0xff));
}

void put_double(std::string& out, double v) { put_word(out, std::bit_cast<std::uint64_t>(v)); }

void put_doubles(std::string& out, std::span<const double> v) {
  for (double x : v) put_double(out, x);
}

class BlobReader {
 public:
  explicit BlobReader(std::string_view blob) : blob_(blob) {}

  std::uint64_t word() {
    std::uint64_t w = 0;
    for (int b = 0; b < 8; ++b) {
      w |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob_[pos_ + b])) << (8 * b);
    }
    pos_ += 8;
    return w;
  }
  double real() { return std::bit_cast<double>(word()); }
  Vector reals(std::size_t n) {
    Vector v(n);
    for (auto& x : v) x = real();
    return v;
  }

 private:
  std::string_view blob_;
  std::size_t pos_ = 0;
};

constexpr std::size_t kScheduleScalars = 9;

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  const TrainSchedule& s = c.trainer.schedule;
  const ScheduleOptions& so = s.options;
  const std::size_t norm_dim = c.norm ? c.norm->dim() : 0;
  ordered_json header{
      {"model", model_to_json(c.model)},
      {"optimizer",
       {{"learning_rate", c.trainer.optimizer.learning_rate},
        {"momentum", c.trainer.optimizer.momentum}}},
      {"schedule",
       {{"noise_sigma", so.noise_sigma},
        {"noise_phase", so.noise_phase},
        {"noise_phase_metric", to_string(so.noise_phase_metric)},
        {"patience", so.patience},
        {"max_epochs", so.max_epochs}}},
      {"sections",
       {{"params", c.params.size()},
        {"velocity", c.trainer.optimizer.velocity.size()},
        {"rng_words", 4},
        {"schedule_scalars", kScheduleScalars},
        {"best_params", s.best_params.size()},
        {"norm_dim", norm_dim}}}};

  std::string blob;
  put_doubles(blob, c.params);
  put_doubles(blob, c.trainer.optimizer.velocity);
  for (std::uint64_t w : c.trainer.rng.state()) put_word(blob, w);
  put_double(blob, s.phase == Phase::with_noise ? 1.0 : 0.0);
  put_double(blob, static_cast<double>(s.epoch));
  put_double(blob, static_cast<double>(s.phase_epochs));
  put_double(blob, static_cast<double>(s.since_improvement));
  put_double(blob, s.best_dev_log_prob);
  put_double(blob, s.best_dev_per);
  put_double(blob, s.per_at_best_log_prob);
  put_double(blob, static_cast<double>(s.best_epoch));
  put_double(blob, s.finished ? 1.0 : 0.0);
  put_doubles(blob, s.best_params);
  if (c.norm) {
    put_doubles(blob, c.norm->mean);
    put_doubles(blob, c.norm->stddev);
  }

  std::string out = "DBLSTM-CHECKPOINT\nversion " + std::to_string(kCheckpointVersion) +
                    "\nheader " + header.dump() + "\nblob_bytes " + std::to_string(blob.size()) +
                    "\n";
  out += blob;
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& source) {
  std::size_t pos = 0;
  auto next_line = [&](const char* what) {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) {
      throw CheckpointError(source + ": truncated header (missing " + what + ")");
    }
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  auto field = [&](const std::string& line, const std::string& key) {
    if (line.rfind(key + " ", 0) != 0) {
      throw CheckpointError(source + ": expected '" + key + "' line in header");
    }
    return line.substr(key.size() + 1);
  };

  if (next_line("magic") != "DBLSTM-CHECKPOINT") {
    throw CheckpointError(source + ": not a checkpoint file");
  }
  const std::string version = field(next_line("version"), "version");
  if (version != std::to_string(kCheckpointVersion)) {
    throw CheckpointError(source + ": unsupported checkpoint version " + version +
                          " (this build reads version " + std::to_string(kCheckpointVersion) +
                          ")");
  }
  ordered_json header;
  try {
    header = ordered_json::parse(field(next_line("header"), "header"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(source + ": malformed header: " + e.what());
  }
  const std::string blob_field = field(next_line("blob_bytes"), "blob_bytes");
  std::size_t blob_bytes = 0;
  try {
    blob_bytes = std::stoull(blob_field);
  } catch (const std::exception&) {
    throw CheckpointError(source + ": bad blob_bytes '" + blob_field + "'");
  }
  const std::size_t actual = bytes.size() - pos;
  if (actual != blob_bytes) {
    throw CheckpointError(source + ": blob length mismatch: expected " +
                          std::to_string(blob_bytes) + " bytes, found " + std::to_string(actual));
  }

  Checkpoint c;
  try {
    c.model = model_from_json(header.at("model"));
    const auto& opt = header.at("optimizer");
    c.trainer.optimizer.learning_rate = opt.at("learning_rate").get<double>();
    c.trainer.optimizer.momentum = opt.at("momentum").get<double>();
    const auto& sj = header.at("schedule");
    ScheduleOptions& so = c.trainer.schedule.options;
    so.noise_sigma = sj.at("noise_sigma").get<double>();
    so.noise_phase = sj.at("noise_phase").get<bool>();
    so.noise_phase_metric = parse_stop_metric(sj.at("noise_phase_metric").get<std::string>());
    so.patience = sj.at("patience").get<std::size_t>();
    so.max_epochs = sj.at("max_epochs").get<std::size_t>();
  } catch (const std::exception& e) {
    throw CheckpointError(source + ": invalid header: " + e.what());
  }
  const auto& sec = header.at("sections");
  const auto n_params = sec.at("params").get<std::size_t>();
  const auto n_velocity = sec.at("velocity").get<std::size_t>();
  const auto n_best = sec.at("best_params").get<std::size_t>();
  const auto norm_dim = sec.at("norm_dim").get<std::size_t>();
  if (sec.at("rng_words").get<std::size_t>() != 4 ||
      sec.at("schedule_scalars").get<std::size_t>() != kScheduleScalars) {
    throw CheckpointError(source + ": unexpected section layout");
  }
  const std::size_t words = n_params + n_velocity + 4 + kScheduleScalars + n_best + 2 * norm_dim;
  if (words * 8 != blob_bytes) {
    throw CheckpointError(source + ": blob length mismatch: sections need " +
                          std::to_string(words * 8) + " bytes, blob_bytes says " +
                          std::to_string(blob_bytes));
  }

  BlobReader r(std::string_view(bytes).substr(pos));
  c.params = r.reals(n_params);
  c.trainer.optimizer.velocity = r.reals(n_velocity);
  Rng::State st;
  for (auto& w : st) w = r.word();
  c.trainer.rng.set_state(st);
  TrainSchedule& s = c.trainer.schedule;
  s.phase = r.real() != 0.0 ? Phase::with_noise : Phase::noise_free;
  s.epoch = static_cast<std::size_t>(r.real());
  s.phase_epochs = static_cast<std::size_t>(r.real());
  s.since_improvement = static_cast<std::size_t>(r.real());
  s.best_dev_log_prob = r.real();
  s.best_dev_per = r.real();
  s.per_at_best_log_prob = r.real();
  s.best_epoch = static_cast<std::size_t>(r.real());
  s.finished = r.real() != 0.0;
  s.best_params = r.reals(n_best);
  if (norm_dim > 0) {
    NormStats ns;
    ns.mean = r.reals(norm_dim);
    ns.stddev = r.reals(norm_dim);
    c.norm = std::move(ns);
  }
  return c;
}

void checkpoint_save(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), path);
}

std::unique_ptr<SequenceModel> restore_model(const Checkpoint& ckpt) {
  auto model = instantiate(ckpt.model);
  if (model->size() != ckpt.params.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(ckpt.params.size()) +
                          " parameters, architecture needs " + std::to_string(model->size()));
  }
  model->unflatten(ckpt.params);
  return model;
}

}  // namespace dblstm
