#pragma once

// Experiment description read from a JSON file. Every field is checked
// before any compute starts and unknown keys are rejected, so a typo can
// never silently fall back to a default.
//
//   {
//     "seed": 1,
//     "loss": "ctc" | "transducer" | "transducer_pretrained",
//     "network": {"input_dim", "num_labels", "levels", "hidden",
//                 "direction", "cell", "prediction_levels", "init_range"},
//     "optimizer": {"learning_rate", "momentum"},
//     "schedule": {"noise_sigma", "noise_phase", "noise_phase_metric",
//                  "patience", "max_epochs"},
//     "pretrain": {"ctc": <stage>, "prediction": <stage>},
//     "decode": {"beam_width", "max_emissions_per_step"},
//     "data": {"train", "dev", "test", "normalize"},
//     "output_dir": "...",
//     "gradcheck": {"epsilon", "tolerance", "samples", "frames", "labels"}
//   }
//
// A <stage> is a <schedule> that may also set "learning_rate"; stages
// otherwise train at optimizer.learning_rate.
// Only "loss" and the network sizes are required. Relative paths resolve
// against the directory holding the config file.

#include <cstdint>
#include <stdexcept>
#include <string>

#include "dblstm/models.hpp"
#include "dblstm/training.hpp"

namespace dblstm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LossKind { ctc, transducer, transducer_pretrained };

std::string to_string(LossKind kind);

struct GradcheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  std::size_t samples = 0;  // 0 checks every parameter
  std::size_t frames = 5;
  std::size_t labels = 2;
};

struct RunConfig {
  std::uint64_t seed = 1;
  LossKind loss = LossKind::ctc;

  std::size_t input_dim = 0;
  std::size_t num_labels = 0;
  std::size_t levels = 1;
  std::size_t hidden = 0;
  Direction direction = Direction::bidirectional;
  CellKind cell = CellKind::lstm;
  std::size_t prediction_levels = 1;
  double init_range = 0.1;

  double learning_rate = 1e-4;
  double momentum = 0.9;
  ScheduleOptions schedule;
  ScheduleOptions ctc_pretrain_schedule;
  ScheduleOptions prediction_pretrain_schedule;
  double ctc_pretrain_learning_rate = 1e-4;
  double prediction_pretrain_learning_rate = 1e-4;

  std::size_t beam_width = 100;
  std::size_t max_emissions_per_step = 10;

  std::string train_path;
  std::string dev_path;
  std::string test_path;
  bool normalize = true;
  std::string output_dir;

  GradcheckOptions gradcheck;

  /// The CTC network: acoustic stack plus a K+1 softmax.
  NetworkConfig ctc_network() const;
  TransducerConfig transducer() const;
  /// Architecture of the model the final training stage produces.
  ModelSpec model_spec() const;
};

RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir = "");
RunConfig load_run_config(const std::string& path);

}  // namespace dblstm
