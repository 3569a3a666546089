#pragma once

// Per-sequence SGD with classical momentum, per-sequence Gaussian weight
// noise, the two-phase early-stopping schedule, finite-difference gradient
// checking and the epoch driver that ties them together.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>

#include "dblstm/data.hpp"
#include "dblstm/models.hpp"
#include "dblstm/numerics.hpp"
#include "dblstm/parallel.hpp"

namespace dblstm {

struct OptimizerState {
  double learning_rate = 1e-4;
  double momentum = 0.9;
  Vector velocity;  // lazily sized to the parameter count
};

enum class StepResult { applied, refused };

/// v <- mu v - eta g; w <- w + v. A gradient containing NaN or Inf leaves
/// both params and velocity untouched and returns refused.
StepResult sgd_step(Vector& params, std::span<const double> grads, OptimizerState& state);

/// Copy of `params` with independent N(0, sigma) noise on every scalar.
Vector apply_weight_noise(std::span<const double> params, double sigma, Rng& rng);

enum class Phase { noise_free, with_noise };
enum class StopMetric { log_prob, per };
enum class ControlAction { continue_training, switch_to_noise, stop_and_restore };

std::string to_string(Phase phase);
Phase parse_phase(const std::string& s);
std::string to_string(StopMetric m);
StopMetric parse_stop_metric(const std::string& s);
std::string to_string(ControlAction a);

struct ScheduleOptions {
  double noise_sigma = 0.075;
  /// false: a single noise-free phase, stopped at the best dev log-prob.
  bool noise_phase = true;
  StopMetric noise_phase_metric = StopMetric::per;
  std::size_t patience = 10;
  /// Hard cap on epochs over both phases; reaching it stops and restores.
  std::size_t max_epochs = 1000;

  friend bool operator==(const ScheduleOptions&, const ScheduleOptions&) = default;
};

struct TrainSchedule {
  ScheduleOptions options;
  Phase phase = Phase::noise_free;
  std::size_t epoch = 0;  // completed epochs, both phases
  std::size_t phase_epochs = 0;
  std::size_t since_improvement = 0;
  double best_dev_log_prob = -std::numeric_limits<double>::infinity();
  double best_dev_per = std::numeric_limits<double>::infinity();
  /// Dev PER measured at the best-log-prob epoch of the noise-free phase.
  double per_at_best_log_prob = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  Vector best_params;
  bool finished = false;

  friend bool operator==(const TrainSchedule&, const TrainSchedule&) = default;
};

/// Records one epoch's dev metrics and decides what happens next. The
/// noise-free phase tracks the highest dev log-prob; when patience runs out
/// it switches to the noise phase (the caller restores best_params). The
/// noise phase tracks the lowest dev PER (or highest log-prob) and stops.
ControlAction early_stop_controller(TrainSchedule& schedule, double dev_log_prob, double dev_per,
                                    std::span<const double> params);

class TrainObserver {
 public:
  virtual ~TrainObserver() = default;
  virtual void on_noise_draw(std::size_t /*sequence*/, std::span<const double> /*noisy*/) {}
  virtual void on_gradient(std::size_t /*sequence*/, std::span<const double> /*at_params*/) {}
  virtual void on_skip(const std::string& /*utterance*/, const std::string& /*reason*/) {}
};

struct EpochMetrics {
  double mean_log_prob = -std::numeric_limits<double>::infinity();
  std::size_t sequences = 0;
  std::size_t skipped = 0;
};

/// One pass over `train` in an order shuffled by `rng`. In the noise phase a
/// single noise sample is drawn per sequence; the gradient is evaluated at
/// the noisy weights and applied to the clean ones.
EpochMetrics train_epoch(SequenceModel& model, const Dataset& train, Phase phase, double sigma,
                         OptimizerState& optimizer, Rng& rng, TrainObserver* observer = nullptr);

double relative_error(double a, double b);

struct GradSample {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::vector<GradSample> samples;
};

/// Central differences (f(w+eps) - f(w-eps)) / 2eps against `analytic` on a
/// seeded sample of `n_sampled` coordinates (all of them when n_sampled is
/// at least the parameter count).
GradCheckReport gradient_check(const std::function<double(std::span<const double>)>& loss,
                               std::span<const double> params, std::span<const double> analytic,
                               double eps, std::size_t n_sampled, Rng& rng);

/// Gradient check of -log Pr(z|x) for one utterance. The numeric side is
/// evaluated in extended precision (see extended.hpp).
GradCheckReport gradient_check(const SequenceModel& model, const Utterance& utt, double eps,
                               std::size_t n_sampled, Rng& rng);

struct EpochRecord {
  std::size_t epoch = 0;
  Phase phase = Phase::noise_free;
  double train_log_prob = 0.0;
  double dev_log_prob = 0.0;
  std::optional<double> dev_per;
  std::optional<double> seconds;
  std::size_t skipped = 0;

  /// One JSON object on a single line.
  std::string to_json() const;
};

struct TrainerOptions {
  ScheduleOptions schedule;
  double learning_rate = 1e-4;
  double momentum = 0.9;
  EvalOptions dev_eval;
  bool log_timing = false;
};

/// Optimiser, schedule and generator: everything besides the weights that
/// a resumed run needs.
struct TrainerState {
  OptimizerState optimizer;
  TrainSchedule schedule;
  Rng rng;
};

class Trainer {
 public:
  Trainer(SequenceModel& model, const Dataset& train, const Dataset& dev,
          const TrainerOptions& options, std::uint64_t seed);

  /// Runs one epoch plus dev evaluation and the stopping decision. Returns
  /// nullopt once training has finished.
  std::optional<EpochRecord> step();
  bool finished() const { return state_.schedule.finished; }
  ControlAction last_action() const { return last_action_; }

  TrainerState& state() { return state_; }
  const TrainerState& state() const { return state_; }
  void set_observer(TrainObserver* observer) { observer_ = observer; }

 private:
  SequenceModel& model_;
  const Dataset& train_;
  const Dataset& dev_;
  TrainerOptions options_;
  TrainerState state_;
  ControlAction last_action_ = ControlAction::continue_training;
  TrainObserver* observer_ = nullptr;
};

}  // namespace dblstm
