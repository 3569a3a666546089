#include "dblstm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dblstm/extended.hpp"
#include "json.hpp"

namespace dblstm {

StepResult sgd_step(Vector& params, std::span<const double> grads, OptimizerState& state) {
  if (grads.size() != params.size()) {
    throw DimensionError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  }
  if (!all_finite(grads)) return StepResult::refused;
  if (state.velocity.empty()) state.velocity.assign(params.size(), 0.0);
  if (state.velocity.size() != params.size()) {
    throw DimensionError("sgd_step: velocity has " + std::to_string(state.velocity.size()) +
                         " entries for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.velocity[i] = state.momentum * state.velocity[i] - state.learning_rate * grads[i];
    params[i] += state.velocity[i];
  }
  return StepResult::applied;
}

Vector apply_weight_noise(std::span<const double> params, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("weight noise: sigma must be >= 0");
  Vector noisy(params.begin(), params.end());
  if (sigma == 0.0) return noisy;
  for (auto& w : noisy) w += rng.gaussian(0.0, sigma);
  return noisy;
}

std::string to_string(Phase phase) {
  return phase == Phase::noise_free ? "noise_free" : "with_noise";
}

Phase parse_phase(const std::string& s) {
  if (s == "noise_free") return Phase::noise_free;
  if (s == "with_noise") return Phase::with_noise;
  throw std::invalid_argument("unknown phase '" + s + "'");
}

std::string to_string(StopMetric m) { return m == StopMetric::per ? "per" : "log_prob"; }

StopMetric parse_stop_metric(const std::string& s) {
  if (s == "per") return StopMetric::per;
  if (s == "log_prob") return StopMetric::log_prob;
  throw std::invalid_argument("unknown stopping metric '" + s + "' (expected per or log_prob)");
}

std::string to_string(ControlAction a) {
  switch (a) {
    case ControlAction::continue_training: return "continue";
    case ControlAction::switch_to_noise: return "switch_to_noise";
    case ControlAction::stop_and_restore: return "stop_and_restore";
  }
  return "?";
}

ControlAction early_stop_controller(TrainSchedule& s, double dev_log_prob, double dev_per,
                                    std::span<const double> params) {
  if (s.finished) return ControlAction::stop_and_restore;
  ++s.epoch;
  ++s.phase_epochs;
  bool improved = false;
  if (s.phase == Phase::noise_free ||
      s.options.noise_phase_metric == StopMetric::log_prob) {
    improved = dev_log_prob > s.best_dev_log_prob;
    if (improved) {
      s.best_dev_log_prob = dev_log_prob;
      if (s.phase == Phase::noise_free) s.per_at_best_log_prob = dev_per;
    }
  } else {
    improved = dev_per < s.best_dev_per;
    if (improved) s.best_dev_per = dev_per;
  }
  if (improved || s.best_params.empty()) {
    s.best_params.assign(params.begin(), params.end());
    s.best_epoch = s.epoch;
  }
  s.since_improvement = improved ? 0 : s.since_improvement + 1;

  const bool out_of_epochs = s.epoch >= s.options.max_epochs;
  if (s.since_improvement < s.options.patience && !out_of_epochs) {
    return ControlAction::continue_training;
  }
  if (s.phase == Phase::noise_free && s.options.noise_phase && !out_of_epochs) {
    // The noise phase starts from the best noise-free weights, which are
    // also its first candidate.
    s.phase = Phase::with_noise;
    s.phase_epochs = 0;
    s.since_improvement = 0;
    s.best_dev_per = s.per_at_best_log_prob;
    return ControlAction::switch_to_noise;
  }
  s.finished = true;
  return ControlAction::stop_and_restore;
}

EpochMetrics train_epoch(SequenceModel& model, const Dataset& train, Phase phase, double sigma,
                         OptimizerState& optimizer, Rng& rng, TrainObserver* observer) {
  if (train.empty()) throw std::invalid_argument("train_epoch: empty training set");
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, rng);

  EpochMetrics m;
  double total = 0.0;
  Vector clean = model.flatten();
  Vector grad;
  for (std::size_t n = 0; n < order.size(); ++n) {
    const Utterance& u = train[order[n]];
    ++m.sequences;
    if (phase == Phase::with_noise) {
      // One draw per sequence, held fixed across all of its timesteps.
      const Vector noisy = apply_weight_noise(clean, sigma, rng);
      if (observer != nullptr) observer->on_noise_draw(n, noisy);
      model.unflatten(noisy);
    }
    double lp = kLogZero;
    std::string failure;
    try {
      if (observer != nullptr) observer->on_gradient(n, model.flatten());
      lp = model.loss_gradient(u.features, u.targets, grad);
    } catch (const ZeroProbabilityError& e) {
      failure = e.what();
    }
    if (phase == Phase::with_noise) model.unflatten(clean);
    if (failure.empty() && !std::isfinite(lp)) failure = "non-finite log-probability";
    if (failure.empty() && sgd_step(clean, grad, optimizer) == StepResult::refused) {
      failure = "non-finite gradient";
    }
    if (!failure.empty()) {
      ++m.skipped;
      if (observer != nullptr) observer->on_skip(u.id, failure);
      continue;
    }
    model.unflatten(clean);
    total += lp;
  }
  if (m.skipped == m.sequences) {
    throw NumericError("train_epoch: every sequence was skipped");
  }
  m.mean_log_prob = total / static_cast<double>(m.sequences - m.skipped);
  return m;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b));
}

namespace {

std::vector<std::size_t> sample_coordinates(std::size_t n, std::size_t n_sampled, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n_sampled < idx.size()) {
    // Partial Fisher-Yates: the first n_sampled slots are a uniform sample.
    for (std::size_t i = 0; i < n_sampled; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(n_sampled);
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

GradCheckReport compare(std::span<const double> analytic, std::span<const std::size_t> idx,
                        const std::function<double(std::size_t)>& numeric_at) {
  GradCheckReport rep;
  for (std::size_t i : idx) {
    const double numeric = numeric_at(i);
    const double err = relative_error(analytic[i], numeric);
    rep.max_abs_error = std::max(rep.max_abs_error, std::abs(analytic[i] - numeric));
    rep.samples.push_back({i, analytic[i], numeric});
    if (rep.checked == 0 || err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = i;
      rep.analytic_at_worst = analytic[i];
      rep.numeric_at_worst = numeric;
    }
    ++rep.checked;
  }
  return rep;
}

}  // namespace

GradCheckReport gradient_check(const std::function<double(std::span<const double>)>& loss,
                               std::span<const double> params, std::span<const double> analytic,
                               double eps, std::size_t n_sampled, Rng& rng) {
  if (analytic.size() != params.size()) {
    throw DimensionError("gradient_check: gradient and parameter lengths differ");
  }
  const auto idx = sample_coordinates(params.size(), n_sampled, rng);
  Vector w(params.begin(), params.end());
  return compare(analytic, idx, [&](std::size_t i) {
    const double saved = w[i];
    w[i] = saved + eps;
    const double up = loss(w);
    w[i] = saved - eps;
    const double down = loss(w);
    w[i] = saved;
    return (up - down) / (2.0 * eps);
  });
}

GradCheckReport gradient_check(const SequenceModel& model, const Utterance& utt, double eps,
                               std::size_t n_sampled, Rng& rng) {
  Vector grad;
  model.loss_gradient(utt.features, utt.targets, grad);
  const ModelSpec spec = spec_of(model);
  const ExtMatrix x(utt.features);
  std::vector<Ext> w = to_extended(model.flatten());
  const auto idx = sample_coordinates(w.size(), n_sampled, rng);
  const Ext h = eps;
  return compare(grad, idx, [&](std::size_t i) {
    const Ext saved = w[i];
    w[i] = saved + h;
    const Ext up = extended_log_prob(spec, w, x, utt.targets);
    w[i] = saved - h;
    const Ext down = extended_log_prob(spec, w, x, utt.targets);
    w[i] = saved;
    return static_cast<double>(-(up - down) / (2.0L * h));
  });
}

// ---------------------------------------------------------------------------

std::string EpochRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["phase"] = to_string(phase);
  j["train_logprob"] = train_log_prob;
  j["dev_logprob"] = dev_log_prob;
  j["dev_per"] = dev_per ? nlohmann::ordered_json(*dev_per) : nlohmann::ordered_json();
  if (seconds) j["seconds"] = *seconds;
  j["skipped"] = skipped;
  return j.dump();
}

Trainer::Trainer(SequenceModel& model, const Dataset& train, const Dataset& dev,
                 const TrainerOptions& options, std::uint64_t seed)
    : model_(model), train_(train), dev_(dev), options_(options), state_{{}, {}, Rng(seed)} {
  state_.optimizer.learning_rate = options.learning_rate;
  state_.optimizer.momentum = options.momentum;
  state_.optimizer.velocity.assign(model.size(), 0.0);
  state_.schedule.options = options.schedule;
  if (!model.can_decode()) state_.schedule.options.noise_phase_metric = StopMetric::log_prob;
  if (dev.empty()) throw std::invalid_argument("trainer: empty development set");
}

std::optional<EpochRecord> Trainer::step() {
  if (finished()) return std::nullopt;
  const auto start = std::chrono::steady_clock::now();
  TrainSchedule& sched = state_.schedule;
  const Phase phase = sched.phase;
  const EpochMetrics em = train_epoch(model_, train_, phase, sched.options.noise_sigma,
                                      state_.optimizer, state_.rng, observer_);
  EvalOptions eval = options_.dev_eval;
  // PER only matters when it drives stopping or can be reported.
  eval.decode = model_.can_decode();
  const DatasetEval dev = evaluate_dataset(model_, dev_, eval);
  const double dev_per =
      dev.decoded ? dev.per.per() : std::numeric_limits<double>::infinity();

  EpochRecord rec;
  rec.phase = phase;
  rec.train_log_prob = em.mean_log_prob;
  rec.dev_log_prob = dev.mean_log_prob;
  if (dev.decoded) rec.dev_per = dev_per;
  rec.skipped = em.skipped;

  last_action_ = early_stop_controller(sched, dev.mean_log_prob, dev_per, model_.flatten());
  rec.epoch = sched.epoch;
  if (last_action_ != ControlAction::continue_training) {
    model_.unflatten(sched.best_params);
    std::fill(state_.optimizer.velocity.begin(), state_.optimizer.velocity.end(), 0.0);
  }
  if (options_.log_timing) {
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return rec;
}

}  // namespace dblstm
