#include "dblstm/parallel.hpp"

#include <cmath>
#include <exception>

namespace dblstm {

namespace {

UtteranceResult eval_one(const SequenceModel& model, const Utterance& u, const EvalOptions& opts) {
  UtteranceResult r;
  r.log_prob = model.log_prob(u.features, u.targets);
  if (opts.decode) {
    const NBestList nbest = model.decode(u.features, opts.beam);
    if (!nbest.empty()) r.best = nbest.front();
  }
  return r;
}

DatasetEval reduce(std::vector<UtteranceResult> results, const Dataset& data, bool decoded) {
  DatasetEval ev;
  ev.decoded = decoded;
  double total = 0.0;
  std::size_t feasible = 0;
  for (const auto& r : results) {
    if (std::isfinite(r.log_prob)) {
      total += r.log_prob;
      ++feasible;
    } else {
      ++ev.infeasible;
    }
  }
  if (feasible > 0) ev.mean_log_prob = total / static_cast<double>(feasible);
  if (decoded) {
    std::vector<LabelSeq> refs, hyps;
    for (std::size_t i = 0; i < data.size(); ++i) {
      refs.push_back(data[i].targets);
      hyps.push_back(results[i].best.labels);
    }
    ev.per = score_per(refs, hyps);
  }
  ev.utterances = std::move(results);
  return ev;
}

void rethrow_first(const std::vector<std::exception_ptr>& errors) {
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

DatasetEval evaluate_dataset(const SequenceModel& model, const Dataset& data,
                             const EvalOptions& opts) {
  const bool decode = opts.decode && model.can_decode();
  EvalOptions local = opts;
  local.decode = decode;
  local.beam.observer = nullptr;  // observers are not thread-safe
  std::vector<UtteranceResult> results(data.size());
  std::vector<std::exception_ptr> errors(data.size());
  const auto n = static_cast<std::ptrdiff_t>(data.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      results[static_cast<std::size_t>(i)] =
          eval_one(model, data[static_cast<std::size_t>(i)], local);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  rethrow_first(errors);
  return reduce(std::move(results), data, decode);
}

DatasetEval evaluate_dataset_serial(const SequenceModel& model, const Dataset& data,
                                    const EvalOptions& opts) {
  EvalOptions local = opts;
  local.decode = opts.decode && model.can_decode();
  std::vector<UtteranceResult> results;
  results.reserve(data.size());
  for (const auto& u : data) results.push_back(eval_one(model, u, local));
  return reduce(std::move(results), data, local.decode);
}

std::vector<NBestList> decode_dataset(const SequenceModel& model, const Dataset& data,
                                      const BeamOptions& opts) {
  BeamOptions local = opts;
  local.observer = nullptr;
  std::vector<NBestList> out(data.size());
  std::vector<std::exception_ptr> errors(data.size());
  const auto n = static_cast<std::ptrdiff_t>(data.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = model.decode(data[static_cast<std::size_t>(i)].features, local);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  rethrow_first(errors);
  return out;
}

std::vector<NBestList> decode_dataset_serial(const SequenceModel& model, const Dataset& data,
                                             const BeamOptions& opts) {
  std::vector<NBestList> out;
  out.reserve(data.size());
  for (const auto& u : data) out.push_back(model.decode(u.features, opts));
  return out;
}

}  // namespace dblstm
