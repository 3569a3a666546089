#pragma once

// Utterance-parallel evaluation and decoding. Each utterance is scored
// independently under OpenMP; results land in per-utterance slots and are
// reduced serially in dataset order, so the parallel kernels return exactly
// what the serial reference versions return.

#include <cstddef>
#include <vector>

#include "dblstm/data.hpp"
#include "dblstm/decoding.hpp"
#include "dblstm/models.hpp"

namespace dblstm {

struct EvalOptions {
  BeamOptions beam;
  bool decode = true;
};

struct UtteranceResult {
  double log_prob = kLogZero;
  Hypothesis best;
};

struct DatasetEval {
  std::vector<UtteranceResult> utterances;
  double mean_log_prob = kLogZero;  // over utterances with a finite log-prob
  std::size_t infeasible = 0;
  bool decoded = false;
  PerReport per;
};

DatasetEval evaluate_dataset(const SequenceModel& model, const Dataset& data,
                             const EvalOptions& opts);
DatasetEval evaluate_dataset_serial(const SequenceModel& model, const Dataset& data,
                                    const EvalOptions& opts);

std::vector<NBestList> decode_dataset(const SequenceModel& model, const Dataset& data,
                                      const BeamOptions& opts);
std::vector<NBestList> decode_dataset_serial(const SequenceModel& model, const Dataset& data,
                                             const BeamOptions& opts);

}  // namespace dblstm
