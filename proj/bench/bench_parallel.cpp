// Serial reference vs OpenMP evaluation and decoding over a synthetic
// dataset. Set OMP_NUM_THREADS to control the parallel arm.

#include <benchmark/benchmark.h>
#include <omp.h>

#include "dblstm/data.hpp"
#include "dblstm/models.hpp"
#include "dblstm/parallel.hpp"

namespace {

struct Fixture {
  dblstm::Dataset data;
  std::unique_ptr<dblstm::SequenceModel> ctc;
  std::unique_ptr<dblstm::SequenceModel> transducer;

  Fixture() {
    dblstm::SynthSpec spec;
    spec.train_count = 32;
    spec.dev_count = 0;
    spec.test_count = 0;
    data = dblstm::synthesize(spec).train;

    dblstm::Rng rng(7);
    dblstm::NetworkConfig net{spec.dim, 2, 24, dblstm::Direction::bidirectional,
                              dblstm::CellKind::lstm, spec.K + 1};
    dblstm::ParamSet p(net);
    p.fill_uniform(rng, -0.1, 0.1);
    ctc = std::make_unique<dblstm::CtcModel>(std::move(p));

    dblstm::TransducerModel tm(dblstm::make_transducer_config(spec.dim, spec.K, 24, 2));
    tm.fill_uniform(rng, -0.1, 0.1);
    transducer = std::make_unique<dblstm::TransducerNet>(std::move(tm));
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

dblstm::EvalOptions eval_options() {
  dblstm::EvalOptions o;
  o.beam.width = 8;
  return o;
}

void BM_EvaluateCtcSerial(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) {
    benchmark::DoNotOptimize(dblstm::evaluate_dataset_serial(*f.ctc, f.data, eval_options()));
  }
}

void BM_EvaluateCtcParallel(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) {
    benchmark::DoNotOptimize(dblstm::evaluate_dataset(*f.ctc, f.data, eval_options()));
  }
  state.counters["threads"] = omp_get_max_threads();
}

void BM_DecodeTransducerSerial(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        dblstm::decode_dataset_serial(*f.transducer, f.data, eval_options().beam));
  }
}

void BM_DecodeTransducerParallel(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) {
    benchmark::DoNotOptimize(dblstm::decode_dataset(*f.transducer, f.data, eval_options().beam));
  }
  state.counters["threads"] = omp_get_max_threads();
}

}  // namespace

BENCHMARK(BM_EvaluateCtcSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateCtcParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DecodeTransducerSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DecodeTransducerParallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
