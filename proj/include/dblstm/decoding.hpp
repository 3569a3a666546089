#pragma once

// Best-path and beam-search decoding, n-best lists, edit distance, PER
// scoring with optional label-set mapping, and input-sensitivity maps.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dblstm/ctc.hpp"
#include "dblstm/network.hpp"
#include "dblstm/transducer.hpp"

namespace dblstm {

struct Hypothesis {
  LabelSeq labels;
  double log_prob = kLogZero;
};

/// Sorted by descending log-probability; ties go to the lexicographically
/// smaller label sequence (lower ids first, then shorter).
using NBestList = std::vector<Hypothesis>;

bool hypothesis_before(const Hypothesis& a, const Hypothesis& b);

/// Instrumentation hooks for the beam engines. Default no-ops.
class BeamObserver {
 public:
  virtual ~BeamObserver() = default;
  /// Called whenever several branches reach the same label sequence.
  virtual void on_merge(const LabelSeq& /*labels*/, std::span<const double> /*branches*/,
                        double /*merged*/) {}
  /// Called when a transducer hypothesis hits the per-frame emission cap.
  virtual void on_emission_cap(std::size_t /*t*/, const LabelSeq& /*labels*/) {}
};

struct BeamOptions {
  std::size_t width = 100;
  /// Transducer only: label emissions allowed within one frame.
  std::size_t max_emissions_per_step = 10;
  BeamObserver* observer = nullptr;
};

/// Frame-wise argmax (ties to the lowest id), then collapse.
LabelSeq best_path_decode(const Matrix& log_post);

/// Beam search under the CTC distribution. Each frame extends every
/// hypothesis by blank, by a repeat of its last label, or by a new label;
/// identical label sequences are merged by summing probabilities and the
/// `width` best survive.
NBestList ctc_beam_search(const Matrix& log_post, const BeamOptions& opts);

/// Beam search over the transducer lattice. Within a frame hypotheses are
/// expanded by label emissions best-first and closed by a blank, until
/// `width` closed hypotheses beat every open one.
NBestList transducer_beam_search(const TransducerModel& model, const Matrix& x,
                                 const BeamOptions& opts);

std::size_t edit_distance(std::span<const Label> a, std::span<const Label> b);

/// Model label id -> scoring label id. File format: one
/// `model_label scoring_label` pair per line; blank lines and lines starting
/// with '#' are skipped.
class LabelMapping {
 public:
  LabelMapping() = default;
  explicit LabelMapping(std::map<Label, Label> table) : table_(std::move(table)) {}

  static LabelMapping load(const std::string& path);

  Label map(Label model_label) const;
  LabelSeq apply(std::span<const Label> seq) const;
  /// Throws unless every label in [0, K) is defined.
  void check_covers(std::size_t K) const;
  std::size_t size() const { return table_.size(); }

 private:
  std::map<Label, Label> table_;
};

struct PerReport {
  std::size_t errors = 0;
  std::size_t ref_length = 0;
  std::vector<std::size_t> per_utterance;
  double per() const {
    return ref_length == 0 ? 0.0 : static_cast<double>(errors) / static_cast<double>(ref_length);
  }
};

PerReport score_per(const std::vector<LabelSeq>& refs, const std::vector<LabelSeq>& hyps,
                    const LabelMapping* mapping = nullptr);

/// |d y_t[k] / d x| for every input frame and feature, T x D.
Matrix input_sensitivity(const ParamSet& network, const Matrix& x, std::size_t t, std::size_t k);

}  // namespace dblstm
