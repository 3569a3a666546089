#pragma once

// Utterance datasets: manifest-based text I/O, per-dimension normalisation
// fitted on the training set, and a seeded synthetic labelling task whose
// alignments are withheld from the learner.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dblstm/ctc.hpp"
#include "dblstm/numerics.hpp"

namespace dblstm {

struct Utterance {
  std::string id;
  Matrix features;  // T x D
  LabelSeq targets;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

using Dataset = std::vector<Utterance>;

/// Malformed or unreadable dataset files. The message names file and line.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads a manifest of `id feat_path lab_path` lines. Relative paths are
/// resolved against the manifest's directory. A feature file holds T lines
/// of D space-separated reals; a label file holds one line of label ids.
/// When `num_labels` is set every label must be below it.
Dataset load_dataset(const std::string& manifest_path,
                     std::optional<std::size_t> num_labels = std::nullopt);

/// Reads one feature file (T lines of D reals).
Matrix load_features(const std::string& path);

/// Writes `<dir>/<name>.manifest` plus `<dir>/<name>/<id>.feat|.lab`.
/// Values are printed in shortest round-trip form, so reloading is exact.
std::string write_dataset(const std::string& dir, const std::string& name, const Dataset& data);

void write_features(const std::string& path, const Matrix& features);

struct NormStats {
  Vector mean;
  Vector stddev;
  std::size_t dim() const { return mean.size(); }
};

/// Per-dimension mean and (population) standard deviation over all frames.
/// A dimension with zero variance is an error.
NormStats fit_normalizer(const Dataset& train);
void apply_normalizer(Dataset& data, const NormStats& stats);
void apply_normalizer(Matrix& features, const NormStats& stats);

struct SynthSpec {
  std::uint64_t seed = 1;
  std::size_t K = 5;
  std::size_t train_count = 200;
  std::size_t dev_count = 50;
  std::size_t test_count = 50;
  std::size_t t_min = 40;
  std::size_t t_max = 80;
  std::size_t events_min = 2;
  std::size_t events_max = 6;
  std::size_t duration_min = 4;
  std::size_t duration_max = 9;
  std::size_t dim = 8;
  double noise = 0.6;
  /// Each event frame is multiplied by an independent random sign, so
  /// class evidence is invisible to any linear read-out of a single frame.
  bool random_polarity = false;
  /// Probability that an event's class is its predecessor's fixed
  /// successor rather than a uniform draw; 0 gives i.i.d. classes.
  double label_predictability = 0.0;

  void validate() const;
};

struct SynthData {
  Dataset train;
  Dataset dev;
  Dataset test;
};

/// Each utterance places a random number of class events, in order and
/// without overlap, at random positions. Event class c is rendered as a
/// two-part pattern: a prototype shared by all classes in the same group,
/// followed by a class-specific prototype, so identities only resolve by
/// combining evidence over time. Gaussian background noise covers every
/// frame. Targets are the event classes in order.
SynthData synthesize(const SynthSpec& spec);

/// Prototype frames behind the synthetic events (one onset row per class
/// group, one body row per class) and the class successor rule.
struct SynthPrototypes {
  Matrix onset;  // groups x D
  Matrix body;   // K x D
  LabelSeq successor;  // a single cycle through the K classes
};

SynthPrototypes synth_prototypes(const SynthSpec& spec);

/// The noise-free frames rendered for one event of class `c` lasting
/// `duration` frames.
Matrix synth_event_pattern(const SynthPrototypes& protos, Label c, std::size_t duration);

}  // namespace dblstm
