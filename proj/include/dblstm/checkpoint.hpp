#pragma once

// Versioned checkpoint files.
//
//   DBLSTM-CHECKPOINT
//   version 1
//   header <one-line JSON: model architecture, optimiser and schedule
//           settings, section lengths>
//   blob_bytes <N>
//   <N bytes>
//
// The blob is a sequence of little-endian 8-byte words: flattened params,
// optimiser velocity, the 4 generator state words, 9 schedule scalars
// (phase, epoch, phase_epochs, since_improvement, best_dev_log_prob,
// best_dev_per, per_at_best_log_prob, best_epoch, finished), the best
// parameters kept by early stopping, then normalisation means and standard
// deviations. Doubles are stored as their IEEE-754 bit patterns.

#include <optional>
#include <stdexcept>
#include <string>

#include "dblstm/data.hpp"
#include "dblstm/models.hpp"
#include "dblstm/training.hpp"

namespace dblstm {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelSpec model;
  Vector params;
  TrainerState trainer;
  std::optional<NormStats> norm;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& source = "<memory>");

/// Writes atomically through a temporary file.
void checkpoint_save(const std::string& path, const Checkpoint& ckpt);
Checkpoint checkpoint_load(const std::string& path);

/// Model with the checkpoint's weights loaded.
std::unique_ptr<SequenceModel> restore_model(const Checkpoint& ckpt);

}  // namespace dblstm
