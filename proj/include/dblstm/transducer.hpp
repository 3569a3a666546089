#pragma once

// RNN transducer with a feedforward output network: the acoustic stack's top
// hidden states go through a linear layer (l_t), are combined with the
// prediction network state p_u in a tanh layer, and a softmax over K+1
// symbols gives Pr(k | t, u).

#include <cstddef>
#include <span>
#include <vector>

#include "dblstm/ctc.hpp"
#include "dblstm/network.hpp"
#include "dblstm/numerics.hpp"

namespace dblstm {

struct TransducerConfig {
  NetworkConfig acoustic;    // headless
  NetworkConfig prediction;  // headless, unidirectional, input K+1
  std::size_t K = 1;

  std::size_t hidden() const { return acoustic.hidden; }
  std::size_t width() const { return K + 1; }
  void validate() const;

  friend bool operator==(const TransducerConfig&, const TransducerConfig&) = default;
};

TransducerConfig make_transducer_config(std::size_t input_dim, std::size_t K, std::size_t hidden,
                                        std::size_t acoustic_levels,
                                        Direction acoustic_direction = Direction::bidirectional,
                                        std::size_t prediction_levels = 1);

/// Prediction-network config with the removable K+1 softmax head used for
/// next-step pretraining.
NetworkConfig prediction_pretrain_config(const TransducerConfig& cfg);

struct OutputNetParams {
  std::vector<Matrix> w_l;  // one H x H matrix per acoustic direction
  Vector b_l;
  Matrix w_lh;  // H x H
  Matrix w_pb;  // H x H, prediction state -> tanh layer
  Vector b_h;
  Matrix w_hy;  // (K+1) x H
  Vector b_y;
};

/// Acoustic stack, prediction network and output network. Flattening order:
/// acoustic, prediction, then w_l..., b_l, w_lh, w_pb, b_h, w_hy, b_y.
class TransducerModel {
 public:
  TransducerModel() = default;
  explicit TransducerModel(const TransducerConfig& cfg);  // all zeros

  const TransducerConfig& config() const { return config_; }
  ParamSet& acoustic() { return acoustic_; }
  const ParamSet& acoustic() const { return acoustic_; }
  ParamSet& prediction() { return prediction_; }
  const ParamSet& prediction() const { return prediction_; }
  OutputNetParams& output() { return output_; }
  const OutputNetParams& output() const { return output_; }

  std::size_t size() const;
  Vector flatten() const;
  void unflatten(std::span<const double> flat);
  void fill_uniform(Rng& rng, double lo, double hi);

 private:
  void for_each_output_tensor(const std::function<void(std::span<double>)>& fn);

  TransducerConfig config_;
  ParamSet acoustic_;
  ParamSet prediction_;
  OutputNetParams output_;
};

std::size_t transducer_param_count(const TransducerConfig& cfg);

/// One-hot rows for (start, z_1, ..., z_U); the start symbol reuses id K.
Matrix prediction_inputs(std::span<const Label> z, std::size_t K);

/// p_0..p_U as rows of a (U+1) x H matrix.
Matrix prediction_forward(std::span<const Label> z, const ParamSet& prediction, std::size_t K);

/// Recurrent state of the prediction network after some label history.
struct PredictionState {
  std::vector<Vector> h;  // per level
  std::vector<Vector> c;  // per level (empty vectors for tanh cells)
  const Vector& output() const { return h.back(); }
};

PredictionState prediction_initial(const ParamSet& prediction);
/// Feeds one symbol (a label, or K for the start symbol).
PredictionState prediction_step(const PredictionState& state, Label symbol,
                                const ParamSet& prediction, std::size_t K);

/// Acoustic projection l_t for every frame (T x H).
Matrix acoustic_projection(const Matrix& acoustic_top, const OutputNetParams& out,
                           std::size_t hidden);

/// log Pr(. | t, u) from a single (l_t, p_u) pair.
Vector joint_log_softmax(std::span<const double> l_t, std::span<const double> p_u,
                         const OutputNetParams& out);

/// Dense table of log Pr(k | t, u) for t < T, u <= U.
class JointTable {
 public:
  JointTable() = default;
  JointTable(std::size_t steps, std::size_t positions, std::size_t width, double fill = 0.0)
      : steps_(steps), positions_(positions), width_(width),
        data_(steps * positions * width, fill) {}

  std::size_t steps() const { return steps_; }
  std::size_t positions() const { return positions_; }  // U + 1
  std::size_t width() const { return width_; }

  std::span<double> at(std::size_t t, std::size_t u) {
    return {data_.data() + (t * positions_ + u) * width_, width_};
  }
  std::span<const double> at(std::size_t t, std::size_t u) const {
    return {data_.data() + (t * positions_ + u) * width_, width_};
  }

 private:
  std::size_t steps_ = 0, positions_ = 0, width_ = 0;
  std::vector<double> data_;
};

struct TransducerLattice {
  Matrix log_alpha;  // T x (U+1), mass of reaching (t, u)
  Matrix log_beta;   // T x (U+1), mass of finishing from (t, u)
  double log_prob = kLogZero;
};

/// Forward-backward over the T x (U+1) lattice. Blank at (t, u) moves to
/// (t+1, u); emitting z_{u+1} moves to (t, u+1); the final blank at
/// (T-1, U) terminates.
TransducerLattice transducer_lattice(const JointTable& table, std::span<const Label> z);

/// Enumerates every monotone alignment. Rejects more than 10^6 paths.
double transducer_brute_force(const JointTable& table, std::span<const Label> z);

/// All intermediate values of one transducer evaluation.
struct TransducerForward {
  ForwardResult acoustic;
  ForwardResult prediction;
  Matrix l;       // T x H
  Matrix a;       // T x H, W_lh l_t
  Matrix b;       // (U+1) x H, W_pb p_u + b_h
  Matrix hidden;  // T(U+1) x H, tanh(a_t + b_u)
  JointTable log_probs;
};

TransducerForward transducer_forward(const TransducerModel& model, const Matrix& x,
                                     std::span<const Label> z);

struct TransducerResult {
  double log_prob = kLogZero;
  TransducerLattice lattice;
};

TransducerResult transducer_log_prob(const TransducerModel& model, const Matrix& x,
                                     std::span<const Label> z);

struct TransducerGrad {
  double log_prob = kLogZero;
  TransducerModel grad;  // gradient of -log Pr(z|x), same layout as the model
  Matrix d_input;        // filled when requested
};

/// Throws ZeroProbabilityError when Pr(z|x) underflows to zero.
TransducerGrad transducer_grad(const TransducerModel& model, const Matrix& x,
                               std::span<const Label> z, bool want_input_grad = false);

/// Builds a transducer from a pretrained CTC network and a pretrained
/// next-step prediction network. Recurrent weights are copied, both
/// pretraining heads are dropped, and only the output network is drawn
/// fresh from U[-init_range, init_range].
TransducerModel assemble_pretrained(const ParamSet& ctc_network, const ParamSet& prediction_net,
                                    std::size_t K, Rng& rng, double init_range = 0.1);

}  // namespace dblstm
