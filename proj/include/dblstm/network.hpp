#pragma once

// Recurrent cells (peephole LSTM and tanh RNN), bidirectional layers, deep
// stacks and the linear output projection, with exact BPTT gradients.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dblstm/numerics.hpp"

namespace dblstm {

enum class CellKind { lstm, tanh };
enum class Direction { unidirectional, bidirectional };

std::string to_string(CellKind kind);
std::string to_string(Direction dir);
CellKind parse_cell_kind(const std::string& s);
Direction parse_direction(const std::string& s);

/// Architecture of a (possibly deep, possibly bidirectional) recurrent stack.
///
/// output_dim == 0 means the stack is headless: no output projection is
/// allocated and forward() exposes only the top hidden sequence. Transducer
/// acoustic and prediction networks run headless.
struct NetworkConfig {
  std::size_t input_dim = 1;
  std::size_t levels = 1;
  std::size_t hidden = 1;
  Direction direction = Direction::bidirectional;
  CellKind cell = CellKind::lstm;
  std::size_t output_dim = 1;

  void validate() const;
  std::size_t directions() const { return direction == Direction::bidirectional ? 2 : 1; }
  /// Width of the sequence fed into `level` (0-based).
  std::size_t level_input_dim(std::size_t level) const {
    return level == 0 ? input_dim : directions() * hidden;
  }
  /// Width of the top hidden sequence: directions x hidden.
  std::size_t top_dim() const { return directions() * hidden; }
  std::size_t gate_count() const { return cell == CellKind::lstm ? 4 : 1; }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// Gate blocks inside the stacked LSTM matrices, in storage order.
enum Gate : std::size_t { kInputGate = 0, kForgetGate = 1, kCellInput = 2, kOutputGate = 3 };

/// Parameters of one direction of one level.
///
/// LSTM: wx is (4H x in) and wh is (4H x H) with row blocks ordered
/// input gate, forget gate, cell input, output gate; bias is 4H in the same
/// order. Peepholes are the diagonal cell-to-gate weights stored as
/// H-vectors. tanh RNN: wx is (H x in), wh is (H x H), bias is H and the
/// peephole vectors are empty.
struct CellParams {
  Matrix wx;
  Matrix wh;
  Vector peep_i;
  Vector peep_f;
  Vector peep_o;
  Vector bias;
};

/// Output projection y_t = sum_d W_d h^N_{t,d} + b, one matrix per direction.
struct OutputProjection {
  std::vector<Matrix> w;
  Vector b;
};

/// All weights of a recurrent stack.
///
/// Flattening order: level by level; within a level the forward direction
/// precedes the backward one; within a direction wx, wh, peep_i, peep_f,
/// peep_o, bias (so gates i, f, c, o, matrices before peepholes before
/// biases); the output projection (per-direction matrices, then bias) last.
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(const NetworkConfig& config);  // all zeros

  const NetworkConfig& config() const { return config_; }

  CellParams& cell(std::size_t level, std::size_t dir) { return levels_[level][dir]; }
  const CellParams& cell(std::size_t level, std::size_t dir) const { return levels_[level][dir]; }
  OutputProjection& head() { return head_; }
  const OutputProjection& head() const { return head_; }

  std::size_t size() const;
  Vector flatten() const;
  void unflatten(std::span<const double> flat);

  /// Visits every tensor in flattening order.
  void for_each_tensor(const std::function<void(std::span<double>)>& fn);
  void for_each_tensor(const std::function<void(std::span<const double>)>& fn) const;

  void fill_uniform(Rng& rng, double lo, double hi);
  void set_zero();

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.config_ == b.config_ && a.flatten() == b.flatten();
  }

 private:
  NetworkConfig config_;
  std::vector<std::vector<CellParams>> levels_;
  OutputProjection head_;
};

/// Closed-form weight count; equals ParamSet(config).size().
std::size_t param_count(const NetworkConfig& config);

/// Per-timestep state of one direction of one level. Rows are indexed by
/// time in natural order regardless of the direction of the recursion.
/// LSTM fills every field; the tanh cell only fills `h`.
struct LayerTrace {
  Matrix i, f, g, s, o, h;
  Matrix tanh_s;
};

struct ActivationCache {
  NetworkConfig config;
  std::size_t steps = 0;
  /// inputs[n] is the sequence fed into level n (inputs[0] is x).
  std::vector<Matrix> inputs;
  /// traces[n][d]
  std::vector<std::vector<LayerTrace>> traces;
  /// Concatenated top-level hidden sequence, T x top_dim.
  Matrix top;
};

struct LstmStep {
  Vector i, f, g, s, o, h;
};

/// One step of the peephole LSTM in the order i, f, s, o, h. The input and
/// forget gates read c_prev through their peepholes; the output gate reads
/// the freshly updated cell.
LstmStep lstm_step(std::span<const double> x, std::span<const double> h_prev,
                   std::span<const double> c_prev, const CellParams& p);

/// h_t = tanh(Wx x_t + Wh h_{t-1} + b)
Vector tanh_rnn_step(std::span<const double> x, std::span<const double> h_prev,
                     const CellParams& p);

struct ForwardResult {
  Matrix logits;  // T x output_dim; empty for headless stacks
  ActivationCache cache;
};

/// Runs the whole stack on x (T x input_dim). Initial states are zero; the
/// backward direction runs from t = T down to 1.
ForwardResult forward(const Matrix& x, const ParamSet& params);

struct BackwardResult {
  ParamSet grad;
  Matrix d_input;  // T x input_dim when requested, else empty
};

/// Gradients of sum_t dlogits_t . y_t with respect to every parameter and
/// optionally the input sequence.
BackwardResult backward(const ActivationCache& cache, const ParamSet& params,
                        const Matrix& dlogits, bool want_input_grad = false);

/// Same as backward() but starting from the gradient with respect to the top
/// hidden sequence (T x top_dim). Gradients are accumulated into `grad`; the
/// output projection is left untouched.
Matrix backward_from_top(const ActivationCache& cache, const ParamSet& params,
                         const Matrix& dtop, ParamSet& grad, bool want_input_grad);

}  // namespace dblstm
