#pragma once

// Trainable sequence models behind one interface: a CTC network, a
// transducer, and the next-step prediction network used to pretrain the
// transducer's linguistic half.

#include <memory>
#include <span>
#include <string>

#include "dblstm/ctc.hpp"
#include "dblstm/decoding.hpp"
#include "dblstm/network.hpp"
#include "dblstm/transducer.hpp"

namespace dblstm {

enum class ModelKind { ctc, transducer, prediction };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& s);

/// All const member functions are safe to call concurrently.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;

  virtual ModelKind kind() const = 0;
  virtual std::size_t num_labels() const = 0;  // K
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t size() const = 0;
  virtual Vector flatten() const = 0;
  virtual void unflatten(std::span<const double> flat) = 0;

  /// log Pr(z | x); -inf when z has no alignment.
  virtual double log_prob(const Matrix& x, std::span<const Label> z) const = 0;

  /// Returns log Pr(z | x) and writes the gradient of -log Pr(z | x) into
  /// `grad` (resized to size()). Throws ZeroProbabilityError.
  virtual double loss_gradient(const Matrix& x, std::span<const Label> z, Vector& grad) const = 0;

  virtual bool can_decode() const { return true; }
  virtual NBestList decode(const Matrix& x, const BeamOptions& opts) const = 0;

  virtual std::unique_ptr<SequenceModel> clone() const = 0;
};

class CtcModel final : public SequenceModel {
 public:
  explicit CtcModel(ParamSet params);

  ModelKind kind() const override { return ModelKind::ctc; }
  std::size_t num_labels() const override { return params_.config().output_dim - 1; }
  std::size_t input_dim() const override { return params_.config().input_dim; }
  std::size_t size() const override { return params_.size(); }
  Vector flatten() const override { return params_.flatten(); }
  void unflatten(std::span<const double> flat) override { params_.unflatten(flat); }
  double log_prob(const Matrix& x, std::span<const Label> z) const override;
  double loss_gradient(const Matrix& x, std::span<const Label> z, Vector& grad) const override;
  NBestList decode(const Matrix& x, const BeamOptions& opts) const override;
  std::unique_ptr<SequenceModel> clone() const override;

  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }

 private:
  ParamSet params_;
};

class TransducerNet final : public SequenceModel {
 public:
  explicit TransducerNet(TransducerModel model) : model_(std::move(model)) {}

  ModelKind kind() const override { return ModelKind::transducer; }
  std::size_t num_labels() const override { return model_.config().K; }
  std::size_t input_dim() const override { return model_.config().acoustic.input_dim; }
  std::size_t size() const override { return model_.size(); }
  Vector flatten() const override { return model_.flatten(); }
  void unflatten(std::span<const double> flat) override { model_.unflatten(flat); }
  double log_prob(const Matrix& x, std::span<const Label> z) const override;
  double loss_gradient(const Matrix& x, std::span<const Label> z, Vector& grad) const override;
  NBestList decode(const Matrix& x, const BeamOptions& opts) const override;
  std::unique_ptr<SequenceModel> clone() const override;

  const TransducerModel& model() const { return model_; }
  TransducerModel& model() { return model_; }

 private:
  TransducerModel model_;
};

/// Next-step label predictor: reads (start, z_1..z_U) and is trained to emit
/// (z_1..z_U, end), with the end token sharing the blank id K. The input
/// features are ignored.
class PredictionPretrainNet final : public SequenceModel {
 public:
  explicit PredictionPretrainNet(ParamSet params);

  ModelKind kind() const override { return ModelKind::prediction; }
  std::size_t num_labels() const override { return params_.config().output_dim - 1; }
  std::size_t input_dim() const override { return 0; }
  std::size_t size() const override { return params_.size(); }
  Vector flatten() const override { return params_.flatten(); }
  void unflatten(std::span<const double> flat) override { params_.unflatten(flat); }
  double log_prob(const Matrix& x, std::span<const Label> z) const override;
  double loss_gradient(const Matrix& x, std::span<const Label> z, Vector& grad) const override;
  bool can_decode() const override { return false; }
  NBestList decode(const Matrix& x, const BeamOptions& opts) const override;
  std::unique_ptr<SequenceModel> clone() const override;

  const ParamSet& params() const { return params_; }

 private:
  ParamSet params_;
};

/// Architecture of any model kind; `network` describes CTC and prediction
/// models, `transducer` describes transducers.
struct ModelSpec {
  ModelKind kind = ModelKind::ctc;
  NetworkConfig network;
  TransducerConfig transducer;
};

ModelSpec spec_of(const SequenceModel& model);
/// Zero-initialised model of the given architecture.
std::unique_ptr<SequenceModel> instantiate(const ModelSpec& spec);

}  // namespace dblstm
