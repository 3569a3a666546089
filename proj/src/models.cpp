#include "dblstm/models.hpp"

#include <cmath>
#include <stdexcept>

namespace dblstm {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::ctc: return "ctc";
    case ModelKind::transducer: return "transducer";
    case ModelKind::prediction: return "prediction";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "ctc") return ModelKind::ctc;
  if (s == "transducer") return ModelKind::transducer;
  if (s == "prediction") return ModelKind::prediction;
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

// ---------------------------------------------------------------------------

CtcModel::CtcModel(ParamSet params) : params_(std::move(params)) {
  if (params_.config().output_dim < 2) {
    throw std::invalid_argument("CTC model needs output_dim = K+1 >= 2");
  }
}

double CtcModel::log_prob(const Matrix& x, std::span<const Label> z) const {
  const Matrix lp = log_softmax_rows(forward(x, params_).logits);
  return ctc_log_prob(lp, z).log_prob;
}

double CtcModel::loss_gradient(const Matrix& x, std::span<const Label> z, Vector& grad) const {
  const ForwardResult fr = forward(x, params_);
  const Matrix lp = log_softmax_rows(fr.logits);
  const CtcLattice lat = ctc_log_prob(lp, z);
  const Matrix dlogits = ctc_grad(lp, z, lat);
  grad = backward(fr.cache, params_, dlogits).grad.flatten();
  return lat.log_prob;
}

NBestList CtcModel::decode(const Matrix& x, const BeamOptions& opts) const {
  return ctc_beam_search(log_softmax_rows(forward(x, params_).logits), opts);
}

std::unique_ptr<SequenceModel> CtcModel::clone() const {
  return std::make_unique<CtcModel>(*this);
}

// ---------------------------------------------------------------------------

double TransducerNet::log_prob(const Matrix& x, std::span<const Label> z) const {
  return transducer_log_prob(model_, x, z).log_prob;
}

double TransducerNet::loss_gradient(const Matrix& x, std::span<const Label> z,
                                    Vector& grad) const {
  TransducerGrad g = transducer_grad(model_, x, z);
  grad = g.grad.flatten();
  return g.log_prob;
}

NBestList TransducerNet::decode(const Matrix& x, const BeamOptions& opts) const {
  return transducer_beam_search(model_, x, opts);
}

std::unique_ptr<SequenceModel> TransducerNet::clone() const {
  return std::make_unique<TransducerNet>(*this);
}

// ---------------------------------------------------------------------------

PredictionPretrainNet::PredictionPretrainNet(ParamSet params) : params_(std::move(params)) {
  const NetworkConfig& c = params_.config();
  if (c.output_dim < 2 || c.input_dim != c.output_dim ||
      c.direction != Direction::unidirectional) {
    throw std::invalid_argument(
        "prediction network needs a unidirectional stack with input = output = K+1");
  }
}

namespace {

// Targets z_1..z_U followed by the end token (blank id).
LabelSeq next_step_targets(std::span<const Label> z, std::size_t K) {
  LabelSeq next(z.begin(), z.end());
  next.push_back(static_cast<Label>(K));
  return next;
}

}  // namespace

double PredictionPretrainNet::log_prob(const Matrix& /*x*/, std::span<const Label> z) const {
  const std::size_t K = num_labels();
  const Matrix lp = log_softmax_rows(forward(prediction_inputs(z, K), params_).logits);
  const LabelSeq next = next_step_targets(z, K);
  double total = 0.0;
  for (std::size_t u = 0; u < next.size(); ++u) total += lp(u, static_cast<std::size_t>(next[u]));
  return total;
}

double PredictionPretrainNet::loss_gradient(const Matrix& /*x*/, std::span<const Label> z,
                                            Vector& grad) const {
  const std::size_t K = num_labels();
  const ForwardResult fr = forward(prediction_inputs(z, K), params_);
  const Matrix lp = log_softmax_rows(fr.logits);
  const LabelSeq next = next_step_targets(z, K);
  Matrix dlogits(lp.rows(), lp.cols());
  double total = 0.0;
  for (std::size_t u = 0; u < next.size(); ++u) {
    const auto k = static_cast<std::size_t>(next[u]);
    total += lp(u, k);
    for (std::size_t j = 0; j < lp.cols(); ++j) dlogits(u, j) = std::exp(lp(u, j));
    dlogits(u, k) -= 1.0;
  }
  grad = backward(fr.cache, params_, dlogits).grad.flatten();
  return total;
}

NBestList PredictionPretrainNet::decode(const Matrix&, const BeamOptions&) const {
  throw std::logic_error("prediction network does not transcribe acoustic input");
}

std::unique_ptr<SequenceModel> PredictionPretrainNet::clone() const {
  return std::make_unique<PredictionPretrainNet>(*this);
}

// ---------------------------------------------------------------------------

ModelSpec spec_of(const SequenceModel& model) {
  ModelSpec spec;
  spec.kind = model.kind();
  switch (model.kind()) {
    case ModelKind::ctc:
      spec.network = static_cast<const CtcModel&>(model).params().config();
      break;
    case ModelKind::prediction:
      spec.network = static_cast<const PredictionPretrainNet&>(model).params().config();
      break;
    case ModelKind::transducer:
      spec.transducer = static_cast<const TransducerNet&>(model).model().config();
      break;
  }
  return spec;
}

std::unique_ptr<SequenceModel> instantiate(const ModelSpec& spec) {
  switch (spec.kind) {
    case ModelKind::ctc: return std::make_unique<CtcModel>(ParamSet(spec.network));
    case ModelKind::prediction:
      return std::make_unique<PredictionPretrainNet>(ParamSet(spec.network));
    case ModelKind::transducer:
      return std::make_unique<TransducerNet>(TransducerModel(spec.transducer));
  }
  throw std::invalid_argument("instantiate: unknown model kind");
}

}  // namespace dblstm
