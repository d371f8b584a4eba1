#include "robochain/learner.hpp"

#include <sodium.h>

#include <algorithm>
#include <bit>
#include <cmath>

#include "robochain/errors.hpp"

namespace robochain::learner {

namespace {

void check_dimension(std::span<const double> params, const FeatureVector& x) {
  if (params.size() != x.dimension() + 1)
    throw Error(ErrorCode::DimensionMismatch,
                "model expects " + std::to_string(params.empty() ? 0 : params.size() - 1) +
                    " features, got " + std::to_string(x.dimension()));
}

double activate(double z, Activation activation) {
  if (activation == Activation::Identity) return z;
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

double linear(std::span<const double> params, const FeatureVector& x) {
  double z = params.back();
  for (std::size_t i = 0; i < x.dimension(); ++i) z += params[i] * x.at(i);
  return z;
}

void wipe(std::vector<double>& v) {
  if (!v.empty()) sodium_memzero(v.data(), v.size() * sizeof(double));
  v.clear();
  v.shrink_to_fit();
}

void wipe(std::string& s) {
  if (!s.empty()) sodium_memzero(s.data(), s.size());
  s.clear();
  s.shrink_to_fit();
}

struct DiscardOnExit {
  Batch& batch;
  ~DiscardOnExit() { secure_discard(batch); }
};

}  // namespace

TherapistFeedback TherapistFeedback::make(double target, std::string robot_id,
                                          std::string session_id, Tick timestamp) {
  if (!std::isfinite(target)) throw Error(ErrorCode::NonFiniteParams, "feedback target");
  return {std::clamp(target, 0.0, 1.0), std::move(robot_id), std::move(session_id), timestamp};
}

OptimizerState OptimizerState::adadelta(std::size_t dimension, double rho, double epsilon) {
  OptimizerState s;
  s.rho = rho;
  s.epsilon = epsilon;
  s.accumulated_grad_sq.assign(dimension, 0.0);
  s.accumulated_update_sq.assign(dimension, 0.0);
  return s;
}

double predict(std::span<const double> params, const FeatureVector& x, Activation activation) {
  check_dimension(params, x);
  return activate(linear(params, x), activation);
}

double predict(const ModelVersion& model, const FeatureVector& x, Activation activation) {
  return predict(model.params, x, activation);
}

double mean_squared_error(std::span<const double> params, const Batch& batch,
                          Activation activation) {
  if (batch.empty()) throw Error(ErrorCode::EmptyBatch, "cannot evaluate an empty batch");
  double total = 0.0;
  for (const auto& s : batch) {
    double e = predict(params, s.x, activation) - s.y.target;
    total += e * e;
  }
  return total / static_cast<double>(batch.size());
}

std::vector<double> gradient(std::span<const double> params, const Batch& batch,
                             Activation activation) {
  if (batch.empty()) throw Error(ErrorCode::EmptyBatch, "cannot differentiate an empty batch");
  std::vector<double> g(params.size(), 0.0);
  const double scale = 2.0 / static_cast<double>(batch.size());
  for (const auto& s : batch) {
    check_dimension(params, s.x);
    double p = activate(linear(params, s.x), activation);
    double dp = activation == Activation::Sigmoid ? p * (1.0 - p) : 1.0;
    double coeff = scale * (p - s.y.target) * dp;
    for (std::size_t i = 0; i < s.x.dimension(); ++i) g[i] += coeff * s.x.at(i);
    g.back() += coeff;
  }
  return g;
}

TrainResult fine_tune(const ModelVersion& model, Batch&& batch, OptimizerState optimizer,
                      const TrainOptions& options, Tick now) {
  DiscardOnExit discard{batch};
  if (batch.empty()) throw Error(ErrorCode::EmptyBatch, "fine_tune needs at least one sample");
  if (options.epochs == 0) throw Error(ErrorCode::InvalidConfig, "epochs must be at least 1");
  for (const auto& s : batch) check_dimension(model.params, s.x);

  const std::size_t dim = model.params.size();
  if (optimizer.accumulated_grad_sq.size() != dim) optimizer.accumulated_grad_sq.assign(dim, 0.0);
  if (optimizer.accumulated_update_sq.size() != dim)
    optimizer.accumulated_update_sq.assign(dim, 0.0);

  std::vector<double> params = model.params;
  TrainResult result;
  result.loss_trace.push_back(mean_squared_error(params, batch, options.activation));
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::vector<double> g = gradient(params, batch, options.activation);
    for (std::size_t i = 0; i < dim; ++i) {
      if (options.rule == UpdateRule::PlainGradient) {
        params[i] -= options.learning_rate * g[i];
        continue;
      }
      double& eg = optimizer.accumulated_grad_sq[i];
      double& edx = optimizer.accumulated_update_sq[i];
      eg = optimizer.rho * eg + (1.0 - optimizer.rho) * g[i] * g[i];
      double dx = -std::sqrt(edx + optimizer.epsilon) / std::sqrt(eg + optimizer.epsilon) * g[i];
      edx = optimizer.rho * edx + (1.0 - optimizer.rho) * dx * dx;
      params[i] += options.learning_rate * dx;
    }
    result.loss_trace.push_back(mean_squared_error(params, batch, options.activation));
  }

  modelstore::Hyperparams hyper{{"learning_rate", options.learning_rate},
                                {"rho", optimizer.rho},
                                {"epsilon", optimizer.epsilon},
                                {"epochs", static_cast<double>(options.epochs)}};
  result.model = ModelVersion::make(std::move(params), std::move(hyper), model.version_id, now);
  result.optimizer = std::move(optimizer);
  return result;
}

double evaluate(const ModelVersion& model, const Batch& batch, Activation activation) {
  return mean_squared_error(model.params, batch, activation);
}

ModelVersion federated_average(const ModelVersion& base, std::span<const ModelDelta> updates,
                               std::span<const double> weights, Tick now) {
  if (updates.empty()) throw Error(ErrorCode::EmptyUpdates, "no updates to average");
  if (weights.size() != updates.size())
    throw Error(ErrorCode::DimensionMismatch, "one weight per update required");
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w))
      throw Error(ErrorCode::InvalidConfig, "weights must be positive and finite");
    total += w;
  }
  std::vector<std::vector<double>> targets;
  for (const auto& u : updates) {
    if (u.from_id != base.version_id)
      throw Error(ErrorCode::StaleBase, "update based on " + u.from_id.short_hex() +
                                            " cannot fold into " + base.version_id.short_hex());
    targets.push_back(modelstore::apply_delta(base, u));
  }

  std::vector<double> params(base.params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    bool unanimous = std::all_of(targets.begin(), targets.end(), [&](const auto& t) {
      return std::bit_cast<std::uint64_t>(t[i]) == std::bit_cast<std::uint64_t>(targets[0][i]);
    });
    if (unanimous) {
      params[i] = targets[0][i];
      continue;
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < updates.size(); ++k) acc += weights[k] * updates[k].param_diff[i];
    params[i] = base.params[i] + acc / total;
  }
  modelstore::Hyperparams hyper = base.hyperparams;
  for (const auto& u : updates) hyper = modelstore::apply_hyper_delta(hyper, u);
  return ModelVersion::make(std::move(params), std::move(hyper), base.version_id, now);
}

void secure_discard(Batch& batch) {
  for (auto& s : batch) {
    wipe(s.x.id_features);
    wipe(s.x.bd_features);
    s.y.target = 0.0;
    wipe(s.y.robot_id);
    wipe(s.y.session_id);
  }
  batch.clear();
  batch.shrink_to_fit();
}

}  // namespace robochain::learner
