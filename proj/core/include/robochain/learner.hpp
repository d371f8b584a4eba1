#pragma once

#include <span>
#include <string>
#include <vector>

#include "robochain/modelstore.hpp"

namespace robochain::learner {

using modelstore::ModelDelta;
using modelstore::ModelVersion;

struct FeatureVector {
  std::vector<double> id_features;  // interaction-data summary statistics
  std::vector<double> bd_features;  // aggregated background-data answers

  std::size_t dimension() const { return id_features.size() + bd_features.size(); }
  double at(std::size_t i) const {
    return i < id_features.size() ? id_features[i] : bd_features[i - id_features.size()];
  }
};

struct TherapistFeedback {
  double target = 0.0;  // clamped to [0, 1]
  std::string robot_id;
  std::string session_id;
  Tick timestamp = 0;

  static TherapistFeedback make(double target, std::string robot_id, std::string session_id,
                                Tick timestamp);
};

struct Sample {
  FeatureVector x;
  TherapistFeedback y;
};

using Batch = std::vector<Sample>;

struct OptimizerState {
  double rho = 0.95;
  double epsilon = 1e-6;
  std::vector<double> accumulated_grad_sq;
  std::vector<double> accumulated_update_sq;

  static OptimizerState adadelta(std::size_t dimension, double rho = 0.95, double epsilon = 1e-6);
};

enum class Activation { Sigmoid, Identity };
enum class UpdateRule { Adadelta, PlainGradient };

struct TrainOptions {
  std::size_t epochs = 1;
  double learning_rate = 1.0;
  Activation activation = Activation::Sigmoid;
  UpdateRule rule = UpdateRule::Adadelta;
};

struct TrainResult {
  ModelVersion model;  // uncommitted; parent is the input model
  OptimizerState optimizer;
  std::vector<double> loss_trace;  // loss before epoch 1, then after each epoch
};

/// Parameters are [w_0 .. w_{d-1}, b].
double predict(std::span<const double> params, const FeatureVector& x,
               Activation activation = Activation::Sigmoid);
double predict(const ModelVersion& model, const FeatureVector& x,
               Activation activation = Activation::Sigmoid);

/// Mean squared error over the batch.
double mean_squared_error(std::span<const double> params, const Batch& batch,
                          Activation activation = Activation::Sigmoid);

/// d(MSE)/d(params), analytic.
std::vector<double> gradient(std::span<const double> params, const Batch& batch,
                             Activation activation = Activation::Sigmoid);

/// Full-batch training. The batch is wiped before returning, whether
/// training succeeds or throws.
TrainResult fine_tune(const ModelVersion& model, Batch&& batch, OptimizerState optimizer,
                      const TrainOptions& options, Tick now = 0);

double evaluate(const ModelVersion& model, const Batch& batch,
                Activation activation = Activation::Sigmoid);

/// 1 / (1 + loss), in (0, 1].
inline double feedback_score(double loss) { return 1.0 / (1.0 + loss); }

/// base + sum(w_i * diff_i) / sum(w_i). Elements on which every update
/// agrees take that update exactly.
ModelVersion federated_average(const ModelVersion& base, std::span<const ModelDelta> updates,
                               std::span<const double> weights, Tick now = 0);

/// Zeroes every feature and target, then releases the storage.
void secure_discard(Batch& batch);

}  // namespace robochain::learner
