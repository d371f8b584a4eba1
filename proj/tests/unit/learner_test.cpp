#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "oracles.hpp"
#include "robochain/errors.hpp"
#include "robochain/learner.hpp"

using namespace robochain;
using namespace robochain::learner;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::InvariantViolation;
}

Sample sample(std::vector<double> id, std::vector<double> bd, double y) {
  return Sample{FeatureVector{std::move(id), std::move(bd)}, TherapistFeedback::make(y, "r", "s", 0)};
}

Batch random_batch(std::mt19937_64& rng, std::size_t n, std::size_t id_dim, std::size_t bd_dim) {
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  Batch b;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> id(id_dim), bd(bd_dim);
    for (auto& x : id) x = g(rng);
    for (auto& x : bd) x = u(rng);
    b.push_back(sample(id, bd, u(rng)));
  }
  return b;
}

ModelVersion zero_model(std::size_t dim) { return ModelVersion::make(std::vector<double>(dim, 0.0), {}, std::nullopt, 0); }

}  // namespace

TEST(Predict, SigmoidValues) {
  std::vector<double> p{0.0, 0.0};
  FeatureVector x{{3.0}, {}};
  EXPECT_EQ(predict(p, x), 0.5);
  std::vector<double> sat{0.0, 50.0};
  EXPECT_NEAR(predict(sat, x), 1.0, 1e-9);
  std::vector<double> neg{0.0, -50.0};
  EXPECT_NEAR(predict(neg, x), 0.0, 1e-9);
  std::vector<double> bad{1.0, 2.0, 3.0};
  EXPECT_EQ(code_of([&] { predict(bad, x); }), ErrorCode::DimensionMismatch);
}

TEST(Feedback, TargetIsClamped) {
  EXPECT_EQ(TherapistFeedback::make(1.7, "r", "s", 0).target, 1.0);
  EXPECT_EQ(TherapistFeedback::make(-0.2, "r", "s", 0).target, 0.0);
  EXPECT_EQ(code_of([] { TherapistFeedback::make(NAN, "r", "s", 0); }), ErrorCode::NonFiniteParams);
}

TEST(FineTune, ClosedFormSingleStep) {
  Batch b{sample({1.0}, {}, 1.0)};
  TrainOptions opt;
  opt.epochs = 1;
  opt.learning_rate = 0.1;
  opt.activation = Activation::Identity;
  opt.rule = UpdateRule::PlainGradient;
  auto r = fine_tune(zero_model(2), std::move(b), OptimizerState::adadelta(2), opt);
  EXPECT_EQ(r.model.params[0], 0.2);
  EXPECT_EQ(r.model.params[1], 0.2);
  EXPECT_TRUE(b.empty());

  Batch again{sample({1.0}, {}, 1.0)};
  std::vector<double> zero{0.0, 0.0};
  EXPECT_EQ(gradient(zero, again, Activation::Identity)[0], -2.0);
  EXPECT_NEAR(gradient(zero, again)[0], oracle::numeric_gradient(zero, again)[0], 1e-9);
}

TEST(FineTune, StationaryBatchBarelyMoves) {
  std::vector<double> params{0.3, -0.7, 0.1};
  Batch b;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0, 1);
  for (int i = 0; i < 20; ++i) {
    FeatureVector x{{g(rng)}, {g(rng)}};
    b.push_back(Sample{x, TherapistFeedback::make(predict(params, x), "r", "s", 0)});
  }
  auto m = ModelVersion::make(params, {}, std::nullopt, 0);
  auto r = fine_tune(m, std::move(b), OptimizerState::adadelta(3), TrainOptions{10, 1.0});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_LT(std::fabs(r.model.params[i] - params[i]), 1e-9);
}

TEST(FineTune, LearnsSyntheticLogisticModel) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0, 1);
  const std::vector<double> truth{1.5, -2.0, 0.7, 0.3};
  Batch b;
  for (int i = 0; i < 200; ++i) {
    FeatureVector x{{g(rng), g(rng), g(rng)}, {}};
    b.push_back(Sample{x, TherapistFeedback::make(predict(truth, x), "r", "s", 0)});
  }
  const double initial = mean_squared_error(zero_model(4).params, b);
  auto r = fine_tune(zero_model(4), std::move(b), OptimizerState::adadelta(4), TrainOptions{500, 1.0});
  EXPECT_EQ(r.loss_trace.front(), initial);
  EXPECT_LT(r.loss_trace.back(), initial / 10);
  EXPECT_EQ(r.loss_trace.size(), 501u);
}

TEST(FineTune, DeterministicAndParentLinked) {
  std::mt19937_64 r1(4), r2(4);
  auto m = zero_model(5);
  auto a = fine_tune(m, random_batch(r1, 30, 2, 2), OptimizerState::adadelta(5), TrainOptions{20, 1.0});
  auto b = fine_tune(m, random_batch(r2, 30, 2, 2), OptimizerState::adadelta(5), TrainOptions{20, 1.0});
  EXPECT_EQ(a.model.version_id, b.model.version_id);
  EXPECT_EQ(a.model.parent_id, m.version_id);
  EXPECT_EQ(a.model.hyperparams.at("epochs"), 20);
}

TEST(FineTune, ErrorsStillWipeBatch) {
  Batch b{sample({1.0, 2.0}, {}, 0.5)};
  EXPECT_EQ(code_of([&] { fine_tune(zero_model(2), std::move(b), OptimizerState{}, TrainOptions{}); }),
            ErrorCode::DimensionMismatch);
  EXPECT_TRUE(b.empty());
  Batch empty;
  EXPECT_EQ(code_of([&] { fine_tune(zero_model(2), std::move(empty), OptimizerState{}, TrainOptions{}); }),
            ErrorCode::EmptyBatch);
}

TEST(Evaluate, ExamplesAndNaiveOracle) {
  Batch ones{sample({0.0}, {}, 1.0), sample({2.0}, {}, 1.0)};
  double loss = evaluate(zero_model(2), ones);
  EXPECT_EQ(loss, 0.25);
  EXPECT_EQ(feedback_score(loss), 0.8);
  std::vector<double> exact{0.0, 0.0};
  Batch perfect{sample({1.0}, {}, 0.5)};
  EXPECT_EQ(mean_squared_error(exact, perfect), 0.0);
  EXPECT_EQ(feedback_score(0.0), 1.0);
  EXPECT_EQ(code_of([] { evaluate(zero_model(2), Batch{}); }), ErrorCode::EmptyBatch);

  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0, 1);
  for (int t = 0; t < 50; ++t) {
    auto b = random_batch(rng, 25, 3, 2);
    std::vector<double> p(6);
    for (auto& x : p) x = g(rng);
    EXPECT_NEAR(mean_squared_error(p, b), oracle::naive_mse(p, b), 1e-14);
  }
}

TEST(Gradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> g(0, 1);
  for (int t = 0; t < 50; ++t) {
    auto b = random_batch(rng, 10, 3, 1);
    std::vector<double> p(5);
    for (auto& x : p) x = g(rng);
    auto an = gradient(p, b);
    auto num = oracle::numeric_gradient(p, b);
    for (std::size_t i = 0; i < p.size(); ++i)
      EXPECT_LE(std::fabs(an[i] - num[i]), 1e-5 * std::max(1e-3, std::fabs(num[i]))) << i;
  }
}

TEST(FederatedAverage, Examples) {
  auto base = ModelVersion::make({1.0, 2.0, 3.0}, {{"epochs", 1}}, std::nullopt, 0);
  auto up = ModelVersion::make({1.5, 2.0, 2.5}, {{"epochs", 2}}, base.version_id, 0);
  auto down = ModelVersion::make({0.5, 2.0, 3.5}, {{"epochs", 2}}, base.version_id, 0);
  auto d_up = modelstore::make_delta(base, up);
  auto d_down = modelstore::make_delta(base, down);

  std::vector<ModelDelta> one{d_up};
  std::vector<double> w1{1.0};
  EXPECT_EQ(federated_average(base, one, w1).params, up.params);

  std::vector<ModelDelta> two{d_up, d_down};
  std::vector<double> w2{1.0, 1.0};
  EXPECT_EQ(federated_average(base, two, w2).params, base.params);

  std::vector<ModelDelta> same{d_up, d_up, d_up};
  std::vector<double> w3{0.2, 5.0, 1.0};
  EXPECT_EQ(federated_average(base, same, w3).params, up.params);
}

TEST(FederatedAverage, MatchesScalarLoop) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> uw(0.1, 3.0);
  std::vector<double> bp(16);
  for (auto& x : bp) x = g(rng);
  auto base = ModelVersion::make(bp, {}, std::nullopt, 0);
  std::vector<ModelDelta> ds;
  std::vector<double> ws;
  for (int k = 0; k < 5; ++k) {
    std::vector<double> tp(16);
    for (std::size_t i = 0; i < 16; ++i) tp[i] = bp[i] + 0.1 * g(rng);
    ds.push_back(modelstore::make_delta(base, ModelVersion::make(tp, {}, base.version_id, 0)));
    ws.push_back(uw(rng));
  }
  auto out = federated_average(base, ds, ws);
  double wsum = 0;
  for (double w : ws) wsum += w;
  for (std::size_t i = 0; i < 16; ++i) {
    double acc = 0;
    for (std::size_t k = 0; k < 5; ++k) acc += ws[k] * ds[k].param_diff[i];
    EXPECT_NEAR(out.params[i], bp[i] + acc / wsum, 1e-15 * std::max(1.0, std::fabs(bp[i])));
  }
  EXPECT_EQ(out.parent_id, base.version_id);
}

TEST(FederatedAverage, Errors) {
  auto base = ModelVersion::make({1.0}, {}, std::nullopt, 0);
  auto other = ModelVersion::make({2.0}, {}, std::nullopt, 0);
  auto d = modelstore::make_delta(other, ModelVersion::make({3.0}, {}, other.version_id, 0));
  std::vector<ModelDelta> ds{d};
  std::vector<double> w{1.0};
  EXPECT_EQ(code_of([&] { federated_average(base, ds, w); }), ErrorCode::StaleBase);
  EXPECT_EQ(code_of([&] { federated_average(base, {}, {}); }), ErrorCode::EmptyUpdates);
  std::vector<double> zero{0.0};
  EXPECT_EQ(code_of([&] { federated_average(other, ds, zero); }), ErrorCode::InvalidConfig);
}

TEST(SecureDiscard, ZeroesAndReleases) {
  std::mt19937_64 rng(1);
  auto b = random_batch(rng, 8, 3, 3);
  secure_discard(b);
  EXPECT_TRUE(b.empty());
  EXPECT_EQ(b.capacity(), 0u);
}
