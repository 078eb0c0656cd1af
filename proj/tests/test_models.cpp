#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "tracelens/models/classifier.hpp"
#include "tracelens/random.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace tracelens;
using namespace tracelens::models;
using oracles::knn_oracle;

namespace {

LabeledDataset grid_points(Rng& rng, std::size_t n, std::size_t dim, int classes) {
  LabeledDataset d{.dim = dim, .classes = classes};
  std::vector<double> x(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : x) v = static_cast<double>(rng.between(0, 4));
    d.add(x, static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
  }
  return d;
}

LabeledDataset two_moons(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  LabeledDataset d{.dim = 2, .classes = 2};
  for (std::size_t i = 0; i < n; ++i) {
    const double t = rng.uniform(0.0, 3.141592653589793);
    const int label = static_cast<int>(i % 2);
    const double x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
    const double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
    d.add(std::vector{x + rng.uniform(-0.1, 0.1), y + rng.uniform(-0.1, 0.1)}, label);
  }
  return d;
}

double training_accuracy(const TrainedModel& m, const LabeledDataset& d) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < d.size(); ++i) ok += predict_label(m, d.row(i)) == d.labels[i] ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(d.size());
}

Hyperparams with_k(int k) {
  Hyperparams h;
  h.k = k;
  return h;
}

}  // namespace

TEST(Knn, QueryOnTrainingPointWithKOne) {
  Rng rng(1);
  const auto d = testing_support::random_dataset(rng, 20, 3);
  const auto m = train_classifier(ModelKind::kKnn, with_k(1), d, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto p = predict_proba(m, d.row(i));
    EXPECT_EQ(p[static_cast<std::size_t>(d.labels[i])], 1.0);
  }
}

TEST(Knn, PlantedFivePointFixture) {
  LabeledDataset d{.dim = 2, .classes = 2};
  d.add(std::vector{0.0, 0.0}, 0);
  d.add(std::vector{1.0, 0.0}, 1);
  d.add(std::vector{0.0, 1.0}, 1);
  d.add(std::vector{5.0, 5.0}, 0);
  d.add(std::vector{-1.0, 0.0}, 0);
  const auto params = knn_fit(d);
  // query (0,0): distances 0, 1, 1, 7.07, 1 -> rows 0, 1, 2 (ties by index)
  const std::vector q = {0.0, 0.0};
  EXPECT_EQ(knn_predict(params, 3, q), knn_oracle(d, 3, q));
  EXPECT_EQ(knn_predict(params, 3, q), (std::vector{1.0 / 3.0, 2.0 / 3.0}));
}

TEST(Knn, MatchesExhaustiveOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto d = grid_points(rng, 50, 3, 3);
    const auto params = knn_fit(d);
    std::vector<double> q(3);
    for (auto& v : q) v = static_cast<double>(rng.between(0, 4));
    for (int k : {1, 3, 5, 50, 60}) ASSERT_EQ(knn_predict(params, k, q), knn_oracle(d, k, q));
  }
}

TEST(Gnb, IdenticalStatisticsGiveUniform) {
  LabeledDataset d{.dim = 2, .classes = 2};
  for (int label : {0, 1}) {
    d.add(std::vector{1.0, 2.0}, label);
    d.add(std::vector{3.0, 0.0}, label);
  }
  const auto m = train_classifier(ModelKind::kGnb, {}, d, 0);
  EXPECT_EQ(predict_proba(m, std::vector{7.0, -3.0}), (std::vector{0.5, 0.5}));
}

TEST(Gnb, HandComputedPosterior) {
  // class 0 at {0, 2}: mean 1, var 1; class 1 at {4, 6}: mean 5, var 1
  LabeledDataset d{.dim = 1, .classes = 2};
  d.add(std::vector{0.0}, 0);
  d.add(std::vector{2.0}, 0);
  d.add(std::vector{4.0}, 1);
  d.add(std::vector{6.0}, 1);
  const auto m = train_classifier(ModelKind::kGnb, {}, d, 0);
  const double l0 = -0.5 * 2.5 * 2.5, l1 = -0.5 * 1.5 * 1.5;
  const auto p = predict_proba(m, std::vector{3.5});
  EXPECT_NEAR(p[1], std::exp(l1) / (std::exp(l0) + std::exp(l1)), 1e-12);
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
}

TEST(Gnb, ArgmaxInvariantToPositiveRescaling) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = testing_support::random_dataset(rng, 40, 4);
    const double c = rng.uniform(0.1, 10.0);
    LabeledDataset scaled{.dim = d.dim, .classes = d.classes};
    for (std::size_t i = 0; i < d.size(); ++i) {
      std::vector<double> x(d.row(i).begin(), d.row(i).end());
      for (auto& v : x) v *= c;
      scaled.add(x, d.labels[i]);
    }
    const auto a = train_classifier(ModelKind::kGnb, {}, d, 0);
    const auto b = train_classifier(ModelKind::kGnb, {}, scaled, 0);
    for (int q = 0; q < 20; ++q) {
      std::vector<double> x(4);
      for (auto& v : x) v = rng.uniform(-1.0, 1.0);
      std::vector<double> xs = x;
      for (auto& v : xs) v *= c;
      ASSERT_EQ(predict_label(a, x), predict_label(b, xs));
    }
  }
}

TEST(Forest, SingleUnboundedTreeMemorizes) {
  Rng rng(5);
  const auto d = testing_support::random_dataset(rng, 60, 3);
  Hyperparams h;
  h.forest.trees = 1;
  h.forest.bootstrap = false;
  h.forest.max_depth = 1000;
  h.forest.features_per_split = 3;
  const auto m = train_classifier(ModelKind::kForest, h, d, 9);
  EXPECT_EQ(training_accuracy(m, d), 1.0);
}

TEST(Forest, DistributionsSumToOne) {
  Rng rng(6);
  const auto d = testing_support::random_dataset(rng, 80, 5, 3);
  Hyperparams h;
  h.forest.trees = 7;
  const auto m = train_classifier(ModelKind::kForest, h, d, 3);
  for (int q = 0; q < 50; ++q) {
    std::vector<double> x(5);
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
    const auto p = predict_proba(m, x);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
    for (double v : p) EXPECT_GE(v, 0.0);
  }
}

TEST(Training, DeterministicPerSeed) {
  Rng rng(7);
  const auto d = testing_support::random_dataset(rng, 60, 4);
  for (auto kind : {ModelKind::kForest, ModelKind::kNn}) {
    Hyperparams h;
    h.forest.trees = 5;
    h.nn.hidden = 4;
    h.nn.epochs = 5;
    EXPECT_EQ(train_classifier(kind, h, d, 21).params, train_classifier(kind, h, d, 21).params);
    EXPECT_NE(train_classifier(kind, h, d, 21).params, train_classifier(kind, h, d, 22).params);
  }
}

TEST(Training, RejectsBadInput) {
  LabeledDataset empty{.dim = 2, .classes = 2};
  EXPECT_THROW(train_classifier(ModelKind::kGnb, {}, empty, 0), Error);
  LabeledDataset one_class{.dim = 1, .classes = 2};
  one_class.add(std::vector{1.0}, 0);
  one_class.add(std::vector{2.0}, 0);
  EXPECT_THROW(train_classifier(ModelKind::kGnb, {}, one_class, 0), Error);
  Rng rng(8);
  const auto d = testing_support::random_dataset(rng, 10, 2);
  EXPECT_THROW(train_classifier(ModelKind::kKnn, with_k(0), d, 0), Error);
  const auto m = train_classifier(ModelKind::kKnn, with_k(1), d, 0);
  EXPECT_THROW(predict_proba(m, std::vector{1.0}), Error);
}

TEST(Probabilities, NonnegativeAndNormalized) {
  Rng rng(9);
  const auto d = testing_support::random_dataset(rng, 60, 4, 3);
  Hyperparams h;
  h.forest.trees = 5;
  h.nn.epochs = 3;
  for (auto kind : {ModelKind::kKnn, ModelKind::kGnb, ModelKind::kForest, ModelKind::kNn}) {
    const auto m = train_classifier(kind, h, d, 1);
    for (int q = 0; q < 30; ++q) {
      std::vector<double> x(4);
      for (auto& v : x) v = rng.uniform(-3.0, 3.0);
      const auto p = predict_proba(m, x);
      ASSERT_EQ(p.size(), 3u);
      ASSERT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
      for (double v : p) ASSERT_GE(v, 0.0);
    }
  }
}

TEST(Nn, ZeroEpochsReturnsInitialization) {
  Rng rng(10);
  const auto d = testing_support::random_dataset(rng, 30, 5);
  Hyperparams h;
  h.nn.hidden = 6;
  h.nn.epochs = 0;
  const auto m = train_classifier(ModelKind::kNn, h, d, 77);
  Rng init(77);
  EXPECT_EQ(std::get<MlpParams>(m.params), mlp_init(5, 6, 2, init));
}

TEST(Nn, GlorotInitializationBounds) {
  Rng rng(11);
  const auto p = mlp_init(10, 4, 2, rng);
  const double l1 = std::sqrt(6.0 / 14.0), l2 = std::sqrt(6.0 / 6.0);
  for (double w : p.w1) EXPECT_LE(std::abs(w), l1);
  for (double w : p.w2) EXPECT_LE(std::abs(w), l2);
  for (double b : p.b1) EXPECT_EQ(b, 0.0);
  for (double b : p.b2) EXPECT_EQ(b, 0.0);
}

TEST(Nn, TwoMoons) {
  const auto d = two_moons(200, 12);
  Hyperparams h;
  h.nn.hidden = 16;
  h.nn.epochs = 200;
  h.nn.learning_rate = 0.1;
  h.nn.decay = 0.0;
  const auto m = train_classifier(ModelKind::kNn, h, d, 5);
  EXPECT_GE(training_accuracy(m, d), 0.95);
}

TEST(Nn, GradientCheckRandomNets) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto dim = rng.between(1, 16);
    const auto hidden = rng.between(1, 8);
    const auto batch = testing_support::random_dataset(rng, rng.between(1, 8), dim);
    Rng init(rng.next());
    TrainedModel m{.kind = ModelKind::kNn, .classes = 2, .dim = dim,
                   .params = mlp_init(dim, hidden, 2, init)};
    // move away from the symmetric zero-bias start
    auto& p = std::get<MlpParams>(m.params);
    for (auto& b : p.b1) b = rng.uniform(-0.5, 0.5);
    for (auto& b : p.b2) b = rng.uniform(-0.5, 0.5);
    EXPECT_LT(nn_gradient_check(m, batch), 1e-4) << "trial " << trial;
  }
}

TEST(Nn, GradientCheckSmallNet) {
  Rng rng(14);
  const auto batch = testing_support::random_dataset(rng, 8, 10);
  Rng init(3);
  TrainedModel m{.kind = ModelKind::kNn, .classes = 2, .dim = 10, .params = mlp_init(10, 5, 2, init)};
  EXPECT_LT(nn_gradient_check(m, batch), 1e-4);
}

TEST(Nn, GradientCheckSingleUnitOneSample) {
  Rng rng(15);
  const auto batch = testing_support::random_dataset(rng, 1, 3);
  Rng init(4);
  TrainedModel m{.kind = ModelKind::kNn, .classes = 2, .dim = 3, .params = mlp_init(3, 1, 2, init)};
  EXPECT_LT(nn_gradient_check(m, batch), 1e-7);
}

TEST(Nn, GradientCheckPreconditions) {
  Rng rng(16);
  const auto batch = testing_support::random_dataset(rng, 4, 3);
  Rng init(4);
  TrainedModel m{.kind = ModelKind::kNn, .classes = 2, .dim = 3, .params = mlp_init(3, 2, 2, init)};
  EXPECT_THROW(nn_gradient_check(m, batch, 0.0), Error);
  const auto knn = train_classifier(ModelKind::kKnn, with_k(1), batch, 0);
  EXPECT_THROW(nn_gradient_check(knn, batch), Error);
}
