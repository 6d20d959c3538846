#include <gtest/gtest.h>

#include <random>

#include "mxfer/merging.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mxfer;
using namespace mxfer::merging;

namespace {

ParameterVector random_vector(const Layout& layout, std::mt19937_64& rng) {
  ParameterVector p(layout);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : p.data()) v = n(rng);
  return p;
}

Layout toy_layout() { return Layout({{"a.weight", {3, 2}}, {"a.bias", {2}}, {"b.weight", {4}}}); }

ModelSpec small_spec() {
  ModelSpec s;
  s.input_side = 4;
  s.hidden = {6, 5};
  s.head_classes = {3, 3, 3};
  return s;
}

void expect_near(const ParameterVector& a, const ParameterVector& b, double tol) {
  ASSERT_EQ(a.layout(), b.layout());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a.data()[i], b.data()[i], tol) << "coordinate " << i;
}

}  // namespace

TEST(Merging, TaskArithmeticWithOneOverTIsWeightAverage) {
  std::mt19937_64 rng(1);
  for (std::size_t T = 1; T <= 6; ++T) {
    const ParameterVector theta0 = random_vector(toy_layout(), rng);
    std::vector<ParameterVector> models;
    for (std::size_t t = 0; t < T; ++t) models.push_back(random_vector(toy_layout(), rng));
    expect_near(task_arithmetic(theta0, models, 1.0 / static_cast<double>(T)), weight_average(models), 1e-12);
  }
}

TEST(Merging, WeightAverageOfIdenticalCheckpointsIsIdentity) {
  std::mt19937_64 rng(2);
  const ParameterVector p = random_vector(toy_layout(), rng);
  const std::vector<ParameterVector> models(4, p);
  expect_near(weight_average(models), p, 1e-15);
}

TEST(Merging, TiesWithoutTrimOnDisjointSupportsIsTaskArithmetic) {
  std::mt19937_64 rng(3);
  const ParameterVector theta0 = random_vector(toy_layout(), rng);
  const std::size_t n = theta0.size(), T = 3;
  std::vector<ParameterVector> models(T, theta0);
  for (std::size_t i = 0; i < n; ++i) models[i % T].data()[i] += std::normal_distribution<double>(0, 1)(rng);
  for (double lambda : {0.3, 1.0}) expect_near(ties_merge(theta0, models, lambda, 1.0), task_arithmetic(theta0, models, lambda), 1e-12);
}

TEST(Merging, TiesSignElectionByHand) {
  const Layout l({{"w", {4}}});
  const ParameterVector theta0(l, {0, 0, 0, 0});
  // Coordinate 0: +3, -1, +1 -> elect +, mean(3, 1) = 2.
  // Coordinate 1: +1, -1, 0  -> sum 0, contributes nothing.
  // Coordinate 2: -2, -4, +1 -> elect -, mean(-2, -4) = -3.
  // Coordinate 3: all zero.
  const std::vector<ParameterVector> models = {ParameterVector(l, {3, 1, -2, 0}), ParameterVector(l, {-1, -1, -4, 0}),
                                               ParameterVector(l, {1, 0, 1, 0})};
  const ParameterVector m = ties_merge(theta0, models, 1.0, 1.0);
  EXPECT_EQ(m.values(), (std::vector<double>{2, 0, -3, 0}));
  EXPECT_EQ(ties_merge(theta0, models, 0.5, 1.0).values(), (std::vector<double>{1, 0, -1.5, 0}));
}

TEST(Merging, HandExamples) {
  const Layout l({{"w", {2}}});
  const ParameterVector zero(l, {0, 0});
  const std::vector<ParameterVector> ta = {ParameterVector(l, {1, 0}), ParameterVector(l, {0, 2})};
  EXPECT_EQ(task_arithmetic(zero, ta, 0.5).values(), (std::vector<double>{0.5, 1.0}));
  const std::vector<ParameterVector> same(3, zero);
  EXPECT_EQ(task_arithmetic(zero, same, 0.7).values(), zero.values());

  const std::vector<ParameterVector> agree = {ParameterVector(l, {2, 0}), ParameterVector(l, {4, 0})};
  EXPECT_EQ(ties_merge(zero, agree, 1.0, 1.0).values(), (std::vector<double>{3, 0}));
  const std::vector<ParameterVector> tie = {ParameterVector(l, {1, -3}), ParameterVector(l, {-1, -5})};
  EXPECT_EQ(ties_merge(zero, tie, 1.0, 1.0).values(), (std::vector<double>{0, -4}));
  const std::vector<ParameterVector> one = {ParameterVector(l, {1.5, -0.5})};
  EXPECT_EQ(ties_merge(zero, one, 0.5, 1.0).values(), (std::vector<double>{0.75, -0.25}));
}

TEST(Merging, TiesTrimKeepsTopMagnitudes) {
  const Layout l({{"w", {5}}});
  const ParameterVector theta0(l, {0, 0, 0, 0, 0});
  const std::vector<ParameterVector> models = {ParameterVector(l, {0.1, -5, 2, 2, 0.3})};
  // keep = ceil(0.4 * 5) = 2: -5 and the first 2 (lower index wins the tie).
  EXPECT_EQ(ties_merge(theta0, models, 1.0, 0.4).values(), (std::vector<double>{0, -5, 2, 0, 0}));
}

TEST(Merging, SpecValidation) {
  MergeSpec s;
  s.lambda = 0.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = MergeSpec{};
  s.trim_fraction = 1.5;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  EXPECT_EQ(method_tag(Method::Ties, true), "TM+RS");
  EXPECT_EQ(parse_method("AM"), Method::AdaMerging);
  EXPECT_THROW(parse_method("XX"), std::invalid_argument);
}

TEST(Merging, CheckpointMergeTouchesBackboneOnlyAndReusesHeads) {
  const ModelSpec spec = small_spec();
  const ParameterVector theta0 = init_parameters(spec, 1);
  std::vector<ParameterVector> models;
  for (std::uint64_t t = 0; t < 3; ++t) models.push_back(init_parameters(spec, 10 + t));
  MergeSpec ms;
  ms.method = Method::WeightAverage;
  const ParameterVector m = merge_checkpoints(spec, theta0, models, ms);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(m.tensor(head_weight_name(t)), models[t].tensor(head_weight_name(t)));
    EXPECT_EQ(m.tensor(head_bias_name(t)), models[t].tensor(head_bias_name(t)));
  }
  std::vector<ParameterVector> backbones;
  for (const auto& x : models) backbones.push_back(backbone_part(x));
  expect_near(backbone_part(m), weight_average(backbones), 0.0);
}

TEST(Merging, AdaMergingFirstStepFollowsEntropyGradient) {
  const ModelSpec spec = small_spec();
  const ParameterVector theta0 = init_parameters(spec, 1);
  std::vector<ParameterVector> models;
  for (std::uint64_t t = 0; t < 3; ++t) models.push_back(init_parameters(spec, 20 + t));
  std::mt19937_64 rng(4);
  std::vector<Tensor> unlabeled;
  for (int t = 0; t < 3; ++t) unlabeled.push_back(fixtures::random_inputs(8, 16, rng));

  AdaMergeConfig cfg;
  cfg.iterations = 0;
  const auto r0 = ada_merge(spec, theta0, models, unlabeled, cfg);
  MergeSpec ta;
  ta.lambda = cfg.initial_lambda;
  expect_near(r0.merged, merge_checkpoints(spec, theta0, models, ta), 1e-12);

  // Adam's first step moves each coefficient by -lr * sign(dH/dlambda).
  cfg.iterations = 1;
  const auto r1 = ada_merge(spec, theta0, models, unlabeled, cfg);
  auto entropy_at = [&](const std::vector<double>& lam) {
    std::vector<ParameterVector> bb;
    for (const auto& m : models) bb.push_back(backbone_part(m));
    const ParameterVector b0 = backbone_part(theta0);
    ParameterVector merged = b0;
    for (std::size_t t = 0; t < 3; ++t) {
      const auto tau = task_vector(b0, bb[t]);
      for (std::size_t i = 0; i < tau.size(); ++i) merged.data()[i] += lam[t] * tau[i];
    }
    return mean_prediction_entropy(spec, assemble(spec, merged, models), unlabeled);
  };
  const auto g = oracle::finite_difference(entropy_at, std::vector<double>(3, cfg.initial_lambda), 1e-6);
  for (std::size_t t = 0; t < 3; ++t) {
    ASSERT_NE(g[t], 0.0);
    EXPECT_NEAR(r1.lambdas[t][0] - cfg.initial_lambda, g[t] > 0 ? -cfg.learning_rate : cfg.learning_rate, 1e-9);
  }
}

TEST(Merging, AdaMergingLayerWiseHasOneColumnPerBackboneGroup) {
  const ModelSpec spec = small_spec();
  const ParameterVector theta0 = init_parameters(spec, 1);
  std::vector<ParameterVector> models;
  for (std::uint64_t t = 0; t < 3; ++t) models.push_back(init_parameters(spec, 30 + t));
  std::mt19937_64 rng(5);
  std::vector<Tensor> unlabeled;
  for (int t = 0; t < 3; ++t) unlabeled.push_back(fixtures::random_inputs(8, 16, rng));
  AdaMergeConfig cfg;
  cfg.mode = AdaMode::LayerWise;
  cfg.iterations = 30;
  const auto r = ada_merge(spec, theta0, models, unlabeled, cfg);
  EXPECT_EQ(r.layer_groups.size(), spec.hidden.size());
  EXPECT_EQ(r.lambdas.size(), 3u);
  EXPECT_EQ(r.lambdas[0].size(), r.layer_groups.size());
  EXPECT_EQ(r.entropy_curve.size(), cfg.iterations + 1);
  EXPECT_LT(r.entropy_curve.back(), r.entropy_curve.front());
}

TEST(Surgery, ZeroUpProjectionIsIdentityAndTrainingReducesObjective) {
  const ModelSpec spec = small_spec();
  const ParameterVector theta0 = init_parameters(spec, 1);
  std::vector<ParameterVector> models;
  for (std::uint64_t t = 0; t < 3; ++t) models.push_back(init_parameters(spec, 40 + t));
  std::mt19937_64 rng(6);
  std::vector<Tensor> unlabeled;
  for (int t = 0; t < 3; ++t) unlabeled.push_back(fixtures::random_inputs(32, 16, rng));
  MergeSpec ms;
  ms.method = Method::TaskArithmetic;
  auto base = std::make_shared<MergedModel>(MergedModel{spec, merge_checkpoints(spec, theta0, models, ms), "TA", {}});

  SurgeryConfig sc;
  sc.iterations = 0;
  sc.rank = 2;
  auto untrained = std::make_shared<MergedModel>(train_surgery(*base, models, unlabeled, sc));
  EXPECT_EQ(untrained->method, "TA+RS");
  EXPECT_EQ(untrained->adapters.size(), 3u);
  for (std::size_t t = 0; t < 3; ++t)
    EXPECT_EQ(MergedTaskModel(untrained, t).logits(unlabeled[t]), MergedTaskModel(base, t).logits(unlabeled[t]));

  sc.iterations = 200;
  sc.learning_rate = 1e-2;
  auto trained = std::make_shared<MergedModel>(train_surgery(*base, models, unlabeled, sc));
  EXPECT_EQ(trained->theta, base->theta);
  for (std::size_t t = 0; t < 3; ++t) {
    const Tensor zm = features(spec, base->theta, unlabeled[t]);
    const Tensor zi = features(spec, models[t], unlabeled[t]);
    EXPECT_LT(surgery_objective(trained->adapters[t], zm, zi), surgery_objective(untrained->adapters[t], zm, zi));
  }
}

TEST(Surgery, TapedDebiasMatchesUntaped) {
  std::mt19937_64 rng(7);
  Adapter a{fixtures::random_tensor({5, 2}, rng), fixtures::random_tensor({2, 5}, rng)};
  const Tensor z = fixtures::random_tensor({4, 5}, rng);
  ad::Tape tape;
  EXPECT_EQ(a.debias(tape, tape.constant(z)).value(), a.debias(z));
  EXPECT_EQ(a.parameter_count(), 20u);
}
