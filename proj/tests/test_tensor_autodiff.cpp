#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "gradcheck.hpp"
#include "mxfer/autodiff.hpp"
#include "mxfer/model.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mxfer;

TEST(Tensor, ShapeMatchesDataLength) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(shape_size({4, 0, 2}), 0u);
}

TEST(Tensor, MatmulByHand) {
  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor b = Tensor::matrix(2, 2, {5, 6, 7, 8});
  EXPECT_EQ(kernels::matmul(a, b).values(), (std::vector<double>{19, 22, 43, 50}));
  EXPECT_EQ(kernels::matmul_tn(a, b).values(), (std::vector<double>{26, 30, 38, 44}));
  EXPECT_EQ(kernels::matmul_nt(a, b).values(), (std::vector<double>{17, 23, 39, 53}));
  EXPECT_THROW(kernels::matmul(a, Tensor::matrix(3, 1, {1, 2, 3})), ShapeError);
}

TEST(Tensor, NonFiniteRejectedAtOpBoundary) {
  const Tensor bad = Tensor::vector({1.0, std::numeric_limits<double>::quiet_NaN()});
  EXPECT_THROW(require_finite(bad, "test"), NumericError);
  EXPECT_THROW(kernels::log(Tensor::vector({0.0})), NumericError);
  ad::Tape tape;
  EXPECT_THROW(tape.leaf(bad), NumericError);
  auto z = tape.leaf(Tensor::vector({-1.0}));
  EXPECT_THROW(ad::log(z), NumericError);
}

TEST(Tensor, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(3);
  const Tensor p = kernels::softmax_rows(fixtures::random_tensor({5, 7}, rng, -50, 50));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) s += p.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Tensor, ConvMatchesNaiveCorrelation) {
  std::mt19937_64 rng(11);
  const Tensor x = fixtures::random_tensor({1, 1, 5, 5}, rng);
  const Tensor k = fixtures::random_tensor({3, 3}, rng);
  const auto expected = oracle::correlate2d(x.values(), 5, k.values(), 3);
  const Tensor got = kernels::depthwise_conv2d(x, k);
  for (std::size_t i = 0; i < 25; ++i) EXPECT_NEAR(got[i], expected[i], 1e-14);
  const Tensor viaconv = kernels::conv2d(x, k.reshaped({1, 1, 3, 3}), Tensor::vector({0.0}));
  for (std::size_t i = 0; i < 25; ++i) EXPECT_NEAR(viaconv[i], expected[i], 1e-14);
}

TEST(Autodiff, TapeOrderIsTopological) {
  ad::Tape tape;
  auto a = tape.leaf(Tensor::vector({1, 2}));
  auto b = tape.leaf(Tensor::vector({3, 4}));
  auto c = ad::sum(ad::mul(ad::add(a, b), a));
  EXPECT_GT(c.id(), a.id());
  EXPECT_EQ(tape.kind(c.id()), ad::OpKind::Sum);
  const auto g = tape.backward(c);
  // d/da sum((a+b)a) = 2a + b
  EXPECT_EQ(g.of(a).values(), (std::vector<double>{5, 8}));
  EXPECT_EQ(g.of(b).values(), (std::vector<double>{1, 2}));
  EXPECT_EQ(g.of(a).shape(), a.shape());
}

TEST(Autodiff, CrossEntropyRejectsBadLabels) {
  ad::Tape tape;
  auto z = tape.leaf(Tensor::matrix(1, 3, {1, 2, 3}));
  EXPECT_THROW(ad::cross_entropy(z, ad::one_hot({0}, 2)), std::out_of_range);
}

TEST(Autodiff, RandomGraphsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto r = fixtures::random_gradcheck(seed);
    EXPECT_LT(r.max_relative_error, 1e-5) << r.kind << " seed " << seed;
  }
}

TEST(Autodiff, ModelInputAndParameterGradients) {
  ModelSpec spec;
  spec.input_side = 4;
  spec.hidden = {6, 5};
  spec.head_classes = {3, 2};
  for (Architecture arch : {Architecture::Mlp, Architecture::SmallConv}) {
    spec.architecture = arch;
    const ParameterVector params = init_parameters(spec, 6);
    std::mt19937_64 rng(9);
    const Tensor x = fixtures::random_inputs(3, 16, rng);
    const Tensor y = ad::one_hot({0, 2, 2}, 3);
    auto loss_of = [&](const ParameterVector& p, const Tensor& xin) {
      ad::Tape t;
      auto bp = bind(t, p, false);
      auto xv = t.constant(xin);
      return ad::cross_entropy(head_logits(spec, bp, features(spec, bp, xv), 0), y).value()[0];
    };
    ad::Tape tape;
    auto bp = bind(tape, params, true);
    auto xv = tape.leaf(x);
    auto loss = ad::cross_entropy(head_logits(spec, bp, features(spec, bp, xv), 0), y);
    const auto g = tape.backward(loss);
    const ParameterVector gp = gradient_vector(params.layout(), bp, g);
    const auto fd_p = oracle::finite_difference(
        [&](const std::vector<double>& v) { return loss_of(ParameterVector(params.layout(), v), x); }, params.values());
    EXPECT_LT(oracle::relative_error(gp.values(), fd_p), 1e-5) << to_string(arch);
    const auto fd_x = oracle::finite_difference(
        [&](const std::vector<double>& v) { return loss_of(params, Tensor(x.shape(), v)); }, x.values());
    EXPECT_LT(oracle::relative_error(g.of(xv).values(), fd_x), 1e-5) << to_string(arch);
  }
}

TEST(Autodiff, UntapedForwardMatchesTape) {
  ModelSpec spec;
  spec.head_classes = {4};
  const ParameterVector params = init_parameters(spec, 1);
  std::mt19937_64 rng(2);
  const Tensor x = fixtures::random_inputs(5, 64, rng);
  ad::Tape tape;
  auto bp = bind(tape, params, false);
  const Tensor taped = head_logits(spec, bp, features(spec, bp, tape.constant(x)), 0).value();
  const Tensor plain = head_logits(spec, params, features(spec, params, x), 0);
  EXPECT_EQ(taped, plain);
}
