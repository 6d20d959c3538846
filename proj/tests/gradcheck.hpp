#pragma once

// Random computation graphs for checking reverse-mode gradients against central differences.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mxfer/autodiff.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace mxfer::fixtures {

struct GradCheck {
  std::string kind;
  double max_relative_error = 0.0;
  std::size_t leaves = 0;
};

using GraphBuilder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

inline GradCheck check_graph(const std::string& kind, const std::vector<Tensor>& leaves, const GraphBuilder& build) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& l : leaves) vars.push_back(tape.leaf(l));
  const ad::Var loss = build(tape, vars);
  const ad::Gradients grads = tape.backward(loss);

  GradCheck out{kind, 0.0, leaves.size()};
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto f = [&](const std::vector<double>& v) {
      std::vector<Tensor> perturbed = leaves;
      perturbed[i] = Tensor(leaves[i].shape(), v);
      ad::Tape t;
      std::vector<ad::Var> pv;
      for (const auto& l : perturbed) pv.push_back(t.leaf(l));
      return build(t, pv).value()[0];
    };
    const auto fd = oracle::finite_difference(f, leaves[i].values());
    out.max_relative_error = std::max(out.max_relative_error, oracle::relative_error(grads.of(vars[i]).values(), fd));
  }
  return out;
}

/// One random layer configuration drawn from `seed`.
inline GradCheck random_gradcheck(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto dim = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  const std::size_t n = dim(1, 4);
  std::vector<std::size_t> labels(n);
  switch (seed % 5) {
    case 0: {  // dense -> relu -> dense -> cross-entropy
      const std::size_t d = dim(2, 8), h = dim(2, 8), c = dim(2, 5);
      for (auto& y : labels) y = dim(0, c - 1);
      const Tensor onehot = ad::one_hot(labels, c);
      return check_graph("mlp",
                         {random_tensor({n, d}, rng), random_tensor({d, h}, rng), random_tensor({h}, rng),
                          random_tensor({h, c}, rng), random_tensor({c}, rng)},
                         [onehot](ad::Tape&, const std::vector<ad::Var>& v) {
                           auto z = ad::relu(ad::add_bias(ad::matmul(v[0], v[1]), v[2]));
                           return ad::cross_entropy(ad::add_bias(ad::matmul(z, v[3]), v[4]), onehot);
                         });
    }
    case 1: {  // conv2d -> relu -> flatten -> dense -> cross-entropy
      const std::size_t ch = dim(1, 2), side = dim(3, 5), o = dim(1, 3), k = dim(0, 1) ? 3 : 1, c = dim(2, 4);
      for (auto& y : labels) y = dim(0, c - 1);
      const Tensor onehot = ad::one_hot(labels, c);
      const std::size_t flat = o * side * side;
      return check_graph("conv",
                         {random_tensor({n, ch, side, side}, rng), random_tensor({o, ch, k, k}, rng),
                          random_tensor({o}, rng), random_tensor({flat, c}, rng)},
                         [onehot, n, flat](ad::Tape&, const std::vector<ad::Var>& v) {
                           auto z = ad::relu(ad::conv2d(v[0], v[1], v[2]));
                           return ad::cross_entropy(ad::matmul(ad::reshape(z, {n, flat}), v[3]), onehot);
                         });
    }
    case 2: {  // fixed-kernel smoothing -> dense -> log-softmax weighted sum
      const std::size_t ch = dim(1, 2), side = dim(3, 6), k = dim(0, 2) * 2 + 1, c = dim(2, 4);
      const Tensor kernel = random_tensor({k, k}, rng);
      const Tensor weights = random_tensor({n, c}, rng);
      const std::size_t flat = ch * side * side;
      return check_graph("depthwise",
                         {random_tensor({n, ch, side, side}, rng), random_tensor({flat, c}, rng)},
                         [kernel, weights, n, flat](ad::Tape& t, const std::vector<ad::Var>& v) {
                           auto z = ad::reshape(ad::depthwise_conv2d(v[0], kernel), {n, flat});
                           return ad::sum(ad::mul(ad::log_softmax(ad::matmul(z, v[1])), t.constant(weights)));
                         });
    }
    case 3: {  // softmax -> log -> mean, with scale and sub
      const std::size_t c = dim(2, 6);
      return check_graph("softmax-log",
                         {random_tensor({n, c}, rng), random_tensor({n, c}, rng)},
                         [](ad::Tape&, const std::vector<ad::Var>& v) {
                           auto p = ad::softmax(ad::sub(ad::scale(v[0], 1.7), v[1]));
                           return ad::mean(ad::mul(ad::log(p), p));
                         });
    }
    default: {  // elementwise mix
      const std::size_t c = dim(1, 6);
      return check_graph("elementwise",
                         {random_tensor({n, c}, rng), random_tensor({n, c}, rng), random_tensor({c}, rng)},
                         [](ad::Tape&, const std::vector<ad::Var>& v) {
                           auto a = ad::add_bias(ad::mul(v[0], v[1]), v[2]);
                           return ad::sum(ad::add(ad::abs(a), ad::scale(ad::sub(v[0], v[1]), -0.5)));
                         });
    }
  }
}

}  // namespace mxfer::fixtures
