#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "mxfer/autodiff.hpp"
#include "mxfer/model.hpp"

namespace mxfer::fixtures {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

/// logits = x W + b, W: [D, C].
class LinearModel : public Classifier {
 public:
  LinearModel(Tensor w, Tensor b) : w_(std::move(w)), b_(std::move(b)) {}
  std::size_t input_dim() const override { return w_.dim(0); }
  std::size_t num_classes() const override { return w_.dim(1); }
  Tensor logits(const Tensor& x) const override { return kernels::add_bias(kernels::matmul(x, w_), b_); }
  ad::Var logits(ad::Tape& tape, const ad::Var& x) const override {
    return ad::add_bias(ad::matmul(x, tape.constant(w_)), tape.constant(b_));
  }
  const Tensor& weights() const { return w_; }

 private:
  Tensor w_, b_;
};

/// Uniform inputs in [0, 1].
inline Tensor random_inputs(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  return random_tensor({n, d}, rng, 0.0, 1.0);
}

}  // namespace mxfer::fixtures
