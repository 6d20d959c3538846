#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "mxfer/data.hpp"
#include "mxfer/model.hpp"

namespace mxfer {

/// Loss went non-finite during training.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum) : lr_(learning_rate), mu_(momentum) {}
  void step(std::span<double> params, std::span<const double> grad);

 private:
  double lr_, mu_;
  std::vector<double> velocity_;
};

class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps) {}
  void step(std::span<double> params, std::span<const double> grad);

 private:
  double lr_, b1_, b2_, eps_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

struct SgdConfig {
  std::size_t epochs = 10;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct PretrainConfig {
  SgdConfig backbone;
  /// Number of k-means clusters that serve as weak pretext labels.
  std::size_t pretext_clusters = 8;
  std::size_t kmeans_iterations = 25;
  /// Epochs of linear probing per task head on frozen features.
  SgdConfig probe;
};

/// Deterministic Lloyd k-means (k-means++ style seeding from `seed`); returns cluster ids.
std::vector<std::size_t> kmeans_labels(const Tensor& x, std::size_t k, std::size_t iterations,
                                       std::uint64_t seed);

/// theta_0: backbone trained on a weak-label pretext over all tasks' inputs, then one
/// linear probe head per task fit on the frozen features.
ParameterVector pretrain(const ModelSpec& spec, const std::vector<TaskDataset>& tasks,
                         const PretrainConfig& config);

/// theta_t: backbone + head `task.task` trained on the task's train split; other heads untouched.
ParameterVector finetune(const ModelSpec& spec, const ParameterVector& theta0,
                         const TaskDataset& task, const SgdConfig& config);

/// Top-1 accuracy of head `task` on `split`.
double evaluate_accuracy(const Classifier& model, const Split& split);
double evaluate_accuracy(const ModelSpec& spec, const ParameterVector& params, std::size_t task,
                         const Split& split);

}  // namespace mxfer
