#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mxfer/model.hpp"

namespace mxfer::merging {

enum class Method { WeightAverage, TaskArithmetic, Ties, AdaMerging };
enum class AdaMode { TaskWise, LayerWise };

/// Short method tag as used in reports ("WA", "TA", "TM", "AM"), with "+RS" when surgery applies.
std::string method_tag(Method method, bool surgery);
Method parse_method(const std::string& tag);

struct AdaMergeConfig {
  double learning_rate = 1e-3;
  std::size_t iterations = 300;
  double initial_lambda = 0.3;
  AdaMode mode = AdaMode::TaskWise;
};

struct SurgeryConfig {
  std::size_t rank = 8;
  std::size_t iterations = 500;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

struct MergeSpec {
  Method method = Method::TaskArithmetic;
  double lambda = 0.3;
  double trim_fraction = 0.2;
  AdaMergeConfig ada;
  std::optional<SurgeryConfig> surgery;

  /// Throws std::invalid_argument unless lambda > 0, 0 < trim <= 1, rank >= 1.
  void validate() const;
  std::string tag() const { return method_tag(method, surgery.has_value()); }
};

/// tau_t = theta_t - theta_0.
std::vector<double> task_vector(const ParameterVector& theta0, const ParameterVector& theta_t);

ParameterVector weight_average(std::span<const ParameterVector> models);
ParameterVector task_arithmetic(const ParameterVector& theta0, std::span<const ParameterVector> models,
                                double lambda);
/// Trim each task vector to its top `trim_fraction` coordinates by magnitude, elect the
/// per-coordinate sign of the summed kept values (a zero sum contributes nothing), then
/// average the kept values that agree with the elected sign.
ParameterVector ties_merge(const ParameterVector& theta0, std::span<const ParameterVector> models,
                           double lambda, double trim_fraction);

/// Backbone layers only (heads dropped).
ParameterVector backbone_part(const ParameterVector& params);
/// Full checkpoint from a merged backbone; head t is taken from models[t].
ParameterVector assemble(const ModelSpec& spec, const ParameterVector& backbone,
                         std::span<const ParameterVector> models);

/// Apply a pure parameter-space method to the backbones and reuse each task's own head.
ParameterVector merge_checkpoints(const ModelSpec& spec, const ParameterVector& theta0,
                                  std::span<const ParameterVector> models, const MergeSpec& merge);

struct AdaMergeResult {
  ParameterVector merged;
  /// lambdas[t][l]: one column for task-wise, one per backbone layer group for layer-wise.
  std::vector<std::vector<double>> lambdas;
  std::vector<std::string> layer_groups;
  /// Mean prediction entropy before each update and after the last one.
  std::vector<double> entropy_curve;
};

/// Mean over tasks of the mean softmax entropy of head t on `unlabeled[t]`.
double mean_prediction_entropy(const ModelSpec& spec, const ParameterVector& params,
                               std::span<const Tensor> unlabeled);

/// Learns task-wise or layer-wise scaling coefficients by full-batch Adam on the mean
/// prediction entropy of the merged model over unlabeled inputs (one batch per task).
AdaMergeResult ada_merge(const ModelSpec& spec, const ParameterVector& theta0,
                         std::span<const ParameterVector> models, std::span<const Tensor> unlabeled,
                         const AdaMergeConfig& config);

/// Low-rank representation-bias estimator: phi(z) = (z V) U, V: k x r, U: r x k.
struct Adapter {
  Tensor down;  // V
  Tensor up;    // U

  std::size_t parameter_count() const { return down.size() + up.size(); }
  /// z - phi(z) for a feature batch [N, k].
  Tensor debias(const Tensor& z) const;
  ad::Var debias(ad::Tape& tape, const ad::Var& z) const;
};

struct MergedModel {
  ModelSpec spec;
  ParameterVector theta;
  std::string method;
  /// One adapter per task iff surgery was applied.
  std::vector<Adapter> adapters;

  bool has_surgery() const { return !adapters.empty(); }
};

/// Mean over a batch of || (Z_mtl - phi(Z_mtl)) - Z_ind ||_1 per sample.
double surgery_objective(const Adapter& adapter, const Tensor& z_merged, const Tensor& z_individual);

/// Trains one adapter per task so that debiased merged features match the individual
/// fine-tuned model's features on that task's unlabeled inputs. Backbone untouched.
MergedModel train_surgery(const MergedModel& merged, std::span<const ParameterVector> individual,
                          std::span<const Tensor> unlabeled, const SurgeryConfig& config);

/// Task-t view of a merged model: features, optional debiasing, task head.
class MergedTaskModel : public Classifier {
 public:
  MergedTaskModel(std::shared_ptr<const MergedModel> merged, std::size_t task);

  std::size_t input_dim() const override { return merged_->spec.input_dim(); }
  std::size_t num_classes() const override { return merged_->spec.head_classes.at(task_); }
  Tensor logits(const Tensor& x) const override;
  ad::Var logits(ad::Tape& tape, const ad::Var& x) const override;

 private:
  std::shared_ptr<const MergedModel> merged_;
  std::size_t task_;
};

/// Class distribution of `merged` on task `task`.
Tensor forward_merged(const MergedModel& merged, const Tensor& x, std::size_t task);

}  // namespace mxfer::merging
