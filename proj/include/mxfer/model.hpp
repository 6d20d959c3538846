#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mxfer/autodiff.hpp"
#include "mxfer/parameters.hpp"

namespace mxfer {

enum class Architecture { Mlp, SmallConv };

std::string to_string(Architecture arch);
Architecture parse_architecture(const std::string& name);

/// Shared-backbone classifier family: backbone -> k features -> one linear head per task.
/// Inputs are single-channel square images flattened to D = side * side.
struct ModelSpec {
  Architecture architecture = Architecture::Mlp;
  std::size_t input_side = 8;
  std::vector<std::size_t> hidden = {128, 64};
  std::size_t conv_channels = 4;
  std::vector<std::size_t> head_classes;

  std::size_t input_dim() const { return input_side * input_side; }
  std::size_t feature_dim() const { return hidden.back(); }
  std::size_t task_count() const { return head_classes.size(); }
};

Layout make_layout(const ModelSpec& spec);
/// He-initialized parameters, deterministic in `seed`.
ParameterVector init_parameters(const ModelSpec& spec, std::uint64_t seed);

std::string head_weight_name(std::size_t task);
std::string head_bias_name(std::size_t task);
/// True for layers shared by all tasks (everything except the per-task heads).
bool is_backbone_layer(const std::string& name);
/// Layer group of an entry: the name without its trailing ".weight"/".bias".
std::string layer_group(const std::string& name);

/// Penultimate features [N, k] (no tape).
Tensor features(const ModelSpec& spec, const ParameterVector& params, const Tensor& x);
/// Head logits [N, c_t] from features (no tape).
Tensor head_logits(const ModelSpec& spec, const ParameterVector& params, const Tensor& feats,
                   std::size_t task);

/// Parameters bound onto a tape, one Var per layout entry.
struct BoundParameters {
  std::vector<ad::Var> layers;
};

BoundParameters bind(ad::Tape& tape, const ParameterVector& params, bool requires_grad);
ad::Var features(const ModelSpec& spec, const BoundParameters& params, const ad::Var& x);
ad::Var head_logits(const ModelSpec& spec, const BoundParameters& params, const ad::Var& feats,
                    std::size_t task);
/// Flattens per-layer gradients back into a vector with `layout`.
ParameterVector gradient_vector(const Layout& layout, const BoundParameters& params,
                                const ad::Gradients& grads);

/// A differentiable single-task classifier: the unit attacks and metrics work on.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual Tensor logits(const Tensor& x) const = 0;
  virtual ad::Var logits(ad::Tape& tape, const ad::Var& x) const = 0;

  Tensor probabilities(const Tensor& x) const;
  std::vector<std::size_t> predict(const Tensor& x) const;
};

/// Backbone + head `task` of one checkpoint.
class TaskModel : public Classifier {
 public:
  TaskModel(ModelSpec spec, std::shared_ptr<const ParameterVector> params, std::size_t task);

  std::size_t input_dim() const override { return spec_.input_dim(); }
  std::size_t num_classes() const override { return spec_.head_classes.at(task_); }
  Tensor logits(const Tensor& x) const override;
  ad::Var logits(ad::Tape& tape, const ad::Var& x) const override;

  const ModelSpec& spec() const { return spec_; }
  const ParameterVector& parameters() const { return *params_; }
  std::size_t task() const { return task_; }

 private:
  ModelSpec spec_;
  std::shared_ptr<const ParameterVector> params_;
  std::size_t task_;
};

}  // namespace mxfer
