#include "mxfer/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace mxfer {

namespace {

std::string backbone_weight(std::size_t i) { return "backbone." + std::to_string(i) + ".weight"; }
std::string backbone_bias(std::size_t i) { return "backbone." + std::to_string(i) + ".bias"; }

void require_task(const ModelSpec& spec, std::size_t task) {
  if (task >= spec.task_count()) {
    throw std::out_of_range("unknown task head " + std::to_string(task) + " (model has " +
                            std::to_string(spec.task_count()) + ")");
  }
}

std::size_t backbone_input(const ModelSpec& spec) {
  return spec.architecture == Architecture::SmallConv ? spec.conv_channels * spec.input_dim()
                                                      : spec.input_dim();
}

}  // namespace

std::string to_string(Architecture arch) { return arch == Architecture::Mlp ? "mlp" : "smallconv"; }

Architecture parse_architecture(const std::string& name) {
  if (name == "mlp") return Architecture::Mlp;
  if (name == "smallconv") return Architecture::SmallConv;
  throw std::invalid_argument("unknown architecture '" + name + "'");
}

std::string head_weight_name(std::size_t task) { return "head." + std::to_string(task) + ".weight"; }
std::string head_bias_name(std::size_t task) { return "head." + std::to_string(task) + ".bias"; }

bool is_backbone_layer(const std::string& name) { return name.rfind("head.", 0) != 0 && name.rfind("rs.", 0) != 0; }

std::string layer_group(const std::string& name) {
  const auto dot = name.rfind('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

Layout make_layout(const ModelSpec& spec) {
  if (spec.hidden.empty()) throw std::invalid_argument("model spec needs at least one hidden layer");
  if (spec.head_classes.empty()) throw std::invalid_argument("model spec needs at least one task head");
  std::vector<LayerEntry> entries;
  if (spec.architecture == Architecture::SmallConv) {
    entries.push_back({"conv.weight", {spec.conv_channels, 1, 3, 3}});
    entries.push_back({"conv.bias", {spec.conv_channels}});
  }
  std::size_t in = backbone_input(spec);
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    entries.push_back({backbone_weight(i), {in, spec.hidden[i]}});
    entries.push_back({backbone_bias(i), {spec.hidden[i]}});
    in = spec.hidden[i];
  }
  for (std::size_t t = 0; t < spec.head_classes.size(); ++t) {
    entries.push_back({head_weight_name(t), {spec.feature_dim(), spec.head_classes[t]}});
    entries.push_back({head_bias_name(t), {spec.head_classes[t]}});
  }
  return Layout(std::move(entries));
}

ParameterVector init_parameters(const ModelSpec& spec, std::uint64_t seed) {
  ParameterVector params(make_layout(spec));
  std::mt19937_64 rng(seed);
  const auto& entries = params.layout().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Shape& shape = entries[i].shape;
    if (shape.size() == 1) continue;  // biases start at zero
    const std::size_t fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (double& v : params.slice(i)) v = dist(rng);
  }
  return params;
}

Tensor features(const ModelSpec& spec, const ParameterVector& params, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != spec.input_dim()) {
    throw ShapeError("features: expected input [N," + std::to_string(spec.input_dim()) + "], got " +
                     shape_string(x.shape()));
  }
  Tensor h = x;
  if (spec.architecture == Architecture::SmallConv) {
    const std::size_t n = x.dim(0), s = spec.input_side;
    h = kernels::relu(kernels::conv2d(x.reshaped({n, 1, s, s}), params.tensor("conv.weight"),
                                      params.tensor("conv.bias")));
    h = h.reshaped({n, backbone_input(spec)});
  }
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    h = kernels::relu(kernels::add_bias(kernels::matmul(h, params.tensor(backbone_weight(i))),
                                        params.tensor(backbone_bias(i))));
  }
  return h;
}

Tensor head_logits(const ModelSpec& spec, const ParameterVector& params, const Tensor& feats,
                   std::size_t task) {
  require_task(spec, task);
  return kernels::add_bias(kernels::matmul(feats, params.tensor(head_weight_name(task))),
                           params.tensor(head_bias_name(task)));
}

BoundParameters bind(ad::Tape& tape, const ParameterVector& params, bool requires_grad) {
  BoundParameters out;
  out.layers.reserve(params.layout().size());
  for (std::size_t i = 0; i < params.layout().size(); ++i)
    out.layers.push_back(tape.leaf(params.tensor(i), requires_grad));
  return out;
}


ad::Var features(const ModelSpec& spec, const BoundParameters& params, const ad::Var& x) {
  const Layout layout = make_layout(spec);
  auto get = [&](const std::string& name) { return params.layers.at(layout.index(name)); };
  ad::Var h = x;
  if (spec.architecture == Architecture::SmallConv) {
    const std::size_t n = x.shape()[0], s = spec.input_side;
    h = ad::relu(ad::conv2d(ad::reshape(x, {n, 1, s, s}), get("conv.weight"), get("conv.bias")));
    h = ad::reshape(h, {n, backbone_input(spec)});
  }
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    h = ad::relu(ad::add_bias(ad::matmul(h, get(backbone_weight(i))), get(backbone_bias(i))));
  }
  return h;
}

ad::Var head_logits(const ModelSpec& spec, const BoundParameters& params, const ad::Var& feats,
                    std::size_t task) {
  require_task(spec, task);
  const Layout layout = make_layout(spec);
  return ad::add_bias(ad::matmul(feats, params.layers.at(layout.index(head_weight_name(task)))),
                      params.layers.at(layout.index(head_bias_name(task))));
}

ParameterVector gradient_vector(const Layout& layout, const BoundParameters& params,
                                const ad::Gradients& grads) {
  ParameterVector out(layout);
  for (std::size_t i = 0; i < layout.size(); ++i) out.set(i, grads.of(params.layers.at(i)));
  return out;
}

Tensor Classifier::probabilities(const Tensor& x) const { return kernels::softmax_rows(logits(x)); }

std::vector<std::size_t> Classifier::predict(const Tensor& x) const {
  return kernels::argmax_rows(logits(x));
}

TaskModel::TaskModel(ModelSpec spec, std::shared_ptr<const ParameterVector> params, std::size_t task)
    : spec_(std::move(spec)), params_(std::move(params)), task_(task) {
  require_task(spec_, task_);
  require_compatible(make_layout(spec_), params_->layout());
}

Tensor TaskModel::logits(const Tensor& x) const {
  return head_logits(spec_, *params_, features(spec_, *params_, x), task_);
}

ad::Var TaskModel::logits(ad::Tape& tape, const ad::Var& x) const {
  BoundParameters bound = bind(tape, *params_, false);
  return head_logits(spec_, bound, features(spec_, bound, x), task_);
}

}  // namespace mxfer
