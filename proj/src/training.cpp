#include "mxfer/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

namespace mxfer {

void SgdMomentum::step(std::span<double> params, std::span<const double> grad) {
  if (velocity_.size() != params.size()) velocity_.assign(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity_[i] = mu_ * velocity_[i] + grad[i];
    params[i] -= lr_ * velocity_[i];
  }
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

std::vector<std::size_t> kmeans_labels(const Tensor& x, std::size_t k, std::size_t iterations,
                                       std::uint64_t seed) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (k == 0 || k > n) throw std::invalid_argument("kmeans: need 1 <= k <= n");
  std::mt19937_64 rng(seed);
  auto dist2 = [&](std::size_t i, const std::vector<double>& c) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = x.at(i, j) - c[j];
      s += diff * diff;
    }
    return s;
  };
  auto row = [&](std::size_t i) {
    return std::vector<double>(x.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                               x.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  };
  std::vector<std::vector<double>> centers{row(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng))};
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], dist2(i, centers.back()));
    std::discrete_distribution<std::size_t> pick(nearest.begin(), nearest.end());
    centers.push_back(row(pick(rng)));
  }
  std::vector<std::size_t> labels(n, 0);
  for (std::size_t it = 0; it < iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = dist2(i, centers[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double dc = dist2(i, centers[c]);
        if (dc < best_d) {
          best_d = dc;
          best = c;
        }
      }
      changed = changed || labels[i] != best;
      labels[i] = best;
    }
    if (!changed && it > 0) break;
    std::vector<std::vector<double>> sums(k, std::vector<double>(d, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[labels[i]];
      for (std::size_t j = 0; j < d; ++j) sums[labels[i]][j] += x.at(i, j);
    }
    for (std::size_t c = 0; c < k; ++c)
      if (counts[c] > 0)
        for (std::size_t j = 0; j < d; ++j) centers[c][j] = sums[c][j] / static_cast<double>(counts[c]);
  }
  return labels;
}

namespace {

void require_epochs(const SgdConfig& cfg) {
  if (cfg.epochs == 0) throw std::invalid_argument("training: epochs must be >= 1");
  if (cfg.batch_size == 0) throw std::invalid_argument("training: batch size must be >= 1");
}

// Minibatch SGD on head `head`'s cross-entropy; frozen layers get zero gradient.
void train_head(const ModelSpec& spec, ParameterVector& params, std::size_t head,
                const Split& data, const SgdConfig& cfg, bool train_backbone, const char* what) {
  require_epochs(cfg);
  const Layout& layout = params.layout();
  std::vector<bool> trainable(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& name = layout.entries()[i].name;
    trainable[i] = (train_backbone && is_backbone_layer(name)) || name == head_weight_name(head) ||
                   name == head_bias_name(head);
  }
  const std::size_t classes = spec.head_classes.at(head);
  SgdMomentum opt(cfg.learning_rate, cfg.momentum);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const Split batch =
          data.subset(std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(end)));
      try {
        ad::Tape tape;
        BoundParameters bound = bind(tape, params, true);
        ad::Var x = tape.constant(batch.x);
        ad::Var loss = ad::cross_entropy(head_logits(spec, bound, features(spec, bound, x), head),
                                         ad::one_hot(batch.y, classes));
        ParameterVector grad = gradient_vector(layout, bound, tape.backward(loss));
        for (std::size_t i = 0; i < layout.size(); ++i)
          if (!trainable[i]) std::fill(grad.slice(i).begin(), grad.slice(i).end(), 0.0);
        opt.step(params.data(), grad.data());
        if (!std::all_of(params.data().begin(), params.data().end(),
                         [](double v) { return std::isfinite(v); })) {
          throw NumericError("parameters became non-finite");
        }
      } catch (const NumericError& e) {
        throw TrainingError(std::string(what) + " diverged at epoch " + std::to_string(epoch + 1) +
                            ": " + e.what());
      }
    }
  }
}

}  // namespace

ParameterVector pretrain(const ModelSpec& spec, const std::vector<TaskDataset>& tasks,
                         const PretrainConfig& config) {
  require_epochs(config.backbone);
  if (tasks.size() != spec.task_count()) {
    throw std::invalid_argument("pretrain: " + std::to_string(tasks.size()) + " tasks for " +
                                std::to_string(spec.task_count()) + " heads");
  }
  // Mixture of all tasks' training inputs with k-means cluster ids as weak labels.
  std::size_t total = 0;
  for (const auto& t : tasks) total += t.train.size();
  Split mixed;
  mixed.x = Tensor({total, spec.input_dim()});
  std::size_t at = 0;
  for (const auto& t : tasks) {
    std::copy(t.train.x.data().begin(), t.train.x.data().end(),
              mixed.x.data().begin() + static_cast<std::ptrdiff_t>(at * spec.input_dim()));
    at += t.train.size();
  }
  mixed.y = kmeans_labels(mixed.x, config.pretext_clusters, config.kmeans_iterations,
                          config.backbone.seed);

  ModelSpec pretext = spec;
  pretext.head_classes.push_back(config.pretext_clusters);
  ParameterVector full = init_parameters(pretext, config.backbone.seed);
  train_head(pretext, full, spec.task_count(), mixed, config.backbone, true, "pretraining");

  // Drop the pretext head, keep the backbone and the (random) task heads.
  ParameterVector theta0(make_layout(spec));
  for (std::size_t i = 0; i < theta0.layout().size(); ++i)
    theta0.set(i, full.tensor(theta0.layout().entries()[i].name));

  for (const auto& t : tasks) {
    SgdConfig probe = config.probe;
    probe.seed = config.probe.seed + t.task;
    train_head(spec, theta0, t.task, t.train, probe, false, "probe fitting");
  }
  return theta0;
}

ParameterVector finetune(const ModelSpec& spec, const ParameterVector& theta0,
                         const TaskDataset& task, const SgdConfig& config) {
  require_epochs(config);
  require_compatible(make_layout(spec), theta0.layout());
  ParameterVector theta = theta0;
  train_head(spec, theta, task.task, task.train, config, true, "fine-tuning");
  return theta;
}

double evaluate_accuracy(const Classifier& model, const Split& split) {
  if (split.size() == 0) throw std::invalid_argument("evaluate_accuracy: empty split");
  const auto pred = model.predict(split.x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == split.y[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double evaluate_accuracy(const ModelSpec& spec, const ParameterVector& params, std::size_t task,
                         const Split& split) {
  return evaluate_accuracy(TaskModel(spec, std::make_shared<const ParameterVector>(params), task),
                           split);
}

}  // namespace mxfer
