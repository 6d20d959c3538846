#include "mxfer/merging.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "mxfer/training.hpp"

namespace mxfer::merging {

std::string method_tag(Method method, bool surgery) {
  std::string tag;
  switch (method) {
    case Method::WeightAverage: tag = "WA"; break;
    case Method::TaskArithmetic: tag = "TA"; break;
    case Method::Ties: tag = "TM"; break;
    case Method::AdaMerging: tag = "AM"; break;
  }
  return surgery ? tag + "+RS" : tag;
}

Method parse_method(const std::string& tag) {
  std::string base = tag;
  if (base.size() > 3 && base.ends_with("+RS")) base.resize(base.size() - 3);
  if (base == "WA") return Method::WeightAverage;
  if (base == "TA") return Method::TaskArithmetic;
  if (base == "TM" || base == "TIES") return Method::Ties;
  if (base == "AM") return Method::AdaMerging;
  throw std::invalid_argument("unknown merging method '" + tag + "'");
}

void MergeSpec::validate() const {
  if (!(lambda > 0.0)) throw std::invalid_argument("merge: lambda must be > 0");
  if (!(trim_fraction > 0.0 && trim_fraction <= 1.0))
    throw std::invalid_argument("merge: trim fraction must be in (0, 1]");
  if (surgery && surgery->rank == 0) throw std::invalid_argument("merge: surgery rank must be >= 1");
  if (surgery && surgery->batch_size == 0)
    throw std::invalid_argument("merge: surgery batch size must be >= 1");
}

namespace {

void require_models(std::span<const ParameterVector> models, const Layout& layout) {
  if (models.empty()) throw std::invalid_argument("merge: no models given");
  for (const auto& m : models) require_compatible(layout, m.layout());
}

}  // namespace

std::vector<double> task_vector(const ParameterVector& theta0, const ParameterVector& theta_t) {
  require_compatible(theta0.layout(), theta_t.layout());
  std::vector<double> tau(theta0.size());
  for (std::size_t i = 0; i < tau.size(); ++i) tau[i] = theta_t.values()[i] - theta0.values()[i];
  return tau;
}

ParameterVector weight_average(std::span<const ParameterVector> models) {
  if (models.empty()) throw std::invalid_argument("merge: no models given");
  require_models(models, models.front().layout());
  ParameterVector out(models.front().layout());
  for (const auto& m : models)
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += m.values()[i];
  for (double& v : out.data()) v /= static_cast<double>(models.size());
  return out;
}

ParameterVector task_arithmetic(const ParameterVector& theta0, std::span<const ParameterVector> models,
                                double lambda) {
  require_models(models, theta0.layout());
  ParameterVector out = theta0;
  for (const auto& m : models)
    for (std::size_t i = 0; i < out.size(); ++i)
      out.data()[i] += lambda * (m.values()[i] - theta0.values()[i]);
  return out;
}

ParameterVector ties_merge(const ParameterVector& theta0, std::span<const ParameterVector> models,
                           double lambda, double trim_fraction) {
  require_models(models, theta0.layout());
  if (!(trim_fraction > 0.0 && trim_fraction <= 1.0))
    throw std::invalid_argument("ties: trim fraction must be in (0, 1]");
  const std::size_t n = theta0.size();
  const auto keep = std::min(
      n, static_cast<std::size_t>(std::ceil(trim_fraction * static_cast<double>(n) - 1e-9)));

  std::vector<std::vector<double>> trimmed;
  for (const auto& m : models) {
    std::vector<double> tau = task_vector(theta0, m);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    // Larger magnitude first, lower index breaks ties.
    auto by_magnitude = [&](std::size_t a, std::size_t b) {
      const double ma = std::abs(tau[a]), mb = std::abs(tau[b]);
      return ma != mb ? ma > mb : a < b;
    };
    if (keep < n) {
      std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                       by_magnitude);
      for (auto it = order.begin() + static_cast<std::ptrdiff_t>(keep); it != order.end(); ++it)
        tau[*it] = 0.0;
    }
    trimmed.push_back(std::move(tau));
  }

  ParameterVector out = theta0;
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (const auto& tau : trimmed) total += tau[i];
    if (total == 0.0) continue;
    double agree = 0.0;
    std::size_t count = 0;
    for (const auto& tau : trimmed) {
      if ((total > 0.0 && tau[i] > 0.0) || (total < 0.0 && tau[i] < 0.0)) {
        agree += tau[i];
        ++count;
      }
    }
    if (count > 0) out.data()[i] += lambda * agree / static_cast<double>(count);
  }
  return out;
}

ParameterVector backbone_part(const ParameterVector& params) {
  std::vector<LayerEntry> entries;
  std::vector<Tensor> layers;
  for (std::size_t i = 0; i < params.layout().size(); ++i) {
    const auto& e = params.layout().entries()[i];
    if (!is_backbone_layer(e.name)) continue;
    entries.push_back(e);
    layers.push_back(params.tensor(i));
  }
  return ParameterVector::flatten(Layout(std::move(entries)), layers);
}

ParameterVector assemble(const ModelSpec& spec, const ParameterVector& backbone,
                         std::span<const ParameterVector> models) {
  if (models.size() != spec.task_count())
    throw std::invalid_argument("assemble: " + std::to_string(models.size()) + " models for " +
                                std::to_string(spec.task_count()) + " tasks");
  const Layout layout = make_layout(spec);
  ParameterVector out(layout);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& name = layout.entries()[i].name;
    if (is_backbone_layer(name)) out.set(i, backbone.tensor(name));
  }
  for (std::size_t t = 0; t < models.size(); ++t) {
    out.set(head_weight_name(t), models[t].tensor(head_weight_name(t)));
    out.set(head_bias_name(t), models[t].tensor(head_bias_name(t)));
  }
  return out;
}

ParameterVector merge_checkpoints(const ModelSpec& spec, const ParameterVector& theta0,
                                  std::span<const ParameterVector> models, const MergeSpec& merge) {
  merge.validate();
  require_models(models, make_layout(spec));
  std::vector<ParameterVector> backbones;
  for (const auto& m : models) backbones.push_back(backbone_part(m));
  const ParameterVector b0 = backbone_part(theta0);
  ParameterVector merged;
  switch (merge.method) {
    case Method::WeightAverage: merged = weight_average(backbones); break;
    case Method::TaskArithmetic: merged = task_arithmetic(b0, backbones, merge.lambda); break;
    case Method::Ties: merged = ties_merge(b0, backbones, merge.lambda, merge.trim_fraction); break;
    case Method::AdaMerging:
      throw std::invalid_argument("merge_checkpoints: AdaMerging needs unlabeled data, use ada_merge");
  }
  return assemble(spec, merged, models);
}

namespace {

// Mean softmax entropy of head `task`, recorded on `tape`.
ad::Var entropy_loss(const ModelSpec& spec, const BoundParameters& bound, ad::Tape& tape,
                     const Tensor& x, std::size_t task) {
  ad::Var logits = head_logits(spec, bound, features(spec, bound, tape.constant(x)), task);
  ad::Var plogp = ad::mul(ad::softmax(logits), ad::log_softmax(logits));
  return ad::scale(ad::sum(plogp), -1.0 / static_cast<double>(x.dim(0)));
}

}  // namespace

double mean_prediction_entropy(const ModelSpec& spec, const ParameterVector& params,
                               std::span<const Tensor> unlabeled) {
  if (unlabeled.size() != spec.task_count())
    throw std::invalid_argument("entropy: one input batch per task required");
  double total = 0.0;
  for (std::size_t t = 0; t < unlabeled.size(); ++t) {
    const Tensor logp = kernels::log_softmax_rows(head_logits(spec, params, features(spec, params, unlabeled[t]), t));
    double h = 0.0;
    for (double v : logp.data()) h -= std::exp(v) * v;
    total += h / static_cast<double>(unlabeled[t].dim(0));
  }
  return total / static_cast<double>(unlabeled.size());
}

AdaMergeResult ada_merge(const ModelSpec& spec, const ParameterVector& theta0,
                         std::span<const ParameterVector> models, std::span<const Tensor> unlabeled,
                         const AdaMergeConfig& config) {
  const Layout layout = make_layout(spec);
  require_compatible(layout, theta0.layout());
  require_models(models, layout);
  if (models.size() != spec.task_count() || unlabeled.size() != spec.task_count())
    throw std::invalid_argument("ada_merge: need one model and one input batch per task");

  // Coefficient column of every backbone layout entry; heads get none.
  std::vector<std::string> groups;
  std::vector<std::optional<std::size_t>> column(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& name = layout.entries()[i].name;
    if (!is_backbone_layer(name)) continue;
    if (config.mode == AdaMode::TaskWise) {
      column[i] = 0;
      continue;
    }
    const std::string g = layer_group(name);
    auto it = std::find(groups.begin(), groups.end(), g);
    if (it == groups.end()) {
      groups.push_back(g);
      it = groups.end() - 1;
    }
    column[i] = static_cast<std::size_t>(it - groups.begin());
  }
  if (config.mode == AdaMode::TaskWise) groups = {"all"};
  const std::size_t T = models.size(), L = groups.size();

  std::vector<std::vector<double>> taus;
  for (const auto& m : models) taus.push_back(task_vector(theta0, m));
  std::vector<double> lambdas(T * L, config.initial_lambda);

  auto build = [&]() {
    ParameterVector p = theta0;
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (!column[i]) continue;
      auto dst = p.slice(i);
      const std::size_t off = layout.offset(i);
      for (std::size_t t = 0; t < T; ++t) {
        const double lam = lambdas[t * L + *column[i]];
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += lam * taus[t][off + j];
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      p.set(head_weight_name(t), models[t].tensor(head_weight_name(t)));
      p.set(head_bias_name(t), models[t].tensor(head_bias_name(t)));
    }
    return p;
  };

  AdaMergeResult result;
  Adam opt(config.learning_rate);
  ParameterVector current = build();
  for (std::size_t it = 0; it < config.iterations; ++it) {
    ad::Tape tape;
    BoundParameters bound = bind(tape, current, true);
    ad::Var loss = entropy_loss(spec, bound, tape, unlabeled[0], 0);
    for (std::size_t t = 1; t < T; ++t) loss = ad::add(loss, entropy_loss(spec, bound, tape, unlabeled[t], t));
    loss = ad::scale(loss, 1.0 / static_cast<double>(T));
    result.entropy_curve.push_back(loss.value()[0]);
    const ParameterVector g = gradient_vector(layout, bound, tape.backward(loss));
    // d loss / d lambda[t, l] = <g restricted to group l, tau_t restricted to group l>
    std::vector<double> grad(T * L, 0.0);
    for (std::size_t i = 0; i < layout.size(); ++i) {
      if (!column[i]) continue;
      const auto gi = g.slice(i);
      const std::size_t off = layout.offset(i);
      for (std::size_t t = 0; t < T; ++t) {
        double dot = 0.0;
        for (std::size_t j = 0; j < gi.size(); ++j) dot += gi[j] * taus[t][off + j];
        grad[t * L + *column[i]] += dot;
      }
    }
    opt.step(lambdas, grad);
    current = build();
  }
  result.entropy_curve.push_back(mean_prediction_entropy(spec, current, unlabeled));
  result.merged = std::move(current);
  result.layer_groups = groups;
  for (std::size_t t = 0; t < T; ++t)
    result.lambdas.emplace_back(lambdas.begin() + static_cast<std::ptrdiff_t>(t * L),
                                lambdas.begin() + static_cast<std::ptrdiff_t>((t + 1) * L));
  return result;
}

Tensor Adapter::debias(const Tensor& z) const {
  return kernels::sub(z, kernels::matmul(kernels::matmul(z, down), up));
}

ad::Var Adapter::debias(ad::Tape& tape, const ad::Var& z) const {
  return ad::sub(z, ad::matmul(ad::matmul(z, tape.constant(down)), tape.constant(up)));
}

double surgery_objective(const Adapter& adapter, const Tensor& z_merged, const Tensor& z_individual) {
  const Tensor diff = kernels::sub(adapter.debias(z_merged), z_individual);
  double s = 0.0;
  for (double v : diff.data()) s += std::abs(v);
  return s / static_cast<double>(z_merged.dim(0));
}

MergedModel train_surgery(const MergedModel& merged, std::span<const ParameterVector> individual,
                          std::span<const Tensor> unlabeled, const SurgeryConfig& config) {
  const ModelSpec& spec = merged.spec;
  const std::size_t T = spec.task_count();
  if (individual.size() != T || unlabeled.size() != T)
    throw std::invalid_argument("surgery: need one individual model and one input batch per task");
  if (config.rank == 0 || config.batch_size == 0)
    throw std::invalid_argument("surgery: rank and batch size must be >= 1");
  const std::size_t k = spec.feature_dim();

  MergedModel out = merged;
  out.adapters.clear();
  for (std::size_t t = 0; t < T; ++t) {
    const Tensor zm = features(spec, merged.theta, unlabeled[t]);
    const Tensor zi = features(spec, individual[t], unlabeled[t]);
    const std::size_t n = zm.dim(0);
    if (n == 0) throw std::invalid_argument("surgery: empty input batch");

    std::mt19937_64 rng(config.seed * 1000003 + t);
    std::normal_distribution<double> init(0.0, 1.0 / std::sqrt(static_cast<double>(k)));
    Adapter a{Tensor({k, config.rank}), Tensor({config.rank, k})};
    for (double& v : a.down.data()) v = init(rng);

    Adam opt_down(config.learning_rate), opt_up(config.learning_rate);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    const std::size_t b = std::min(config.batch_size, n);
    for (std::size_t it = 0; it < config.iterations; ++it) {
      std::vector<std::size_t> idx(b);
      for (auto& i : idx) i = pick(rng);
      Tensor bm({b, k}), bi({b, k});
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t c = 0; c < k; ++c) {
          bm.at(r, c) = zm.at(idx[r], c);
          bi.at(r, c) = zi.at(idx[r], c);
        }
      ad::Tape tape;
      ad::Var v = tape.leaf(a.down), u = tape.leaf(a.up), z = tape.constant(bm);
      ad::Var debiased = ad::sub(z, ad::matmul(ad::matmul(z, v), u));
      ad::Var loss = ad::scale(ad::sum(ad::abs(ad::sub(debiased, tape.constant(bi)))),
                               1.0 / static_cast<double>(b));
      const auto grads = tape.backward(loss);
      const Tensor gv = grads.of(v), gu = grads.of(u);
      opt_down.step(a.down.data(), gv.data());
      opt_up.step(a.up.data(), gu.data());
    }
    out.adapters.push_back(std::move(a));
  }
  if (!out.method.ends_with("+RS")) out.method += "+RS";
  return out;
}

MergedTaskModel::MergedTaskModel(std::shared_ptr<const MergedModel> merged, std::size_t task)
    : merged_(std::move(merged)), task_(task) {
  if (!merged_) throw std::invalid_argument("MergedTaskModel: null model");
  if (task_ >= merged_->spec.task_count())
    throw std::out_of_range("MergedTaskModel: task " + std::to_string(task_) + " out of range");
}

Tensor MergedTaskModel::logits(const Tensor& x) const {
  Tensor z = features(merged_->spec, merged_->theta, x);
  if (merged_->has_surgery()) z = merged_->adapters.at(task_).debias(z);
  return head_logits(merged_->spec, merged_->theta, z, task_);
}

ad::Var MergedTaskModel::logits(ad::Tape& tape, const ad::Var& x) const {
  BoundParameters bound = bind(tape, merged_->theta, false);
  ad::Var z = features(merged_->spec, bound, x);
  if (merged_->has_surgery()) z = merged_->adapters.at(task_).debias(tape, z);
  return head_logits(merged_->spec, bound, z, task_);
}

Tensor forward_merged(const MergedModel& merged, const Tensor& x, std::size_t task) {
  return MergedTaskModel(std::make_shared<const MergedModel>(merged), task).probabilities(x);
}

}  // namespace mxfer::merging
