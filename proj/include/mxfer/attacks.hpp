#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mxfer/model.hpp"

namespace mxfer::attacks {

enum class Method { Fgsm, IFgsm, Pgd, NiFgsm, TiFgsm, Square };

std::string to_string(Method method);
Method parse_method(const std::string& name);
const std::vector<Method>& all_methods();

class AttackConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct AttackSpec {
  Method method = Method::NiFgsm;
  double epsilon = 16.0 / 255.0;
  double alpha = 1.6 / 255.0;
  std::size_t iterations = 10;
  /// NI-FGSM momentum decay.
  double momentum = 1.0;
  /// NI-FGSM: evaluate the gradient at the Nesterov lookahead point.
  bool lookahead = true;
  /// PGD: uniform start inside the epsilon box.
  bool random_init = true;
  /// TI-FGSM Gaussian kernel size (odd); sigma = k / sqrt(3).
  std::size_t kernel_size = 3;
  std::size_t query_budget = 500;
  double square_fraction = 0.8;
  bool targeted = false;
  std::uint64_t seed = 0;

  /// Defaults for single-channel digit data (epsilon 0.3, alpha 0.03).
  static AttackSpec mnist(Method method);
  /// Throws AttackConfigError on a violated invariant (epsilon = 0 is allowed and yields x).
  void validate() const;
};

struct AdvBatch {
  Tensor clean;
  Tensor adversarial;
  /// Source labels (untargeted) or target labels (targeted) the loss was built from.
  std::vector<std::size_t> labels;
  std::string surrogate;
  AttackSpec spec;
  /// Square only: model evaluations spent.
  std::size_t queries = 0;
};

/// Normalized Gaussian kernel [k, k] with sigma = k / sqrt(3).
Tensor gaussian_kernel(std::size_t size);

/// Per-sample cross-entropy; the only view of a model the query attack gets.
class LossOracle {
 public:
  virtual ~LossOracle() = default;
  virtual std::size_t input_dim() const = 0;
  /// One query: loss of every row of x against `labels`.
  virtual std::vector<double> losses(const Tensor& x, const std::vector<std::size_t>& labels) const = 0;
};

/// Forward-only wrapper around a classifier.
class ClassifierOracle : public LossOracle {
 public:
  explicit ClassifierOracle(const Classifier& model) : model_(model) {}
  std::size_t input_dim() const override { return model_.input_dim(); }
  std::vector<double> losses(const Tensor& x, const std::vector<std::size_t>& labels) const override;

 private:
  const Classifier& model_;
};

/// Sum of per-sample cross-entropies and its input gradient [N, D].
Tensor input_gradient(const Classifier& model, const Tensor& x, const std::vector<std::size_t>& labels);

AdvBatch fgsm(const Classifier& model, const Tensor& x, const std::vector<std::size_t>& y,
              const AttackSpec& spec);
AdvBatch ifgsm(const Classifier& model, const Tensor& x, const std::vector<std::size_t>& y,
               const AttackSpec& spec);
AdvBatch pgd(const Classifier& model, const Tensor& x, const std::vector<std::size_t>& y,
             const AttackSpec& spec);
AdvBatch nifgsm(const Classifier& model, const Tensor& x, const std::vector<std::size_t>& y,
                const AttackSpec& spec);
AdvBatch tifgsm(const Classifier& model, const Tensor& x, const std::vector<std::size_t>& y,
                const AttackSpec& spec);
/// Side length of `input_side`-wide images; patches of +-epsilon accepted iff the loss rises.
AdvBatch square_attack(const LossOracle& oracle, std::size_t input_side, const Tensor& x,
                       const std::vector<std::size_t>& y, const AttackSpec& spec);

/// Square side for query `i`: round(sqrt(p) * side), halved at 10%, 50%, 80% of the budget.
std::size_t square_side(std::size_t input_side, double fraction, std::size_t query, std::size_t budget);

/// Uniform random labels differing from `avoid`, deterministic in seed.
std::vector<std::size_t> random_targets(const std::vector<std::size_t>& avoid, std::size_t classes,
                                        std::uint64_t seed);

/// Dispatches on spec.method. Without labels the model's clean predictions are used
/// (or, when targeted, random targets differing from them). Chunks of `chunk_size`
/// rows run on `workers` threads; chunk c uses seed ^ c, so results do not depend on
/// the worker count.
AdvBatch run_attack(const Classifier& model, const Tensor& x, const AttackSpec& spec,
                    const std::optional<std::vector<std::size_t>>& labels = std::nullopt,
                    std::size_t workers = 1, std::size_t chunk_size = 64);

}  // namespace mxfer::attacks
